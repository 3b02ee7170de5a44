fn main() {
    std::process::exit(igdehaze::cli::main_with(std::env::args_os()));
}
