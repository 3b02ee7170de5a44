mod common;

use common::{perturbed_params, random};
use igdehaze::autograd::{ConvSpec, PadMode, PoolKind, PoolScope};
use igdehaze::haze::{apply_haze, depth_map, invert_haze, transmission, Airlight, DepthKind, HazeScene};
use igdehaze::metrics::{entropy, psnr, ssim};
use igdehaze::network::{
    checkpoint, cnn_layer, cpa, init_params, model_forward, predict, transformer_layer, Bound,
};
use igdehaze::rng::stream;
use igdehaze::{Graph, ModelConfig, ParamStore, Shape, Tensor, Variant};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn tensor(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    random(shape, seed, lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), scale in 0.1f64..50.0, w in 1usize..9) {
        let mut g = Graph::new();
        let x = g.input(tensor(Shape::new(2, 3, 4, w), seed, -scale, scale));
        let y = g.softmax(x, 3).unwrap();
        for row in g.value(y).data().chunks(w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(seed in any::<u64>()) {
        let mut g = Graph::new();
        let x = g.input(tensor(Shape::new(1, 2, 5, 5), seed, -30.0, 30.0));
        let y = g.sigmoid(x).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn max_pool_routes_all_gradient_to_argmax(seed in any::<u64>(), global in any::<bool>()) {
        let mut g = Graph::new();
        let x = g.param(tensor(Shape::new(2, 3, 6, 6), seed, -2.0, 2.0));
        let scope = if global { PoolScope::Global } else { PoolScope::Window { k: 2, stride: 2 } };
        let y = g.pool2d(x, PoolKind::Max, scope).unwrap();
        let r = g.input(tensor(g.shape(y), seed ^ 1, -1.0, 1.0));
        let p = g.mul(y, r).unwrap();
        let s = g.sum(p).unwrap();
        let out_sum: f64 = g.value(r).data().iter().sum();
        g.backward(s).unwrap();
        let gx = g.grad(x).unwrap();
        prop_assert!((gx.iter().sum::<f64>() - out_sum).abs() < 1e-12);
        prop_assert!(gx.iter().filter(|&&v| v != 0.0).count() <= g.shape(y).numel());
    }

    #[test]
    fn identity_1x1_conv_is_bitwise_identity(seed in any::<u64>(), c in 1usize..5) {
        let mut g = Graph::new();
        let t = tensor(Shape::new(2, c, 5, 3), seed, -2.0, 2.0);
        let x = g.input(t.clone());
        let w = g.input(Tensor::from_fn(Shape::new(c, c, 1, 1), |[o, i, _, _]| if o == i { 1.0 } else { 0.0 }));
        let y = g.conv2d(x, w, None, ConvSpec { stride: 1, padding: 0, mode: PadMode::Zeros }).unwrap();
        prop_assert_eq!(g.value(y), &t);
    }

    #[test]
    fn haze_is_a_convex_combination(seed in any::<u64>(), beta in 0.0f64..5.0, a in 0.0f64..1.0) {
        let clean = tensor(Shape::new(1, 3, 6, 6), seed, 0.0, 1.0);
        let kind = DepthKind::ALL[(seed % 3) as usize];
        let depth = depth_map(kind, 6, 6, &mut stream(seed, 1));
        let scene = HazeScene { clean: clean.clone(), depth, airlight: Airlight::Gray(a), beta };
        let hazy = apply_haze(&scene).unwrap();
        for (i, (&v, &j)) in hazy.data().iter().zip(clean.data()).enumerate() {
            prop_assert!(v >= j.min(a) - 1e-15 && v <= j.max(a) + 1e-15, "pixel {}", i);
        }
    }

    #[test]
    fn inversion_round_trips_when_transmission_is_large(seed in any::<u64>(), beta in 0.0f64..2.3) {
        let clean = tensor(Shape::new(1, 3, 5, 4), seed, 0.0, 1.0);
        let depth = tensor(Shape::new(1, 1, 5, 4), seed ^ 7, 0.0, 1.0);
        let airlight = Airlight::Rgb([0.8, 0.9, 0.95]);
        let hazy = apply_haze(&HazeScene { clean: clean.clone(), depth: depth.clone(), airlight, beta }).unwrap();
        let t = transmission(&depth, beta).unwrap();
        let back = invert_haze(&hazy, &t, airlight, 0.05).unwrap();
        prop_assert!(back.max_abs_diff(&clean) < 1e-6);
    }

    #[test]
    fn denser_haze_moves_toward_airlight(seed in any::<u64>(), b1 in 0.0f64..3.0, db in 0.0f64..3.0) {
        let clean = tensor(Shape::new(1, 3, 5, 5), seed, 0.0, 1.0);
        let depth = tensor(Shape::new(1, 1, 5, 5), seed ^ 3, 0.0, 1.0);
        let airlight = Airlight::Gray(0.85);
        let lo = apply_haze(&HazeScene { clean: clean.clone(), depth: depth.clone(), airlight, beta: b1 }).unwrap();
        let hi = apply_haze(&HazeScene { clean, depth, airlight, beta: b1 + db }).unwrap();
        for (&p, &q) in lo.data().iter().zip(hi.data()) {
            prop_assert!((q - 0.85).abs() <= (p - 0.85).abs() + 1e-15);
        }
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(seed in any::<u64>()) {
        let a = tensor(Shape::new(1, 3, 14, 13), seed, 0.0, 1.0);
        let b = tensor(Shape::new(1, 3, 14, 13), seed ^ 5, 0.0, 1.0);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn entropy_ignores_pixel_order(seed in any::<u64>()) {
        let a = tensor(Shape::new(1, 3, 8, 8), seed, 0.0, 1.0);
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut stream(seed, 2));
        let b = Tensor::from_fn(a.shape(), |[_, c, y, x]| {
            let p = perm[y * 8 + x];
            a.at([0, c, p / 8, p % 8])
        });
        prop_assert_eq!(entropy(&a).unwrap(), entropy(&b).unwrap());
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>()) {
        let clean = tensor(Shape::new(1, 3, 12, 12), seed, 0.0, 1.0);
        let unit = tensor(Shape::new(1, 3, 12, 12), seed ^ 9, -1.0, 1.0);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
            let noisy = Tensor::from_fn(clean.shape(), |i| clean.at(i) + amp * unit.at(i));
            let p = psnr(&noisy, &clean, 1.0).unwrap();
            prop_assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn cpa_never_amplifies(seed in any::<u64>()) {
        let cfg = ModelConfig::tiny();
        let store = perturbed_params(&cfg, seed % 1000);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let t = tensor(Shape::new(1, cfg.widths[1], 6, 5), seed, -3.0, 3.0);
        let x = g.input(t.clone());
        let y = cpa(&mut g, x, &b, "cpa1").unwrap();
        for (&xi, &yi) in t.data().iter().zip(g.value(y).data()) {
            prop_assert!(yi.abs() <= xi.abs());
            prop_assert!(xi == 0.0 || yi.abs() < xi.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn output_shape_matches_input(h in 1usize..40, w in 1usize..40, v in 0usize..5) {
        let cfg = ModelConfig::tiny().with_variant(Variant::ALL[v]);
        let p = perturbed_params(&cfg, 1);
        let x = tensor(Shape::new(1, 3, h, w), (h * 64 + w) as u64, 0.0, 1.0);
        let y = predict(&cfg, &p, &x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}

/// Base forward assembled directly from the layer functions.
fn reference_base(cfg: &ModelConfig, store: &ParamStore<f64>, input: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.input(input.clone());
    let same = |k: usize| ConvSpec { stride: 1, padding: k / 2, mode: PadMode::Zeros };
    let conv = |g: &mut Graph<f64>, x, name: &str, spec| {
        g.conv2d(x, p.get(&format!("{name}.w")).unwrap(), Some(p.get(&format!("{name}.b")).unwrap()), spec).unwrap()
    };
    let mut c = conv(&mut g, x, "stem", same(3));
    let mut t = x;
    let mut skips = Vec::new();
    for i in 0..4 {
        let (fusion, main) = cnn_layer(&mut g, c, &p, cfg, i).unwrap();
        assert!(fusion.is_none());
        let e = conv(&mut g, t, &format!("tr{i}.embed"), ConvSpec { stride: 2, padding: 0, mode: PadMode::Zeros });
        t = transformer_layer(&mut g, e, &p, cfg, i).unwrap();
        skips.push(main);
        c = main;
    }
    let mut y = g.add(skips[3], t).unwrap();
    for k in 0..4 {
        let cat = g.concat_channels(&[y, skips[3 - k]]).unwrap();
        let up = g.resize2d(cat, igdehaze::autograd::ResizeFactor::Up2, igdehaze::autograd::ResizeMode::Nearest).unwrap();
        let z = conv(&mut g, up, &format!("dec{k}"), same(3));
        y = g.relu(z).unwrap();
    }
    let r = conv(&mut g, y, "head", same(3));
    let out = g.add(x, r).unwrap();
    g.value(out).clone()
}

#[test]
fn base_flags_compute_the_plain_two_branch_graph() {
    let via_variant = ModelConfig::tiny().with_variant(Variant::Base);
    let literal = ModelConfig { downsample_factor: 1, use_fa: false, use_cpa: false, ..ModelConfig::tiny() };
    assert_eq!(via_variant, literal);
    let (n_base, _) = igdehaze::network::count_params_macs(&literal, 32, 32);
    let ours: ParamStore<f64> = perturbed_params(&ModelConfig::tiny(), 2);
    let mut shared: ParamStore<f64> = ParamStore::new();
    for spec in igdehaze::network::param_specs(&literal) {
        shared.insert(spec.name.clone(), ours.get(&spec.name).expect("Base names exist in Ours").clone());
    }
    assert_eq!(shared.numel(), n_base);
    assert!(n_base < ours.numel());
    let x = tensor(Shape::new(1, 3, 32, 32), 5, 0.0, 1.0);
    let mut g = Graph::new();
    let b = shared.bind(&mut g);
    let xv = g.input(x.clone());
    let y = model_forward(&mut g, xv, &literal, &b).unwrap();
    assert_eq!(g.value(y), &reference_base(&literal, &shared, &x));
}

#[test]
fn forward_and_loss_are_replay_deterministic() {
    let cfg = ModelConfig::tiny();
    let run = || {
        let p: ParamStore<f64> = init_params(&cfg, 42).unwrap();
        let p = perturbed(&p);
        let mut g = Graph::new();
        let b: Bound = p.bind(&mut g);
        let x = g.input(tensor(Shape::new(2, 3, 20, 28), 3, 0.0, 1.0));
        let y = model_forward(&mut g, x, &cfg, &b).unwrap();
        let t = g.input(tensor(Shape::new(2, 3, 20, 28), 4, 0.0, 1.0));
        let l = g.l1_loss(y, t).unwrap();
        g.backward(l).unwrap();
        let grads: Vec<Vec<f64>> = b.iter().map(|(_, v)| g.grad(v).unwrap().to_vec()).collect();
        (g.value(y).clone(), g.value(l).clone(), grads)
    };
    assert_eq!(run(), run());
}

fn perturbed(p: &ParamStore<f64>) -> ParamStore<f64> {
    let mut q = p.clone();
    for (k, (_, t)) in q.iter_mut().enumerate() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.01 * (((i * 31 + k * 7) % 13) as f64 - 6.0);
        }
    }
    q
}

#[test]
fn checkpoint_round_trip_gives_identical_outputs() {
    let cfg = ModelConfig::tiny();
    let p: ParamStore<f32> = perturbed(&init_params::<f64>(&cfg, 8).unwrap()).cast();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &p).unwrap();
    let q = checkpoint::load(&path, &cfg).unwrap();
    let x: Tensor<f32> = tensor(Shape::new(1, 3, 24, 40), 1, 0.0, 1.0).cast();
    let (a, b) = (predict(&cfg, &p, &x).unwrap(), predict(&cfg, &q, &x).unwrap());
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
