use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture hyperparameters of the two-branch model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels per stage.
    pub widths: [usize; 4],
    /// Attention window side.
    pub window: usize,
    /// Attention heads per stage.
    pub heads: [usize; 4],
    /// 2 downsamples the transformer input once (DownS); 1 disables it.
    pub downsample_factor: usize,
    /// Per-stage feature addition of the two branches (FA).
    pub use_fa: bool,
    /// Channel and pixel attention guidance (CPA).
    pub use_cpa: bool,
    pub mlp_ratio: f64,
    #[serde(default = "default_reduction")]
    pub cpa_reduction: usize,
    #[serde(default = "default_pixel_kernel")]
    pub pixel_kernel: usize,
}

fn default_reduction() -> usize {
    4
}

fn default_pixel_kernel() -> usize {
    7
}

impl ModelConfig {
    pub fn tiny() -> Self {
        ModelConfig {
            widths: [8, 16, 24, 32],
            window: 7,
            heads: [1, 2, 4, 8],
            downsample_factor: 2,
            use_fa: true,
            use_cpa: true,
            mlp_ratio: 2.0,
            cpa_reduction: default_reduction(),
            pixel_kernel: default_pixel_kernel(),
        }
    }

    pub fn small() -> Self {
        ModelConfig {
            widths: [24, 48, 96, 192],
            ..Self::tiny()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        let (downs, fa, cpa) = v.flags();
        self.downsample_factor = if downs { 2 } else { 1 };
        self.use_fa = fa;
        self.use_cpa = cpa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            let (w, h) = (self.widths[i], self.heads[i]);
            if w == 0 || h == 0 || w % h != 0 {
                return Err(invalid(format!("stage {i}: width {w} must be a positive multiple of heads {h}")));
            }
        }
        if self.window < 2 {
            return Err(invalid(format!("window must be at least 2, got {}", self.window)));
        }
        if !matches!(self.downsample_factor, 1 | 2) {
            return Err(invalid(format!("downsample_factor must be 1 or 2, got {}", self.downsample_factor)));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return Err(invalid(format!("mlp_ratio must be positive, got {}", self.mlp_ratio)));
        }
        if self.cpa_reduction == 0 {
            return Err(invalid("cpa_reduction must be at least 1"));
        }
        if self.pixel_kernel.is_multiple_of(2) {
            return Err(invalid(format!("pixel_kernel must be odd, got {}", self.pixel_kernel)));
        }
        Ok(())
    }

    /// Input sides must be multiples of this; other sizes are reflect-padded.
    pub fn size_multiple(&self) -> usize {
        16 * self.downsample_factor
    }

    pub fn mlp_hidden(&self, stage: usize) -> usize {
        ((self.widths[stage] as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Hidden width of the channel-attention MLP.
    pub fn cpa_hidden(&self, stage: usize) -> usize {
        (self.widths[stage] / self.cpa_reduction).max(1)
    }

    pub fn has_fusion_head(&self) -> bool {
        self.use_fa || self.use_cpa
    }

    pub fn variant(&self) -> Option<Variant> {
        let flags = (self.downsample_factor == 2, self.use_fa, self.use_cpa);
        Variant::ALL.into_iter().find(|v| v.flags() == flags)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::small()
    }
}

/// The five rows of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    BaseDownS,
    BaseDownSFa,
    BaseFaCpa,
    Ours,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::BaseDownS,
        Variant::BaseDownSFa,
        Variant::BaseFaCpa,
        Variant::Ours,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::BaseDownS => "Base+DownS",
            Variant::BaseDownSFa => "Base+DownS+FA",
            Variant::BaseFaCpa => "Base+FA+CPA",
            Variant::Ours => "Ours",
        }
    }

    /// `(downs, fa, cpa)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Base => (false, false, false),
            Variant::BaseDownS => (true, false, false),
            Variant::BaseDownSFa => (true, true, false),
            Variant::BaseFaCpa => (false, true, true),
            Variant::Ours => (true, true, true),
        }
    }

    /// Published PSNR (dB) and SSIM for this row, for side-by-side reporting.
    pub fn reference(self) -> (f64, f64) {
        match self {
            Variant::Base => (17.70, 0.5324),
            Variant::BaseDownS => (19.14, 0.5985),
            Variant::BaseDownSFa => (19.48, 0.6530),
            Variant::BaseFaCpa => (18.96, 0.5608),
            Variant::Ours => (20.10, 0.6716),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
