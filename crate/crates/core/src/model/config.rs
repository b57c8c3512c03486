use std::fmt::Write as _;

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// How the two stages are bridged. Only [`Interaction::Full`] is the real
/// model; the others are ablations kept reachable through config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interaction {
    /// Sum of a 3×3 conv branch and a block-token attention branch, then layer norm and max pooling.
    Full,
    /// 3×3 max pooling only (1×1 projection when the width changes).
    Base,
    /// A single 3×3 conv with stride 2.
    ConvStride2,
    /// 3×3 conv followed by 3×3 max pooling.
    ConvMaxPool,
}

impl Interaction {
    fn as_str(self) -> &'static str {
        match self {
            Interaction::Full => "full",
            Interaction::Base => "base",
            Interaction::ConvStride2 => "base_c",
            Interaction::ConvMaxPool => "base_m",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Interaction::Full,
            "base" => Interaction::Base,
            "base_c" => Interaction::ConvStride2,
            "base_m" => Interaction::ConvMaxPool,
            other => return Err(Error::Config(format!("unknown interaction variant `{other}`"))),
        })
    }
}

/// Geometry and widths of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub stage_depths: Vec<usize>,
    pub stage_dims: Vec<usize>,
    pub stage_heads: Vec<usize>,
    pub interaction_heads: usize,
    /// Side of one block's patch grid; tokens per block `n = block_side²`.
    pub block_side: usize,
    /// Each block is pooled to `4^block_token_exponent` block tokens.
    pub block_token_exponent: u32,
    pub hash_bits: usize,
    pub mlp_expansion: usize,
    pub init_std: f64,
    pub interaction: Interaction,
}

/// Per-stage geometry derived from a [`ModelConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagePlan {
    /// Side of the stage's patch grid.
    pub grid: usize,
    /// Number of blocks.
    pub blocks: usize,
    /// Tokens per block `n`.
    pub seq_len: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl ModelConfig {
    /// 224-pixel, three-stage configuration (16/4/1 blocks of 14×14 tokens).
    pub fn full_scale() -> Self {
        Self {
            image_size: 224,
            in_channels: 3,
            patch_size: 4,
            stage_depths: vec![2, 2, 15],
            stage_dims: vec![128, 256, 512],
            stage_heads: vec![4, 8, 16],
            interaction_heads: 8,
            block_side: 14,
            block_token_exponent: 0,
            hash_bits: 64,
            mlp_expansion: 4,
            init_std: 0.02,
            interaction: Interaction::Full,
        }
    }

    /// 32-pixel, two-stage configuration that trains in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            patch_size: 4,
            stage_depths: vec![2, 2],
            stage_dims: vec![32, 64],
            stage_heads: vec![2, 4],
            interaction_heads: 4,
            block_side: 4,
            block_token_exponent: 0,
            hash_bits: 16,
            mlp_expansion: 4,
            init_std: 0.02,
            interaction: Interaction::Full,
        }
    }

    /// Tiny configuration for finite-difference gradient checks.
    pub fn reduced() -> Self {
        Self {
            image_size: 8,
            in_channels: 3,
            patch_size: 2,
            stage_depths: vec![1, 1],
            stage_dims: vec![4, 8],
            stage_heads: vec![2, 2],
            interaction_heads: 2,
            block_side: 2,
            block_token_exponent: 0,
            hash_bits: 4,
            mlp_expansion: 2,
            init_std: 0.5,
            interaction: Interaction::Full,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::full_scale()),
            "desk" => Ok(Self::desk()),
            "reduced" => Ok(Self::reduced()),
            other => Err(Error::Config(format!("unknown model preset `{other}` (default|desk|reduced)"))),
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_depths.len()
    }

    /// Block tokens per block.
    pub fn block_tokens(&self) -> usize {
        1 << (2 * self.block_token_exponent)
    }

    pub fn seq_len(&self) -> usize {
        self.block_side * self.block_side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = self.num_stages();
        if s == 0 || self.stage_dims.len() != s || self.stage_heads.len() != s {
            return bad(format!(
                "stage_depths/stage_dims/stage_heads must have the same non-zero length, got {}/{}/{}",
                s,
                self.stage_dims.len(),
                self.stage_heads.len()
            ));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        let grid = self.image_size / self.patch_size;
        if self.block_side == 0 || !grid.is_multiple_of(self.block_side) {
            return bad(format!("patch grid {grid} not divisible by block_side {}", self.block_side));
        }
        let blocks_per_side = grid / self.block_side;
        if blocks_per_side != 1 << (s - 1) {
            return bad(format!(
                "{blocks_per_side}x{blocks_per_side} blocks at stage 1 cannot shrink by 4 per interaction module to 1 block at stage {s}"
            ));
        }
        if self.stage_dims.windows(2).any(|w| w[1] < w[0]) || self.stage_dims.contains(&0) {
            return bad(format!("stage_dims {:?} must be positive and non-decreasing", self.stage_dims));
        }
        for (d, h) in self.stage_dims.iter().zip(&self.stage_heads) {
            if *h == 0 || d % h != 0 {
                return bad(format!("stage dim {d} not divisible by {h} heads"));
            }
        }
        if s > 1 {
            let ih = self.interaction_heads;
            if let Some(d) = self.stage_dims[1..].iter().find(|&&d| ih == 0 || d % ih != 0) {
                return bad(format!("interaction dim {d} not divisible by {ih} heads"));
            }
        }
        let side = 1usize
            .checked_shl(self.block_token_exponent)
            .filter(|&r| r <= self.block_side)
            .ok_or_else(|| Error::Config("block_token_exponent too large".into()))?;
        if !self.block_side.is_multiple_of(side) {
            return bad(format!(
                "block_side {} cannot be average-pooled to {side}x{side} block tokens",
                self.block_side
            ));
        }
        if self.block_tokens() >= self.seq_len() {
            return bad(format!(
                "{} block tokens per block must be fewer than the {} tokens of a block",
                self.block_tokens(),
                self.seq_len()
            ));
        }
        if self.hash_bits == 0 || self.mlp_expansion == 0 || self.in_channels == 0 {
            return bad("hash_bits, mlp_expansion and in_channels must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }

    /// Stage-by-stage geometry; call [`validate`](Self::validate) first.
    pub fn stage_plans(&self) -> Vec<StagePlan> {
        let mut grid = self.image_size / self.patch_size;
        (0..self.num_stages())
            .map(|i| {
                let g = grid / self.block_side;
                let plan = StagePlan {
                    grid,
                    blocks: g * g,
                    seq_len: self.seq_len(),
                    dim: self.stage_dims[i],
                    depth: self.stage_depths[i],
                    heads: self.stage_heads[i],
                };
                grid /= 2;
                plan
            })
            .collect()
    }

    pub fn from_kv(kv: &KvConfig, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let mut c = match kv.raw(&key("preset")) {
            Some(p) => Self::preset(p)?,
            None => Self::desk(),
        };
        kv.set(&key("image_size"), &mut c.image_size)?;
        kv.set(&key("in_channels"), &mut c.in_channels)?;
        kv.set(&key("patch_size"), &mut c.patch_size)?;
        kv.set_list(&key("stage_depths"), &mut c.stage_depths)?;
        kv.set_list(&key("stage_dims"), &mut c.stage_dims)?;
        kv.set_list(&key("stage_heads"), &mut c.stage_heads)?;
        kv.set(&key("interaction_heads"), &mut c.interaction_heads)?;
        kv.set(&key("block_side"), &mut c.block_side)?;
        kv.set(&key("block_token_exponent"), &mut c.block_token_exponent)?;
        kv.set(&key("hash_bits"), &mut c.hash_bits)?;
        kv.set(&key("mlp_expansion"), &mut c.mlp_expansion)?;
        kv.set(&key("init_std"), &mut c.init_std)?;
        if let Some(v) = kv.raw(&key("interaction")) {
            c.interaction = Interaction::parse(v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Serializes every field as `key = value` lines under `prefix`.
    pub fn to_kv(&self, prefix: &str) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{prefix}{k} = {v}");
        };
        line("image_size", self.image_size.to_string());
        line("in_channels", self.in_channels.to_string());
        line("patch_size", self.patch_size.to_string());
        line("stage_depths", list(&self.stage_depths));
        line("stage_dims", list(&self.stage_dims));
        line("stage_heads", list(&self.stage_heads));
        line("interaction_heads", self.interaction_heads.to_string());
        line("block_side", self.block_side.to_string());
        line("block_token_exponent", self.block_token_exponent.to_string());
        line("hash_bits", self.hash_bits.to_string());
        line("mlp_expansion", self.mlp_expansion.to_string());
        line("init_std", format!("{:?}", self.init_std));
        line("interaction", self.interaction.as_str().to_string());
        s
    }
}
