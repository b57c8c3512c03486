use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Interaction, ModelConfig, StagePlan};
use crate::error::{Error, Result};
use crate::nn::{record, BoundParams, EncoderLayer, Init, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Probe};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Splits a `[N, P, P, D]` patch grid into `[N, blocks, tokens, D]` blocks of
/// `block_side × block_side` patches. Blocks are ordered row-major over the
/// grid and patches row-major within a block.
pub fn aggregate_blocks<'t, T: Scalar>(x: Var<'t, T>, block_side: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let [n, p, p2, d] = shape[..] else {
        return Err(Error::dim("aggregate_blocks", &shape, &[0, 0, 0, 0]));
    };
    if p != p2 || block_side == 0 || p % block_side != 0 {
        return Err(Error::Geometry(format!(
            "aggregate_blocks: {p}x{p2} grid does not tile into {block_side}x{block_side} blocks"
        )));
    }
    let g = p / block_side;
    x.reshape(&[n, g, block_side, g, block_side, d])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[n, g * g, block_side * block_side, d])
}

/// Inverse of [`aggregate_blocks`].
pub fn disaggregate_blocks<'t, T: Scalar>(y: Var<'t, T>, block_side: usize) -> Result<Var<'t, T>> {
    let shape = y.shape();
    let [n, blocks, seq, d] = shape[..] else {
        return Err(Error::dim("disaggregate_blocks", &shape, &[0, 0, 0, 0]));
    };
    let g = (blocks as f64).sqrt().round() as usize;
    if g * g != blocks || seq != block_side * block_side {
        return Err(Error::Geometry(format!(
            "disaggregate_blocks: {blocks} blocks of {seq} tokens do not form a square grid of {block_side}x{block_side} blocks"
        )));
    }
    y.reshape(&[n, g, g, block_side, block_side, d])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[n, g * block_side, g * block_side, d])
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

impl Conv {
    fn new<T: Scalar, R: rand::Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: init.normal(format!("{name}.weight"), &[k, k, cin, cout])?,
            bias: init.zeros(format!("{name}.bias"), &[cout])?,
        })
    }

    fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        x.conv2d(p.var(self.weight), p.var(self.bias), stride, pad)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    plan: StagePlan,
    position: ParamId,
    layers: Vec<EncoderLayer>,
}

#[derive(Clone, Debug)]
enum Bridge {
    Full {
        local: Conv,
        block_proj: Conv,
        token_position: ParamId,
        attention: MultiHeadAttention,
        norm: LayerNorm,
    },
    Base {
        proj: Option<Conv>,
    },
    ConvStride2 {
        conv: Conv,
        norm: LayerNorm,
    },
    ConvMaxPool {
        conv: Conv,
        norm: LayerNorm,
    },
}

/// One interaction module between stage `i` and stage `i + 1`.
#[derive(Clone, Debug)]
struct InteractionModule {
    index: usize,
    blocks: usize,
    block_side: usize,
    token_side: usize,
    bridge: Bridge,
}

/// Layout of the whole network: which parameter plays which role.
#[derive(Clone, Debug)]
pub struct HybridHash {
    config: ModelConfig,
    patch_embed: Linear,
    stages: Vec<Stage>,
    interactions: Vec<InteractionModule>,
    head: Linear,
}

impl HybridHash {
    /// Registers every parameter in `store` and returns the layout.
    pub fn build<T: Scalar, R: rand::Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            store,
            rng,
            std: config.init_std,
        };
        let plans = config.stage_plans();
        let s = config.patch_size;
        let patch_embed = Linear::new(&mut init, "patch_embed", s * s * config.in_channels, plans[0].dim)?;

        let mut stages = Vec::with_capacity(plans.len());
        let mut interactions = Vec::with_capacity(plans.len() - 1);
        for (i, plan) in plans.iter().enumerate() {
            let name = format!("stage{i}");
            let position = init.normal(format!("{name}.position"), &[plan.blocks, plan.seq_len, plan.dim])?;
            let layers = (0..plan.depth)
                .map(|l| EncoderLayer::new(&mut init, &format!("{name}.layer{l}"), plan.dim, plan.heads, config.mlp_expansion))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                plan: *plan,
                position,
                layers,
            });

            if let Some(next) = plans.get(i + 1) {
                let name = format!("interaction{i}");
                let (din, dout) = (plan.dim, next.dim);
                let a = config.block_tokens();
                let bridge = match config.interaction {
                    Interaction::Full => Bridge::Full {
                        local: Conv::new(&mut init, &format!("{name}.local"), 3, din, dout)?,
                        block_proj: Conv::new(&mut init, &format!("{name}.block_proj"), 1, din, dout)?,
                        token_position: init.normal(format!("{name}.token_position"), &[plan.blocks * a, dout])?,
                        attention: MultiHeadAttention::new(&mut init, &format!("{name}.attn"), dout, config.interaction_heads)?,
                        norm: LayerNorm::new(&mut init, &format!("{name}.norm"), dout)?,
                    },
                    Interaction::Base => Bridge::Base {
                        proj: (din != dout)
                            .then(|| Conv::new(&mut init, &format!("{name}.proj"), 1, din, dout))
                            .transpose()?,
                    },
                    Interaction::ConvStride2 => Bridge::ConvStride2 {
                        conv: Conv::new(&mut init, &format!("{name}.conv"), 3, din, dout)?,
                        norm: LayerNorm::new(&mut init, &format!("{name}.norm"), dout)?,
                    },
                    Interaction::ConvMaxPool => Bridge::ConvMaxPool {
                        conv: Conv::new(&mut init, &format!("{name}.conv"), 3, din, dout)?,
                        norm: LayerNorm::new(&mut init, &format!("{name}.norm"), dout)?,
                    },
                };
                interactions.push(InteractionModule {
                    index: i,
                    blocks: plan.blocks,
                    block_side: config.block_side,
                    token_side: 1 << config.block_token_exponent,
                    bridge,
                });
            }
        }
        let last = plans.last().expect("at least one stage").dim;
        let head = Linear::new(&mut init, "hash_head", last, config.hash_bits)?;
        Ok(Self {
            config: config.clone(),
            patch_embed,
            stages,
            interactions,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `[N, H, W, C]` images → `[N, H/S, W/S, D1]` patch embeddings.
    pub fn patch_embed<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = images.shape();
        let c = &self.config;
        let [n, h, w, ch] = shape[..] else {
            return Err(Error::dim("patch_embed", &shape, &[0, c.image_size, c.image_size, c.in_channels]));
        };
        if h != c.image_size || w != c.image_size || ch != c.in_channels {
            return Err(Error::Geometry(format!(
                "patch_embed: expected {0}x{0}x{1} images, got {h}x{w}x{ch}",
                c.image_size, c.in_channels
            )));
        }
        let (s, g) = (c.patch_size, c.image_size / c.patch_size);
        let patches = images
            .reshape(&[n, g, s, g, s, ch])?
            .permute(&[0, 1, 3, 2, 4, 5])?
            .reshape(&[n, g, g, s * s * ch])?;
        self.patch_embed.forward(p, patches)
    }

    /// Adds the stage's position embeddings and runs its encoder stack on
    /// aggregated blocks `[N, blocks, tokens, D]`. Attention never crosses blocks.
    pub fn encoder_stack<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        blocks: Var<'t, T>,
        stage: usize,
        probe: Option<&Probe>,
    ) -> Result<Var<'t, T>> {
        let st = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Config(format!("no stage {stage}")))?;
        let shape = blocks.shape();
        let plan = st.plan;
        let [n, ..] = shape[..] else {
            return Err(Error::dim("encoder_stack", &shape, &[0, plan.blocks, plan.seq_len, plan.dim]));
        };
        if shape != [n, plan.blocks, plan.seq_len, plan.dim] {
            return Err(Error::dim("encoder_stack", &shape, &[n, plan.blocks, plan.seq_len, plan.dim]));
        }
        record(probe, || format!("stage{stage}.blocks"), &shape);
        let mut y = blocks
            .add(p.var(st.position))?
            .reshape(&[n * plan.blocks, plan.seq_len, plan.dim])?;
        for (l, layer) in st.layers.iter().enumerate() {
            let site = format!("stage{stage}.layer{l}");
            y = layer.forward(p, y, probe.map(|pr| (pr, site.as_str())))?;
        }
        y.reshape(&shape)
    }

    /// Bridges stage `module` to stage `module + 1`: `[N, P, P, D]` → `[N, P/2, P/2, D']`.
    pub fn interaction_module<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        x: Var<'t, T>,
        module: usize,
        probe: Option<&Probe>,
    ) -> Result<Var<'t, T>> {
        let im = self
            .interactions
            .get(module)
            .ok_or_else(|| Error::Config(format!("no interaction module {module}")))?;
        let out = match &im.bridge {
            Bridge::Full {
                local,
                block_proj,
                token_position,
                attention,
                norm,
            } => {
                let local_features = local.forward(p, x, 1, 1)?;
                let global_features = im.block_token_branch(p, x, block_proj, *token_position, attention, probe)?;
                norm.forward(p, global_features.add(local_features)?)?.max_pool2d(3, 2, 1)?
            }
            Bridge::Base { proj } => {
                let pooled = x.max_pool2d(3, 2, 1)?;
                match proj {
                    Some(c) => c.forward(p, pooled, 1, 0)?,
                    None => pooled,
                }
            }
            Bridge::ConvStride2 { conv, norm } => norm.forward(p, conv.forward(p, x, 2, 1)?)?,
            Bridge::ConvMaxPool { conv, norm } => norm.forward(p, conv.forward(p, x, 1, 1)?)?.max_pool2d(3, 2, 1)?,
        };
        record(probe, || format!("interaction{}.output", im.index), &out.shape());
        Ok(out)
    }

    /// Codes in (−1, 1): patch embedding, stages bridged by interaction
    /// modules, mean over the final block's tokens, affine head, tanh.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        images: Var<'t, T>,
        probe: Option<&Probe>,
    ) -> Result<Var<'t, T>> {
        let bs = self.config.block_side;
        let mut x = self.patch_embed(p, images)?;
        let last = self.stages.len() - 1;
        for i in 0..=last {
            let y = self.encoder_stack(p, aggregate_blocks(x, bs)?, i, probe)?;
            if i == last {
                let shape = y.shape();
                let pooled = y.mean_axis(2)?.reshape(&[shape[0], shape[3]])?;
                record(probe, || "pooled".into(), &pooled.shape());
                return Ok(self.head.forward(p, pooled)?.tanh());
            }
            x = self.interaction_module(p, disaggregate_blocks(y, bs)?, i, probe)?;
        }
        unreachable!("loop returns at the last stage")
    }
}

impl InteractionModule {
    /// 1×1 conv, average-pool each block to its block tokens, add token position
    /// embeddings, one attention over the block tokens of all blocks, bilinear upsample
    /// each block's tokens back to its patch grid.
    fn block_token_branch<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        x: Var<'t, T>,
        block_proj: &Conv,
        token_position: ParamId,
        attention: &MultiHeadAttention,
        probe: Option<&Probe>,
    ) -> Result<Var<'t, T>> {
        let xb = block_proj.forward(p, x, 1, 0)?;
        let n = xb.shape()[0];
        let d = attention.dim;
        let (bs, r) = (self.block_side, self.token_side);
        let tokens = aggregate_blocks(xb, bs)?
            .reshape(&[n * self.blocks, bs, bs, d])?
            .avg_pool2d((bs / r, bs / r))?
            .reshape(&[n, self.blocks * r * r, d])?
            .add(p.var(token_position))?;
        record(probe, || format!("interaction{}.block_tokens", self.index), &tokens.shape());
        let site = format!("interaction{}.attn", self.index);
        let attended = attention.forward(p, tokens, probe.map(|pr| (pr, site.as_str())))?;
        let upsampled = attended
            .reshape(&[n * self.blocks, r, r, d])?
            .bilinear_upsample((bs, bs))?
            .reshape(&[n, self.blocks, bs * bs, d])?;
        record(probe, || format!("interaction{}.global", self.index), &upsampled.shape());
        disaggregate_blocks(upsampled, bs)
    }
}

/// Layout plus parameter values at one precision.
#[derive(Clone, Debug)]
pub struct HybridHashModel<T> {
    pub net: HybridHash,
    pub params: ParamStore<T>,
}

impl<T: Scalar> HybridHashModel<T> {
    /// Fresh model initialised from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = HybridHash::build(config, &mut params, &mut rng)?;
        Ok(Self { net, params })
    }

    /// Rebuilds the layout for `config` and adopts `params`, which must match it.
    pub fn from_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model expects {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for (name, value) in params.iter() {
            fresh.params.set(name, value.clone())?;
        }
        Ok(fresh)
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn cast<U: Scalar>(&self) -> HybridHashModel<U> {
        HybridHashModel {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    /// Inference forward without gradient tracking.
    pub fn encode(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.encode_probed(images, None)
    }

    pub fn encode_probed(&self, images: &Tensor<T>, probe: Option<&Probe>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params.bind_constants(&tape);
        let codes = self.net.forward(&p, tape.constant(images.clone()), probe)?;
        tape.check_finite()?;
        let out = codes.value().clone();
        Ok(out)
    }
}
