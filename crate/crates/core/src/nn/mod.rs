//! Differentiable layers. A layer only stores [`ParamId`]s; values live in a
//! [`ParamStore`] so the same layout can run at 32- or 64-bit precision.

mod params;

pub use params::{BoundParams, ParamId, ParamStore};

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Parameter initialisation: truncated normal weights, zero biases.
pub struct Init<'a, T, R: ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    pub std: f64,
}

impl<T: Scalar, R: Rng + ?Sized> Init<'_, T, R> {
    pub fn normal(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::trunc_normal(shape, self.std, self.rng);
        self.store.register(name, t)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::ones(shape))
    }
}

/// Records activation shapes at named sites during a forward pass.
#[derive(Debug, Default)]
pub struct Probe {
    events: RefCell<Vec<ProbeEvent>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeEvent {
    pub site: String,
    pub shape: Vec<usize>,
}

impl Probe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, site: impl Into<String>, shape: &[usize]) {
        self.events.borrow_mut().push(ProbeEvent {
            site: site.into(),
            shape: shape.to_vec(),
        });
    }

    pub fn events(&self) -> Vec<ProbeEvent> {
        self.events.borrow().clone()
    }

    /// Shapes recorded at sites whose name starts with `prefix`.
    pub fn shapes(&self, prefix: &str) -> Vec<Vec<usize>> {
        self.events
            .borrow()
            .iter()
            .filter(|e| e.site.starts_with(prefix))
            .map(|e| e.shape.clone())
            .collect()
    }
}

pub(crate) fn record(probe: Option<&Probe>, site: impl FnOnce() -> String, shape: &[usize]) {
    if let Some(p) = probe {
        p.record(site(), shape);
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(init: &mut Init<'_, T, R>, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: init.normal(format!("{name}.weight"), &[input, output])?,
            bias: init.zeros(format!("{name}.bias"), &[output])?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.var(self.weight))?.add(p.var(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar, R: Rng + ?Sized>(init: &mut Init<'_, T, R>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.ones(format!("{name}.gamma"), &[dim])?,
            beta: init.zeros(format!("{name}.beta"), &[dim])?,
            eps: Self::EPS,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), T::lit(self.eps))
    }
}

/// Multi-head self-attention without masking or dropout.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(init: &mut Init<'_, T, R>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{name}: dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(init, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(init, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(init, &format!("{name}.value"), dim, dim)?,
            output: Linear::new(init, &format!("{name}.output"), dim, dim)?,
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `x`: [B, n, D]. Every one of the B items attends only within itself.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        x: Var<'t, T>,
        probe: Option<(&Probe, &str)>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let [b, n, d] = shape[..] else {
            return Err(Error::dim("multi_head_self_attention", &shape, &[0, 0, self.dim]));
        };
        if d != self.dim {
            return Err(Error::dim("multi_head_self_attention", &shape, &[b, n, self.dim]));
        }
        let (h, hd) = (self.heads, self.head_dim());
        let q = self.query.forward(p, x)?.reshape(&[b, n, h, hd])?.permute(&[0, 2, 1, 3])?;
        let k_t = self.key.forward(p, x)?.reshape(&[b, n, h, hd])?.permute(&[0, 2, 3, 1])?;
        let v = self.value.forward(p, x)?.reshape(&[b, n, h, hd])?.permute(&[0, 2, 1, 3])?;
        let scores = q.matmul(k_t)?.scale(T::lit(1.0 / (hd as f64).sqrt()));
        if let Some((probe, site)) = probe {
            probe.record(format!("{site}.scores"), &scores.shape());
        }
        let ctx = scores.softmax().matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, d])?;
        self.output.forward(p, ctx)
    }
}

/// Two affine layers with an exact GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(init: &mut Init<'_, T, R>, name: &str, dim: usize, expansion: usize) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::Config("mlp expansion must be at least 1".into()));
        }
        Ok(Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dim, dim * expansion)?,
            fc2: Linear::new(init, &format!("{name}.fc2"), dim * expansion, dim)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let hidden = self.fc1.forward(p, x)?.gelu();
        self.fc2.forward(p, hidden)
    }
}

/// Pre-norm encoder layer: residual attention, then a residual MLP.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
        expansion: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), dim)?,
            attention: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads)?,
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(init, &format!("{name}.mlp"), dim, expansion)?,
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        y: Var<'t, T>,
        probe: Option<(&Probe, &str)>,
    ) -> Result<Var<'t, T>> {
        let attended = self.attention.forward(p, self.norm1.forward(p, y)?, probe)?;
        let mixed = attended.add(y)?;
        self.mlp.forward(p, self.norm2.forward(p, mixed)?)?.add(mixed)
    }
}
