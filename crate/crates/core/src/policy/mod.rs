//! Attention routing policy.
//!
//! An encoder turns the mission nodes into embeddings; a UAV decoder
//! points at the next node to visit or land on, and a UGV decoder picks
//! which landed UAV to service next. Rollouts drive the mission
//! environment with either decoder and record log-probabilities on a
//! [`Tape`](crate::autodiff::Tape) for training.

mod checkpoint;
mod net;
mod rollout;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{decode_step_ugv, decode_step_uav, encoder_forward, node_features, Session, StepDist};
pub use rollout::{
    forced_log_prob, gradient_check, rollout, rollout_from, sample_with_grad, DecodePolicy, DecodeStrategy, GradCheck, RolloutResult,
    Trajectory,
};

/// Default clock scale for times fed to the network (480 min).
pub const T_NORM_S: f64 = 480.0 * 60.0;

/// Network hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Logit clipping bound.
    pub c_p: f64,
    /// Clock scale for time inputs (s).
    pub t_norm_s: f64,
}

impl PolicyConfig {
    /// Full-size network: 128-wide embeddings, 8 heads, 3 layers.
    pub const fn paper() -> Self {
        Self { d_h: 128, heads: 8, layers: 3, d_ff: 512, c_p: 10.0, t_norm_s: T_NORM_S }
    }

    /// Laptop-size network used by default.
    pub const fn desk() -> Self {
        Self { d_h: 32, heads: 4, layers: 2, d_ff: 128, c_p: 10.0, t_norm_s: T_NORM_S }
    }

    /// The smallest network, used for gradient checks.
    pub const fn tiny() -> Self {
        Self { d_h: 8, heads: 2, layers: 1, d_ff: 32, c_p: 10.0, t_norm_s: T_NORM_S }
    }

    pub fn d_q(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.heads == 0 || self.layers == 0 || self.d_ff == 0 {
            return Err(Error::Validation("network sizes must be positive".into()));
        }
        if self.d_h % self.heads != 0 {
            return Err(Error::Validation(format!("d_h = {} is not divisible by {} heads", self.d_h, self.heads)));
        }
        if !(self.c_p.is_finite() && self.c_p > 0.0) {
            return Err(Error::Validation(format!("clip bound {} must be positive", self.c_p)));
        }
        if !(self.t_norm_s.is_finite() && self.t_norm_s > 0.0) {
            return Err(Error::Validation(format!("time scale {} must be positive", self.t_norm_s)));
        }
        Ok(())
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform(usize),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub norm1_scale: usize,
    pub norm1_shift: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
    pub norm2_scale: usize,
    pub norm2_shift: usize,
}

/// Parameter slot of every named weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embed_w: usize,
    pub embed_b: usize,
    pub layers: Vec<LayerSlots>,
    pub uav_wg: usize,
    pub uav_wc: usize,
    pub glimpse_wk: usize,
    pub glimpse_wv: usize,
    pub uav_wq: usize,
    pub uav_wk: usize,
    pub ugv_wlt: usize,
    pub ugv_wt: usize,
    pub ugv_wc: usize,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<[usize; 2]>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push([rows, cols]);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, Init::Uniform(rows))
    }
}

fn layout(c: &PolicyConfig) -> (Layout, Builder) {
    let (d, dq, dff) = (c.d_h, c.d_q(), c.d_ff);
    let mut b = Builder { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() };
    let embed_w = b.weight("embed.w".into(), 3, d);
    let embed_b = b.add("embed.b".into(), 1, d, Init::Uniform(3));
    let mut layers = Vec::new();
    for l in 0..c.layers {
        let heads = |kind: &str, b: &mut Builder| {
            (0..c.heads).map(|j| b.weight(format!("enc{l}.head{j}.{kind}"), d, dq)).collect::<Vec<_>>()
        };
        let wq = heads("wq", &mut b);
        let wk = heads("wk", &mut b);
        let wv = heads("wv", &mut b);
        layers.push(LayerSlots {
            wq,
            wk,
            wv,
            norm1_scale: b.add(format!("enc{l}.norm1.scale"), 1, d, Init::Ones),
            norm1_shift: b.add(format!("enc{l}.norm1.shift"), 1, d, Init::Zeros),
            ff_w1: b.weight(format!("enc{l}.ff.w1"), d, dff),
            ff_b1: b.add(format!("enc{l}.ff.b1"), 1, dff, Init::Uniform(d)),
            ff_w2: b.weight(format!("enc{l}.ff.w2"), dff, d),
            ff_b2: b.add(format!("enc{l}.ff.b2"), 1, d, Init::Uniform(dff)),
            norm2_scale: b.add(format!("enc{l}.norm2.scale"), 1, d, Init::Ones),
            norm2_shift: b.add(format!("enc{l}.norm2.shift"), 1, d, Init::Zeros),
        });
    }
    let lay = Layout {
        embed_w,
        embed_b,
        layers,
        uav_wg: b.weight("uav.w_g".into(), d + 1, d),
        uav_wc: b.weight("uav.w_c".into(), d + 1, d),
        glimpse_wk: b.weight("uav.glimpse.wk".into(), d, d),
        glimpse_wv: b.weight("uav.glimpse.wv".into(), d, d),
        uav_wq: b.weight("uav.w_q".into(), d, dq),
        uav_wk: b.weight("uav.w_k".into(), d, dq),
        ugv_wlt: b.weight("ugv.w_lt".into(), 1, d),
        ugv_wt: b.weight("ugv.w_t".into(), 1, d),
        ugv_wc: b.weight("ugv.w_c".into(), 2 * d, d),
    };
    (lay, b)
}

/// All trainable tensors of a policy, in a fixed slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl PolicyParams {
    /// Fresh weights: uniform in ±1/√fan_in, normalisation scales 1 and
    /// shifts 0.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&[r, c], &init)| match init {
                Init::Uniform(fan) => {
                    let a = 1.0 / (fan as f64).sqrt();
                    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-a..=a)).collect())
                }
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Zeros => Tensor::zeros(r, c),
            })
            .collect();
        Ok(Self { config, names: b.names, tensors, layout })
    }

    /// Every tensor zero, including normalisation scales.
    pub fn zeros(config: PolicyConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        for t in &mut p.tensors {
            t.data.fill(0.0);
        }
        Ok(p)
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout `config` implies.
    pub fn from_named(config: PolicyConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, b) = layout(&config);
        if named.len() != b.names.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", b.names.len(), named.len())));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(b.names.iter().zip(&b.shapes)) {
            if &name != want || t.shape() != *shape {
                return Err(Error::Format(format!(
                    "tensor '{name}' {:?} does not match expected '{want}' {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("tensor '{name}'")));
            }
            tensors.push(t);
        }
        Ok(Self { config, names: b.names, tensors, layout })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slot(name).map(|i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like the parameters.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }
}
