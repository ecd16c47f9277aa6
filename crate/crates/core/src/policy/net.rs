//! Encoder and decoders expressed on the tape.

use super::PolicyParams;
use crate::autodiff::{masked_softmax, Tape, Tensor, Var};
use crate::env::{AgentKind, MissionGraph, MissionState};
use crate::error::{Error, Result};

/// Encoder input rows `(x / side, y / side, is_ground)` for every mission
/// node, depot first.
pub fn node_features(graph: &MissionGraph, area_side_m: f64) -> Tensor {
    let mut data = Vec::with_capacity(3 * graph.len());
    for n in &graph.nodes {
        data.push(n.pos.x / area_side_m);
        data.push(n.pos.y / area_side_m);
        data.push(if n.kind.is_ground() { 1.0 } else { 0.0 });
    }
    Tensor::new(graph.len(), 3, data)
}

/// Node embeddings for standalone use (no gradients kept).
pub fn encoder_forward(params: &PolicyParams, inputs: &Tensor) -> Result<Tensor> {
    let s = Session::with_inputs(params, inputs)?;
    Ok(s.embeddings().clone())
}

/// One decoding distribution over mission nodes.
#[derive(Clone, Debug)]
pub struct StepDist {
    /// Pre-mask logits.
    pub logits: Vec<f64>,
    pub mask: Vec<bool>,
    /// Softmax over unmasked nodes; masked entries are exactly zero.
    pub probs: Vec<f64>,
    var: Var,
}

impl StepDist {
    /// Highest-probability node; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = None;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if m && best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        best.expect("distribution has support").0
    }

    /// Inverse-CDF draw from `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = None;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if !m {
                continue;
            }
            acc += p;
            last = Some(i);
            if u < acc {
                return i;
            }
        }
        last.expect("distribution has support")
    }
}

/// Encoded instance plus the tape that decoding steps extend.
///
/// A session is tied to one mission graph. Step-invariant projections of
/// the embeddings (glimpse keys and values, compatibility keys) are
/// computed once and shared by every decoding step.
pub struct Session<'p> {
    params: &'p PolicyParams,
    pub(crate) tape: Tape,
    slots: Vec<Option<Var>>,
    n: usize,
    enc: Var,
    glimpse_k: Var,
    glimpse_v: Var,
    compat_k: Var,
    picks: Vec<Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p PolicyParams, state: &MissionState) -> Result<Self> {
        let x = node_features(state.graph(), state.scenario().area_side_m);
        Self::with_inputs(params, &x)
    }

    pub fn with_inputs(params: &'p PolicyParams, inputs: &Tensor) -> Result<Self> {
        if inputs.cols != 3 || inputs.rows == 0 {
            return Err(Error::Validation(format!("encoder input must be n x 3, got {:?}", inputs.shape())));
        }
        if !inputs.is_finite() {
            return Err(Error::Validation("encoder input is not finite".into()));
        }
        let mut s = Session {
            params,
            tape: Tape::new(),
            slots: vec![None; params.tensors.len()],
            n: inputs.rows,
            enc: Var::DANGLING,
            glimpse_k: Var::DANGLING,
            glimpse_v: Var::DANGLING,
            compat_k: Var::DANGLING,
            picks: Vec::new(),
        };
        s.enc = s.encode(inputs);
        let lay = &params.layout;
        s.glimpse_k = s.linear(s.enc, lay.glimpse_wk, None);
        s.glimpse_v = s.linear(s.enc, lay.glimpse_wv, None);
        s.compat_k = s.linear(s.enc, lay.uav_wk, None);
        Ok(s)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn embeddings(&self) -> &Tensor {
        self.tape.value(self.enc)
    }

    fn w(&mut self, slot: usize) -> Var {
        if let Some(v) = self.slots[slot] {
            return v;
        }
        let v = self.tape.param(slot, &self.params.tensors[slot]);
        self.slots[slot] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, w: usize, b: Option<usize>) -> Var {
        let w = self.w(w);
        let y = self.tape.matmul(x, w);
        match b {
            Some(b) => {
                let b = self.w(b);
                self.tape.add_row(y, b)
            }
            None => y,
        }
    }

    fn norm(&mut self, x: Var, scale: usize, shift: usize) -> Var {
        let y = self.tape.norm_rows(x);
        let s = self.w(scale);
        let y = self.tape.mul_row(y, s);
        let b = self.w(shift);
        self.tape.add_row(y, b)
    }

    fn encode(&mut self, inputs: &Tensor) -> Var {
        let cfg = self.params.config;
        let lay = &self.params.layout;
        let (ew, eb) = (lay.embed_w, lay.embed_b);
        let layers = lay.layers.clone();
        let x = self.tape.constant(inputs.clone());
        let mut h = self.linear(x, ew, Some(eb));
        let inv = 1.0 / (cfg.d_q() as f64).sqrt();
        for l in &layers {
            let mut heads = Vec::with_capacity(cfg.heads);
            for j in 0..cfg.heads {
                let q = self.linear(h, l.wq[j], None);
                let k = self.linear(h, l.wk[j], None);
                let v = self.linear(h, l.wv[j], None);
                let s = self.tape.matmul_t(q, k);
                let s = self.tape.scale(s, inv);
                let a = self.tape.softmax_rows(s);
                heads.push(self.tape.matmul(a, v));
            }
            let mha = self.tape.concat_cols(&heads);
            let r = self.tape.add(h, mha);
            let h1 = self.norm(r, l.norm1_scale, l.norm1_shift);
            let f = self.tape.relu(h1);
            let f = self.linear(f, l.ff_w1, Some(l.ff_b1));
            let f = self.tape.relu(f);
            let f = self.linear(f, l.ff_w2, Some(l.ff_b2));
            let r = self.tape.add(h1, f);
            h = self.norm(r, l.norm2_scale, l.norm2_shift);
        }
        h
    }

    fn check_graph(&self, state: &MissionState) -> Result<()> {
        if state.graph().len() != self.n {
            return Err(Error::ContractViolation(format!(
                "session encodes {} nodes but the state has {}",
                self.n,
                state.graph().len()
            )));
        }
        Ok(())
    }

    /// Distribution of the active agent, or `None` when the state is
    /// terminal or the active agent has nothing it may do.
    pub fn step(&mut self, state: &MissionState) -> Result<Option<StepDist>> {
        match state.active {
            Some(id) if id.kind == AgentKind::Uav => self.uav_step(state, id.index),
            Some(id) => self.ugv_step(state, id.index).map(Some),
            None => Ok(None),
        }
    }

    /// UAV decoder. Returns `None` if the mask is empty.
    pub fn uav_step(&mut self, state: &MissionState, u: usize) -> Result<Option<StepDist>> {
        self.check_graph(state)?;
        let mask = state.uav_mask(u).node_mask();
        if !mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let logits = self.uav_logits(state, u);
        Ok(Some(self.dist(logits, mask)))
    }

    fn uav_logits(&mut self, state: &MissionState, u: usize) -> Var {
        let cfg = self.params.config;
        let lay = &self.params.layout;
        let (wg, wc, wq) = (lay.uav_wg, lay.uav_wc, lay.uav_wq);
        let (d, dq) = (cfg.d_h, cfg.d_q());
        let inv = 1.0 / (dq as f64).sqrt();
        let enc = self.enc;

        let status: Vec<f64> = (0..self.n)
            .map(|i| if i > 0 && state.visited[i - 1] { 1.0 } else { 0.0 })
            .collect();
        let status = self.tape.constant(Tensor::new(self.n, 1, status));
        let cat = self.tape.concat_cols(&[enc, status]);
        let proj = self.linear(cat, wg, None);
        let mean = self.tape.mean_rows(proj);

        let uav = &state.uavs[u];
        let pos = self.tape.gather_rows(enc, &[uav.node]);
        let fuel = self.tape.constant(Tensor::scalar(uav.fuel_kj / state.graph().capacity()));
        let own = self.tape.concat_cols(&[pos, fuel]);
        let own = self.linear(own, wc, None);
        let ctx = self.tape.add(mean, own);

        let (keys, values) = (self.glimpse_k, self.glimpse_v);
        let mut heads = Vec::with_capacity(cfg.heads);
        for j in 0..cfg.heads {
            let q = self.tape.slice_cols(ctx, j * dq, dq);
            let k = self.tape.slice_cols(keys, j * dq, dq);
            let v = self.tape.slice_cols(values, j * dq, dq);
            let s = self.tape.matmul_t(q, k);
            let s = self.tape.scale(s, inv);
            let a = self.tape.softmax_rows(s);
            heads.push(self.tape.matmul(a, v));
        }
        let glimpse = self.tape.concat_cols(&heads);
        debug_assert_eq!(self.tape.value(glimpse).cols, d);

        let q = self.linear(glimpse, wq, None);
        let k = self.compat_k;
        let u = self.tape.matmul_t(q, k);
        let u = self.tape.scale(u, inv);
        let u = self.tape.tanh(u);
        self.tape.scale(u, cfg.c_p)
    }

    /// UGV decoder over the nodes where its assigned UAVs wait.
    pub fn ugv_step(&mut self, state: &MissionState, k: usize) -> Result<StepDist> {
        self.check_graph(state)?;
        let landed: Vec<(usize, f64)> = state.assignments[k]
            .iter()
            .filter_map(|&u| state.uavs[u].landed_at.map(|l| (l.node, l.time_s)))
            .collect();
        if landed.is_empty() {
            return Err(Error::ContractViolation(format!("ugv{k} has no landed UAV to service")));
        }
        let cfg = self.params.config;
        let lay = &self.params.layout;
        let (wlt, wt, wc) = (lay.ugv_wlt, lay.ugv_wt, lay.ugv_wc);
        let enc = self.enc;
        let nodes: Vec<usize> = landed.iter().map(|l| l.0).collect();
        let loc = self.tape.gather_rows(enc, &nodes);
        let times = self.tape.constant(Tensor::new(landed.len(), 1, landed.iter().map(|l| l.1 / cfg.t_norm_s).collect()));
        let lt = self.linear(times, wlt, None);
        let lt = self.tape.leaky_relu(lt);
        let now = self.tape.constant(Tensor::scalar(state.ugvs[k].clock_s / cfg.t_norm_s));
        let t = self.linear(now, wt, None);
        let t = self.tape.relu(t);
        let time = self.tape.add_row(lt, t);
        let cat = self.tape.concat_cols(&[loc, time]);
        let ctx = self.linear(cat, wc, None);
        let ctx = self.tape.relu(ctx);
        let cross = self.tape.matmul_t(enc, ctx);
        let cross = self.tape.scale(cross, 1.0 / (cfg.d_h as f64).sqrt());
        let logits = self.tape.mean_cols(cross);
        let mask = state.ugv_mask(k).recharge;
        Ok(self.dist(logits, mask))
    }

    fn dist(&self, logits: Var, mask: Vec<bool>) -> StepDist {
        let logits_v = self.tape.value(logits).data.clone();
        let probs = masked_softmax(&logits_v, &mask);
        StepDist { logits: logits_v, mask, probs, var: logits }
    }

    /// Records choosing `node` from `dist` and returns its log-probability.
    pub fn commit(&mut self, dist: &StepDist, node: usize) -> f64 {
        let v = self.tape.log_softmax_pick(dist.var, &dist.mask, node);
        self.picks.push(v);
        self.tape.value(v).data[0]
    }

    /// Gradient of the summed committed log-probabilities, one tensor per
    /// parameter slot.
    pub fn log_prob_grad(&mut self) -> Vec<Tensor> {
        let mut out = self.params.zeros_like();
        if self.picks.is_empty() {
            return out;
        }
        let picks = std::mem::take(&mut self.picks);
        let root = self.tape.sum(&picks);
        let g = self.tape.backward(root);
        self.tape.accumulate_param_grads(&g, 1.0, &mut out);
        self.picks = picks;
        out
    }
}

/// UAV action distribution for the state's active UAV.
pub fn decode_step_uav(params: &PolicyParams, state: &MissionState) -> Result<Option<StepDist>> {
    let u = match state.active {
        Some(id) if id.kind == AgentKind::Uav => id.index,
        _ => return Err(Error::ContractViolation("active agent is not a UAV".into())),
    };
    Session::new(params, state)?.uav_step(state, u)
}

/// UGV action distribution for the state's active UGV.
pub fn decode_step_ugv(params: &PolicyParams, state: &MissionState) -> Result<StepDist> {
    let k = match state.active {
        Some(id) if id.kind == AgentKind::Ugv => id.index,
        _ => return Err(Error::ContractViolation("active agent is not a UGV".into())),
    };
    Session::new(params, state)?.ugv_step(state, k)
}
