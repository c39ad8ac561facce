//! Masked linear cascades: evaluation, gradients and reconstruction training.

use std::fmt::Write as _;

use ndarray::Array2;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{init_weights, InitSpec};
use crate::topology::{Edge, EdgeKind, Topology};

/// Per-edge values aligned 1:1 with the edges of a [`Topology`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeWeights {
    values: Vec<Vec<f64>>,
}

impl CascadeWeights {
    /// Checks alignment with `t` and that constant edges carry their values.
    pub fn new(t: &Topology, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != t.depth() {
            return Err(Error::invalid(format!("{} weight layers for depth {}", values.len(), t.depth())));
        }
        for (l, (vals, edges)) in values.iter().zip(t.layers()).enumerate() {
            if vals.len() != edges.len() {
                return Err(Error::invalid(format!("layer {l}: {} values for {} edges", vals.len(), edges.len())));
            }
            for (v, e) in vals.iter().zip(edges) {
                if let EdgeKind::Constant(c) = e.kind {
                    if c.to_bits() != v.to_bits() {
                        return Err(Error::invalid(format!("layer {l}: constant edge {}->{} set to {v}", e.src, e.dst)));
                    }
                }
            }
        }
        Ok(CascadeWeights { values })
    }

    pub(crate) fn new_unchecked(values: Vec<Vec<f64>>) -> Self {
        CascadeWeights { values }
    }

    /// Fills trainable edges from `f(layer, edge)`; constants keep their values.
    pub fn from_fn(t: &Topology, mut f: impl FnMut(usize, &Edge) -> f64) -> Self {
        let values = t
            .layers()
            .iter()
            .enumerate()
            .map(|(l, edges)| {
                edges
                    .iter()
                    .map(|e| match e.kind {
                        EdgeKind::Trainable => f(l, e),
                        EdgeKind::Constant(v) => v,
                    })
                    .collect()
            })
            .collect();
        CascadeWeights { values }
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared Frobenius norm of the residual.
    #[default]
    L2,
    /// Sum of absolute residuals.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Step size shrinks linearly to zero over the run.
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    #[default]
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub epsilon_l0: f64,
    pub record_every: usize,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn l2() -> Self {
        TrainConfig {
            loss: Loss::L2,
            learning_rate: 0.05,
            steps: 5000,
            seed: 0,
            epsilon_l0: 1e-4,
            record_every: 100,
            schedule: LrSchedule::Constant,
            optimizer: Optimizer::Sgd,
            precision: Precision::F64,
        }
    }

    /// L1 runs decay the step size; a constant-step subgradient method keeps
    /// oscillating around satisfied constraints at amplitude ~ lr.
    pub fn l1() -> Self {
        TrainConfig {
            loss: Loss::L1,
            learning_rate: 0.005,
            steps: 20000,
            schedule: LrSchedule::LinearDecay,
            ..TrainConfig::l2()
        }
    }

    /// L2 with Adam at lr 0.01. Deep sparse cascades are stiff enough that no
    /// single constant plain-GD step size suits every depth.
    pub fn adam() -> Self {
        TrainConfig { optimizer: Optimizer::Adam, learning_rate: 0.01, ..TrainConfig::l2() }
    }

    pub fn for_loss(loss: Loss) -> Self {
        match loss {
            Loss::L2 => Self::l2(),
            Loss::L1 => Self::l1(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.epsilon_l0 > 0.0) {
            return Err(Error::invalid(format!("epsilon_l0 must be positive, got {}", self.epsilon_l0)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::l2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub final_loss: f64,
    pub loss_trace: Vec<(usize, f64)>,
    pub l0_satisfied: usize,
    /// `-1` when the topology does not end in a diagonal layer.
    pub ratio_count: i64,
    pub trainable_params: usize,
    pub topology_name: String,
    pub seed: u64,
}

impl ReconReport {
    /// Loss trace as CSV with header `step,loss`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.loss_trace {
            let _ = writeln!(out, "{step},{}", crate::experiments::fmt_float(*loss));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// generic kernels; activations are row-major (neuron, batch column)

pub(crate) fn forward_acts<T: Float>(t: &Topology, w: &[Vec<T>], x: &[T], batch: usize) -> Vec<Vec<T>> {
    let widths = t.layer_widths();
    let mut acts = Vec::with_capacity(widths.len());
    acts.push(x.to_vec());
    for (l, edges) in t.layers().iter().enumerate() {
        let mut out = vec![T::zero(); widths[l + 1] * batch];
        let input = &acts[l];
        for (e, &wv) in edges.iter().zip(&w[l]) {
            let src = &input[e.src * batch..(e.src + 1) * batch];
            let dst = &mut out[e.dst * batch..(e.dst + 1) * batch];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + wv * s;
            }
        }
        acts.push(out);
    }
    acts
}

/// Backpropagates `grad_out` (output width x batch). Gradients of constant
/// edges are reported as zero.
pub(crate) fn backward<T: Float>(t: &Topology, w: &[Vec<T>], acts: &[Vec<T>], grad_out: Vec<T>, batch: usize) -> Vec<Vec<T>> {
    let widths = t.layer_widths();
    let mut grads: Vec<Vec<T>> = w.iter().map(|l| vec![T::zero(); l.len()]).collect();
    let mut delta = grad_out;
    for l in (0..t.depth()).rev() {
        let mut prev = vec![T::zero(); widths[l] * batch];
        let input = &acts[l];
        for (idx, e) in t.layer(l).iter().enumerate() {
            let d = &delta[e.dst * batch..(e.dst + 1) * batch];
            if e.kind.is_trainable() {
                let a = &input[e.src * batch..(e.src + 1) * batch];
                grads[l][idx] = d.iter().zip(a).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            }
            if l > 0 {
                let wv = w[l][idx];
                let p = &mut prev[e.src * batch..(e.src + 1) * batch];
                for (pv, &dv) in p.iter_mut().zip(d) {
                    *pv = *pv + wv * dv;
                }
            }
        }
        delta = prev;
    }
    grads
}

fn identity_batch<T: Float>(n: usize) -> Vec<T> {
    let mut x = vec![T::zero(); n * n];
    for i in 0..n {
        x[i * n + i] = T::one();
    }
    x
}

fn cast_layers<T: Float>(values: &[Vec<f64>]) -> Vec<Vec<T>> {
    values.iter().map(|l| l.iter().map(|&v| T::from(v).unwrap()).collect()).collect()
}

/// Residual loss and its gradient w.r.t. the reconstructed matrix.
fn loss_terms<T: Float>(out: &[T], target: &[T], loss: Loss) -> (T, Vec<T>) {
    let mut total = T::zero();
    let two = T::one() + T::one();
    let grad = out
        .iter()
        .zip(target)
        .map(|(&o, &t)| {
            let r = o - t;
            match loss {
                Loss::L2 => {
                    total = total + r * r;
                    two * r
                }
                Loss::L1 => {
                    total = total + r.abs();
                    // subgradient 0 at r == 0
                    if r > T::zero() {
                        T::one()
                    } else if r < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }
            }
        })
        .collect();
    (total, grad)
}

fn check_target(t: &Topology, target: &Array2<f64>) -> Result<()> {
    if target.dim() != (t.n_outputs(), t.n_inputs()) {
        return Err(Error::invalid(format!(
            "target has shape {:?}, expected ({}, {})",
            target.dim(),
            t.n_outputs(),
            t.n_inputs()
        )));
    }
    Ok(())
}

fn check_weights(t: &Topology, w: &CascadeWeights) -> Result<()> {
    if w.values.len() != t.depth() || w.values.iter().zip(t.layers()).any(|(v, e)| v.len() != e.len()) {
        return Err(Error::invalid("weights are not aligned with the topology"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

/// Product of the per-layer matrices: the map from inputs to outputs, shape
/// `(n_outputs, n_inputs)`.
pub fn effective_matrix(w: &CascadeWeights, t: &Topology) -> Array2<f64> {
    let n0 = t.n_inputs();
    let acts = forward_acts(t, &w.values, &identity_batch::<f64>(n0), n0);
    Array2::from_shape_vec((t.n_outputs(), n0), acts.last().unwrap().clone()).unwrap()
}

/// Propagates a batch `x` of shape `(n_inputs, b)` through the linear cascade.
pub fn forward(w: &CascadeWeights, t: &Topology, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_weights(t, w)?;
    let (rows, b) = x.dim();
    if rows != t.n_inputs() {
        return Err(Error::invalid(format!("input has {rows} rows, expected {}", t.n_inputs())));
    }
    let flat: Vec<f64> = x.iter().copied().collect();
    let acts = forward_acts(t, &w.values, &flat, b);
    Ok(Array2::from_shape_vec((t.n_outputs(), b), acts.last().unwrap().clone()).unwrap())
}

/// Reconstruction loss of `target` and its gradient w.r.t. every edge value
/// (zero on constant edges).
pub fn loss_and_gradient(t: &Topology, w: &CascadeWeights, target: &Array2<f64>, loss: Loss) -> Result<(f64, Vec<Vec<f64>>)> {
    check_target(t, target)?;
    check_weights(t, w)?;
    let n0 = t.n_inputs();
    let acts = forward_acts(t, &w.values, &identity_batch::<f64>(n0), n0);
    let tgt: Vec<f64> = target.iter().copied().collect();
    let (value, grad_out) = loss_terms(acts.last().unwrap(), &tgt, loss);
    let grads = backward(t, &w.values, &acts, grad_out, n0);
    Ok((value, grads))
}

pub fn reconstruction_loss(t: &Topology, w: &CascadeWeights, target: &Array2<f64>, loss: Loss) -> Result<f64> {
    loss_and_gradient(t, w, target, loss).map(|(l, _)| l)
}

struct TrainOutcome {
    weights: Vec<Vec<f64>>,
    trace: Vec<(usize, f64)>,
    final_loss: f64,
}

fn train_core<T: Float>(t: &Topology, w0: &[Vec<f64>], target: &Array2<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let n0 = t.n_inputs();
    let x = identity_batch::<T>(n0);
    let tgt: Vec<T> = target.iter().map(|&v| T::from(v).unwrap()).collect();
    let mut w: Vec<Vec<T>> = cast_layers(w0);
    let mut trace = Vec::new();
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => {
            let zeros: Vec<Vec<T>> = w.iter().map(|l| vec![T::zero(); l.len()]).collect();
            Some((zeros.clone(), zeros))
        }
    };
    let (beta1, beta2) = (T::from(0.9).unwrap(), T::from(0.999).unwrap());
    let adam_eps = T::from(1e-8).unwrap();

    let evaluate = |w: &[Vec<T>]| {
        let acts = forward_acts(t, w, &x, n0);
        let (value, grad) = loss_terms(acts.last().unwrap(), &tgt, cfg.loss);
        (acts, value.to_f64().unwrap(), grad)
    };

    for step in 0..cfg.steps {
        let (acts, value, grad_out) = evaluate(&w);
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        if step % cfg.record_every == 0 {
            trace.push((step, value));
        }
        let lr = match cfg.schedule {
            LrSchedule::Constant => cfg.learning_rate,
            LrSchedule::LinearDecay => cfg.learning_rate * (1.0 - step as f64 / cfg.steps as f64),
        };
        let lr = T::from(lr).unwrap();
        let grads = backward(t, &w, &acts, grad_out, n0);
        // bias corrections for Adam
        let c1 = T::one() - beta1.powi(step as i32 + 1);
        let c2 = T::one() - beta2.powi(step as i32 + 1);
        for (l, edges) in t.layers().iter().enumerate() {
            for (idx, e) in edges.iter().enumerate() {
                if !e.kind.is_trainable() {
                    continue;
                }
                let g = grads[l][idx];
                let update = match adam.as_mut() {
                    None => g,
                    Some((m, v)) => {
                        m[l][idx] = beta1 * m[l][idx] + (T::one() - beta1) * g;
                        v[l][idx] = beta2 * v[l][idx] + (T::one() - beta2) * g * g;
                        (m[l][idx] / c1) / ((v[l][idx] / c2).sqrt() + adam_eps)
                    }
                };
                w[l][idx] = w[l][idx] - lr * update;
            }
        }
    }
    let (_, final_loss, _) = evaluate(&w);
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    if trace.last().map(|&(s, _)| s) != Some(cfg.steps) {
        trace.push((cfg.steps, final_loss));
    }
    // constants round-trip exactly through f32 only if representable; restore them
    let weights = w
        .iter()
        .zip(t.layers())
        .zip(w0)
        .map(|((vals, edges), orig)| {
            vals.iter()
                .zip(edges)
                .zip(orig)
                .map(|((v, e), o)| if e.kind.is_trainable() { v.to_f64().unwrap() } else { *o })
                .collect()
        })
        .collect();
    Ok(TrainOutcome { weights, trace, final_loss })
}

/// Trains from explicit starting weights and returns the report together with
/// the trained weights.
pub fn train_from(
    t: &Topology,
    start: &CascadeWeights,
    target: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(ReconReport, CascadeWeights)> {
    cfg.validate()?;
    check_target(t, target)?;
    check_weights(t, start)?;
    let outcome = match cfg.precision {
        Precision::F64 => train_core::<f64>(t, &start.values, target, cfg)?,
        Precision::F32 => train_core::<f32>(t, &start.values, target, cfg)?,
    };
    let weights = CascadeWeights { values: outcome.weights };
    let l0 = count_l0_satisfied(&weights, t, target, cfg.epsilon_l0)?;
    let ratio_count = if has_diagonal_layer(t) {
        let rc = count_ratios(l0, t.n_outputs());
        if rc.magnitudes_unsatisfied {
            log::warn!("{}: only {l0} constraints satisfied for {} outputs", t.name(), t.n_outputs());
        }
        rc.ratios as i64
    } else {
        -1
    };
    let report = ReconReport {
        final_loss: outcome.final_loss,
        loss_trace: outcome.trace,
        l0_satisfied: l0,
        ratio_count,
        trainable_params: t.trainable_edge_count(),
        topology_name: t.name().to_string(),
        seed: cfg.seed,
    };
    Ok((report, weights))
}

/// Full-batch gradient descent on `||target - effective_matrix||` starting
/// from the initialization described by `spec`.
pub fn train_reconstruction(t: &Topology, target: &Array2<f64>, spec: InitSpec, cfg: &TrainConfig) -> Result<ReconReport> {
    let start = init_weights(t, spec);
    train_from(t, &start, target, cfg).map(|(r, _)| r)
}

/// Appends a layer with a single trainable edge `i -> i` per output.
pub fn append_diagonal_layer(t: &Topology) -> Topology {
    let n = t.n_outputs();
    let mut widths = t.layer_widths().to_vec();
    widths.push(n);
    let mut layers = t.layers().to_vec();
    layers.push((0..n).map(|i| Edge::trainable(i, i)).collect());
    Topology::new(format!("{}+diag", t.name()), widths, layers).expect("diagonal layer is valid")
}

/// Whether the last layer is a trainable diagonal.
pub fn has_diagonal_layer(t: &Topology) -> bool {
    let widths = t.layer_widths();
    let l = widths.len();
    l >= 3
        && widths[l - 1] == widths[l - 2]
        && t.layers().last().is_some_and(|edges| {
            edges.len() == widths[l - 1] && edges.iter().all(|e| e.src == e.dst && e.kind.is_trainable())
        })
}

/// Number of target entries reconstructed to within `eps`.
pub fn count_l0_satisfied(w: &CascadeWeights, t: &Topology, target: &Array2<f64>, eps: f64) -> Result<usize> {
    check_target(t, target)?;
    check_weights(t, w)?;
    let m = effective_matrix(w, t);
    Ok(m.iter().zip(target.iter()).filter(|(a, b)| (*a - *b).abs() < eps).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatioCount {
    pub ratios: usize,
    /// Fewer constraints were satisfied than there are output magnitudes.
    pub magnitudes_unsatisfied: bool,
}

/// Ratios satisfied by a network ending in a diagonal layer: every output's
/// magnitude accounts for one satisfied constraint, the rest are ratios.
pub fn count_ratios(satisfied: usize, n_out: usize) -> RatioCount {
    RatioCount { ratios: satisfied.saturating_sub(n_out), magnitudes_unsatisfied: satisfied < n_out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{gen_dense, gen_identity, gen_random};
    use ndarray::array;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        crate::experiments::gaussian_target(rows, cols, seed)
    }

    #[test]
    fn identity_and_dense_effective_matrix() {
        let id = gen_identity(3).unwrap();
        let w = init_weights(&id, InitSpec::sparse(0));
        assert_eq!(effective_matrix(&w, &id), Array2::<f64>::eye(3));

        let d = gen_dense(3, 2).unwrap();
        // edges are sorted (dst, src) so values fill the matrix row by row
        let w = CascadeWeights::new(&d, vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(effective_matrix(&w, &d), array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn effective_matrix_matches_basis_forward() {
        let t = gen_random(6, 5, 3, 0.5, 1).unwrap();
        let w = init_weights(&t, InitSpec::sparse(2));
        let m = effective_matrix(&w, &t);
        for i in 0..6 {
            let mut e = Array2::zeros((6, 1));
            e[[i, 0]] = 1.0;
            let col = forward(&w, &t, &e).unwrap();
            for k in 0..5 {
                assert_eq!(col[[k, 0]], m[[k, i]]);
            }
        }
        let x = gaussian(6, 4, 9);
        assert_eq!(forward(&w, &t, &Array2::<f64>::eye(6)).unwrap(), m);
        assert!(forward(&w, &t, &Array2::zeros((6, 3))).unwrap().iter().all(|&v| v == 0.0));
        let y = forward(&w, &t, &x).unwrap();
        let y3 = forward(&w, &t, &(&x * 3.0)).unwrap();
        for (a, b) in y.iter().zip(y3.iter()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_weights_validated() {
        let t = gen_identity(2).unwrap();
        assert!(CascadeWeights::new(&t, vec![vec![1.0, 2.0]]).is_err());
        assert!(CascadeWeights::new(&t, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn dense_l2_converges() {
        let t = gen_dense(4, 4).unwrap();
        let target = gaussian(4, 4, 3);
        let r = train_reconstruction(&t, &target, InitSpec::sparse(1), &TrainConfig::l2()).unwrap();
        assert!(r.final_loss < 1e-10, "{}", r.final_loss);
        assert_eq!(r.l0_satisfied, 16);
        assert_eq!(r.ratio_count, -1);
        assert!(r.final_loss <= r.loss_trace[0].1);
        assert!(r.trace_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn start_at_target_stays_put() {
        let t = gen_random(5, 5, 2, 0.6, 4).unwrap();
        let w = init_weights(&t, InitSpec::sparse(4));
        let target = effective_matrix(&w, &t);
        let (r, w2) = train_from(&t, &w, &target, &TrainConfig { steps: 50, ..TrainConfig::l2() }).unwrap();
        assert_eq!(r.loss_trace[0], (0, 0.0));
        assert_eq!(r.final_loss, 0.0);
        assert_eq!(w, w2);
    }

    #[test]
    fn diverges_with_huge_step() {
        let t = gen_random(8, 8, 4, 1.0, 0).unwrap();
        let target = gaussian(8, 8, 0);
        let cfg = TrainConfig { learning_rate: 1e6, steps: 200, ..TrainConfig::l2() };
        match train_reconstruction(&t, &target, InitSpec::sparse(0), &cfg) {
            Err(Error::Diverged { step }) => assert!(step > 0 && step < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let t = gen_dense(3, 3).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::l2() };
        assert!(train_reconstruction(&t, &gaussian(3, 3, 0), InitSpec::sparse(0), &cfg).is_err());
        let cfg = TrainConfig { epsilon_l0: 0.0, ..TrainConfig::l2() };
        assert!(train_reconstruction(&t, &gaussian(3, 3, 0), InitSpec::sparse(0), &cfg).is_err());
        assert!(train_reconstruction(&t, &gaussian(2, 3, 0), InitSpec::sparse(0), &TrainConfig::l2()).is_err());
    }

    #[test]
    fn diagonal_layer() {
        let t = gen_dense(3, 4).unwrap();
        let d = append_diagonal_layer(&t);
        assert_eq!(d.edge_count(), t.edge_count() + 4);
        assert_eq!(d.trainable_edge_count(), t.trainable_edge_count() + 4);
        assert!(has_diagonal_layer(&d));
        assert!(!has_diagonal_layer(&t));
        let w = init_weights(&t, InitSpec::sparse(5));
        let mut vals = w.values().to_vec();
        vals.push(vec![1.0; 4]);
        let wd = CascadeWeights::new(&d, vals).unwrap();
        assert_eq!(effective_matrix(&wd, &d), effective_matrix(&w, &t));
    }

    #[test]
    fn l0_counting() {
        let t = gen_dense(3, 3).unwrap();
        let w = init_weights(&t, InitSpec::sparse(1));
        let m = effective_matrix(&w, &t);
        assert_eq!(count_l0_satisfied(&w, &t, &m, 1e-12).unwrap(), 9);
        assert_eq!(count_l0_satisfied(&w, &t, &gaussian(3, 3, 8), f64::MIN_POSITIVE).unwrap(), 0);
    }

    #[test]
    fn ratio_counting() {
        assert_eq!(count_ratios(3, 2), RatioCount { ratios: 1, magnitudes_unsatisfied: false });
        assert_eq!(count_ratios(25, 5).ratios, 20);
        assert_eq!(count_ratios(0, 4), RatioCount { ratios: 0, magnitudes_unsatisfied: true });
    }

    #[test]
    fn f32_training_tracks_f64() {
        let t = gen_dense(4, 4).unwrap();
        let target = gaussian(4, 4, 2);
        let cfg = TrainConfig { steps: 300, ..TrainConfig::l2() };
        let a = train_reconstruction(&t, &target, InitSpec::sparse(1), &cfg).unwrap();
        let b = train_reconstruction(&t, &target, InitSpec::sparse(1), &TrainConfig { precision: Precision::F32, ..cfg }).unwrap();
        assert!(b.final_loss < 1e-6 && a.final_loss < 1e-10);
    }
}
