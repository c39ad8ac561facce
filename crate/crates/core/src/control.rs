//! Data-free controllability of a topology.
//!
//! `C^l[i, j, k]` is how much control the optimizer has over the ratio of
//! cascade inputs `i / j` at neuron `k` of layer `l`. Control enters at
//! neurons with trainable in-edges (`ΔC`, capped by `min(t, k - 1)` per
//! neuron), is split across a neuron's out-edges by the ratio tensor `R`,
//! and is clamped so that `C[a, b] + C[b, a] <= 1`. Training maximizes the
//! number of ratios every output controls.
//!
//! Internally tensors are stored neuron-major: `C^l` is `n_l` rows of
//! `n0 * n0` pair entries, pair `(i, j)` at index `i * n0 + j`.

use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Topology;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of the initial free parameters.
    pub init_scale: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { iters: 1000, learning_rate: 0.1, seed: 0, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMatrix {
    /// `n_inputs x n_outputs`, `K[i, k] = sum_j C^L[i, j, k]`.
    pub k: Array2<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl KMatrix {
    pub fn total(&self) -> f64 {
        self.k.sum()
    }

    /// Rows are inputs, columns outputs, followed by a `# mean=…, variance=…` line.
    pub fn to_csv(&self) -> String {
        use crate::experiments::fmt_float;
        let mut out = String::new();
        for row in self.k.rows() {
            let cells: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out.push_str(&format!("# mean={}, variance={}\n", fmt_float(self.mean), fmt_float(self.variance)));
        out
    }
}

/// `(C ⋄ R)[i, j, k] = sum_m C[i, j, m] R[i, j, k, m]`.
pub fn diamond(c: &Array3<f64>, r: &Array4<f64>) -> Result<Array3<f64>> {
    let (q, q2, rr) = c.dim();
    let (a, b, s, r2) = r.dim();
    if q != q2 || a != q || b != q || r2 != rr {
        return Err(Error::invalid(format!("diamond shape mismatch: C {:?}, R {:?}", c.dim(), r.dim())));
    }
    let mut out = Array3::zeros((q, q, s));
    for i in 0..q {
        for j in 0..q {
            for k in 0..s {
                out[[i, j, k]] = (0..rr).map(|m| c[[i, j, m]] * r[[i, j, k, m]]).sum();
            }
        }
    }
    Ok(out)
}

/// `sum_k ((n_in - 1) - sum_{i,j} C^L[i, j, k])^2`.
pub fn control_loss(c_l: &Array3<f64>, n_in: usize) -> f64 {
    let target = n_in as f64 - 1.0;
    (0..c_l.dim().2)
        .map(|k| {
            let s: f64 = c_l.index_axis(ndarray::Axis(2), k).sum();
            (target - s).powi(2)
        })
        .sum()
}

/// Sums `C^L` over the second input index.
pub fn k_matrix(c_l: &Array3<f64>) -> KMatrix {
    let k = c_l.sum_axis(ndarray::Axis(1));
    let n = k.len() as f64;
    let mean = k.sum() / n;
    let variance = k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    KMatrix { k, mean, variance }
}

/// `(softplus(x), sigmoid(x))` from a single exponential.
fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    // ln(1 + e) loses nothing once e is above the f64 epsilon, and is cheaper than ln_1p
    let tail = if e < 1e-12 { e } else { (1.0 + e).ln() };
    if x > 0.0 {
        (x + tail, 1.0 / (1.0 + e))
    } else {
        (tail, e / (1.0 + e))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Static per-layer structure derived from the topology.
#[derive(Debug, Clone)]
struct LayerShape {
    n_src: usize,
    n_dst: usize,
    /// (src, dst) per edge, canonical order
    edges: Vec<(usize, usize)>,
    /// edge indices leaving each source neuron
    out_groups: Vec<Vec<usize>>,
    /// cap on the summed added control per destination neuron
    caps: Vec<f64>,
    /// pairs (i, j), i != j, with both inputs reaching the destination neuron;
    /// empty when the cap is zero
    valid_pairs: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ratios: Vec<f64>,
    raw: Vec<f64>,
    clamped: Vec<f64>,
    softplus: Vec<f64>,
    /// derivative of the softplus terms
    slopes: Vec<f64>,
    /// per destination neuron: (sum of softplus terms, applied scale)
    delta_scale: Vec<(f64, f64)>,
}

/// Controllability tensors of a topology together with the free parameters
/// behind the ratio splits and the added control.
#[derive(Debug, Clone)]
pub struct ControlState {
    topology: Topology,
    n_in: usize,
    shapes: Vec<LayerShape>,
    ratio_params: Vec<Vec<f64>>,
    delta_params: Vec<Vec<f64>>,
    control: Vec<Vec<f64>>,
}

pub struct ControlGradients {
    pub ratio: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

impl ControlState {
    /// Initial state with free parameters drawn from `N(0, init_scale^2)`.
    pub fn new(t: &Topology, seed: u64, init_scale: f64) -> Result<Self> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::invalid(format!("init_scale must be finite and >= 0, got {init_scale}")));
        }
        let n_in = t.n_inputs();
        let q = n_in * n_in;
        let reach = t.input_reach();
        let widths = t.layer_widths();
        let shapes: Vec<LayerShape> = t
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let (n_src, n_dst) = (widths[l], widths[l + 1]);
                let mut out_groups = vec![Vec::new(); n_src];
                let mut fan_in = vec![0usize; n_dst];
                let mut trainable = vec![0usize; n_dst];
                for (idx, e) in layer.iter().enumerate() {
                    out_groups[e.src].push(idx);
                    fan_in[e.dst] += 1;
                    trainable[e.dst] += usize::from(e.kind.is_trainable());
                }
                let caps: Vec<f64> = (0..n_dst).map(|k| trainable[k].min(fan_in[k].saturating_sub(1)) as f64).collect();
                let valid_pairs = (0..n_dst)
                    .map(|k| {
                        if caps[k] == 0.0 {
                            return Vec::new();
                        }
                        let inputs: Vec<usize> = reach[l + 1][k].ones().collect();
                        let mut pairs = Vec::new();
                        for &i in &inputs {
                            for &j in &inputs {
                                if i != j {
                                    pairs.push((i * n_in + j) as u32);
                                }
                            }
                        }
                        pairs.sort_unstable();
                        pairs
                    })
                    .collect();
                LayerShape {
                    n_src,
                    n_dst,
                    edges: layer.iter().map(|e| (e.src, e.dst)).collect(),
                    out_groups,
                    caps,
                    valid_pairs,
                }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_scale).expect("valid scale");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let mut ratio_params = Vec::with_capacity(shapes.len());
        let mut delta_params = Vec::with_capacity(shapes.len());
        for s in &shapes {
            ratio_params.push(draw(s.edges.len() * q));
            delta_params.push(draw(s.n_dst * q));
        }
        let mut state = ControlState {
            topology: t.clone(),
            n_in,
            shapes,
            ratio_params,
            delta_params,
            control: Vec::new(),
        };
        state.refresh();
        Ok(state)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    fn pairs(&self) -> usize {
        self.n_in * self.n_in
    }

    pub fn ratio_params(&self) -> &[Vec<f64>] {
        &self.ratio_params
    }

    pub fn delta_params(&self) -> &[Vec<f64>] {
        &self.delta_params
    }

    pub fn ratio_params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.ratio_params
    }

    pub fn delta_params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.delta_params
    }

    /// Neuron cap `min(t, k - 1)` on summed added control, per layer.
    pub fn delta_caps(&self, layer: usize) -> &[f64] {
        &self.shapes[layer].caps
    }

    /// Recomputes the stored controllability tensors from the parameters.
    pub fn refresh(&mut self) {
        let (control, _) = self.forward();
        self.control = control;
    }

    /// `C^l` as an `(n0, n0, n_l)` tensor.
    pub fn control(&self, layer: usize) -> Array3<f64> {
        let n = self.n_in;
        let width = self.topology.layer_widths()[layer];
        let c = &self.control[layer];
        Array3::from_shape_fn((n, n, width), |(i, j, k)| c[k * n * n + i * n + j])
    }

    /// `C^L`.
    pub fn output_control(&self) -> Array3<f64> {
        self.control(self.topology.depth())
    }

    pub fn loss(&self) -> f64 {
        let target = self.n_in as f64 - 1.0;
        self.control.last().unwrap().chunks(self.pairs()).map(|row| (target - row.iter().sum::<f64>()).powi(2)).sum()
    }

    pub fn k_matrix(&self) -> KMatrix {
        k_matrix(&self.output_control())
    }

    /// Ratio split `R^l` as an `(n0, n0, n_{l+1}, n_l)` tensor, zero off the edges.
    pub fn ratio_tensor(&self, layer: usize) -> Array4<f64> {
        let n = self.n_in;
        let q = self.pairs();
        let shape = &self.shapes[layer];
        let ratios = self.ratio_values(layer);
        let mut r = Array4::zeros((n, n, shape.n_dst, shape.n_src));
        for (e, &(src, dst)) in shape.edges.iter().enumerate() {
            for p in 0..q {
                r[[p / n, p % n, dst, src]] = ratios[e * q + p];
            }
        }
        r
    }

    /// Added control per destination neuron of layer `layer + 1`, as an
    /// `(n0, n0, n_{l+1})` tensor.
    pub fn delta_tensor(&self, layer: usize) -> Array3<f64> {
        let n = self.n_in;
        let q = self.pairs();
        let (sp, _, scales) = self.delta_values(layer);
        let shape = &self.shapes[layer];
        let mut d = Array3::zeros((n, n, shape.n_dst));
        for k in 0..shape.n_dst {
            for &p in &shape.valid_pairs[k] {
                let p = p as usize;
                d[[p / n, p % n, k]] = sp[k * q + p] * scales[k].1;
            }
        }
        d
    }

    fn ratio_values(&self, layer: usize) -> Vec<f64> {
        let q = self.pairs();
        let shape = &self.shapes[layer];
        let theta = &self.ratio_params[layer];
        let mut ratios = vec![0.0; theta.len()];
        let mut peak = vec![0.0; q];
        let mut sums = vec![0.0; q];
        for group in &shape.out_groups {
            match group.as_slice() {
                [] => {}
                &[e] => ratios[e * q..(e + 1) * q].fill(1.0),
                &[a, b] => {
                    // two-way softmax is a logistic of the difference
                    for p in 0..q {
                        let ra = sigmoid(theta[a * q + p] - theta[b * q + p]);
                        ratios[a * q + p] = ra;
                        ratios[b * q + p] = 1.0 - ra;
                    }
                }
                _ => {
                    // numerically stable softmax across the group, per pair
                    peak.fill(f64::NEG_INFINITY);
                    for &e in group {
                        for (m, &t) in peak.iter_mut().zip(&theta[e * q..(e + 1) * q]) {
                            *m = m.max(t);
                        }
                    }
                    sums.fill(0.0);
                    for &e in group {
                        let row = &mut ratios[e * q..(e + 1) * q];
                        for (((v, &t), &m), s) in row.iter_mut().zip(&theta[e * q..(e + 1) * q]).zip(&peak).zip(sums.iter_mut()) {
                            *v = (t - m).exp();
                            *s += *v;
                        }
                    }
                    for &e in group {
                        for (v, s) in ratios[e * q..(e + 1) * q].iter_mut().zip(&sums) {
                            *v /= s;
                        }
                    }
                }
            }
        }
        ratios
    }

    fn delta_values(&self, layer: usize) -> (Vec<f64>, Vec<f64>, Vec<(f64, f64)>) {
        let q = self.pairs();
        let shape = &self.shapes[layer];
        let phi = &self.delta_params[layer];
        let mut sp = vec![0.0; phi.len()];
        let mut slopes = vec![0.0; phi.len()];
        let mut scales = vec![(0.0, 0.0); shape.n_dst];
        for k in 0..shape.n_dst {
            let pairs = &shape.valid_pairs[k];
            if pairs.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for &p in pairs {
                let idx = k * q + p as usize;
                let (v, slope) = softplus_sigmoid(phi[idx]);
                sp[idx] = v;
                slopes[idx] = slope;
                sum += v;
            }
            let scale = if sum > shape.caps[k] { shape.caps[k] / sum } else { 1.0 };
            scales[k] = (sum, scale);
        }
        (sp, slopes, scales)
    }

    fn forward(&self) -> (Vec<Vec<f64>>, Vec<LayerCache>) {
        let n = self.n_in;
        let q = self.pairs();
        let widths = self.topology.layer_widths();
        let mut control = Vec::with_capacity(widths.len());
        control.push(vec![0.0; widths[0] * q]);
        let mut caches = Vec::with_capacity(self.shapes.len());
        for (l, shape) in self.shapes.iter().enumerate() {
            let ratios = self.ratio_values(l);
            let (sp, slopes, delta_scale) = self.delta_values(l);
            let prev = &control[l];
            let mut raw = vec![0.0; shape.n_dst * q];
            for (e, &(src, dst)) in shape.edges.iter().enumerate() {
                let c = &prev[src * q..(src + 1) * q];
                let r = &ratios[e * q..(e + 1) * q];
                for ((o, &cv), &rv) in raw[dst * q..(dst + 1) * q].iter_mut().zip(c).zip(r) {
                    *o += cv * rv;
                }
            }
            for k in 0..shape.n_dst {
                let scale = delta_scale[k].1;
                for &p in &shape.valid_pairs[k] {
                    let idx = k * q + p as usize;
                    raw[idx] += sp[idx] * scale;
                }
            }
            let clamped: Vec<f64> = raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
            let mut next = vec![0.0; shape.n_dst * q];
            for k in 0..shape.n_dst {
                let y = &clamped[k * q..(k + 1) * q];
                let z = &mut next[k * q..(k + 1) * q];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let (a, b) = (y[i * n + j], y[j * n + i]);
                        z[i * n + j] = a / (a + b).max(1.0);
                    }
                }
            }
            control.push(next);
            caches.push(LayerCache { ratios, raw, clamped, softplus: sp, slopes, delta_scale });
        }
        (control, caches)
    }

    /// Loss and its gradient with respect to every free parameter.
    pub fn loss_and_gradients(&self) -> (f64, ControlGradients) {
        let (control, caches) = self.forward();
        let (loss, grads) = self.backward(&control, &caches);
        (loss, grads)
    }

    fn backward(&self, control: &[Vec<f64>], caches: &[LayerCache]) -> (f64, ControlGradients) {
        let n = self.n_in;
        let q = self.pairs();
        let target = n as f64 - 1.0;
        let last = control.last().unwrap();
        let mut loss = 0.0;
        let mut grad_c = vec![0.0; last.len()];
        for (row, g) in last.chunks(q).zip(grad_c.chunks_mut(q)) {
            let gap = target - row.iter().sum::<f64>();
            loss += gap * gap;
            g.iter_mut().for_each(|v| *v = -2.0 * gap);
        }
        // diagonal entries are pinned; their gradient is irrelevant
        let mut ratio_grads: Vec<Vec<f64>> = self.ratio_params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut delta_grads: Vec<Vec<f64>> = self.delta_params.iter().map(|p| vec![0.0; p.len()]).collect();

        for l in (0..self.shapes.len()).rev() {
            let shape = &self.shapes[l];
            let cache = &caches[l];
            // pair rescale, then clamp
            let mut g_raw = vec![0.0; shape.n_dst * q];
            for k in 0..shape.n_dst {
                let y = &cache.clamped[k * q..(k + 1) * q];
                let raw = &cache.raw[k * q..(k + 1) * q];
                let gz = &grad_c[k * q..(k + 1) * q];
                let gr = &mut g_raw[k * q..(k + 1) * q];
                for i in 0..n {
                    for j in (i + 1)..n {
                        let (ij, ji) = (i * n + j, j * n + i);
                        let (a, b) = (y[ij], y[ji]);
                        let s = a + b;
                        let (ga, gb) = if s > 1.0 {
                            let s2 = s * s;
                            (
                                gz[ij] * (1.0 / s - a / s2) - gz[ji] * b / s2,
                                gz[ji] * (1.0 / s - b / s2) - gz[ij] * a / s2,
                            )
                        } else {
                            (gz[ij], gz[ji])
                        };
                        // raw is never negative, so only the upper clamp can be active
                        gr[ij] = if raw[ij] < 1.0 { ga } else { 0.0 };
                        gr[ji] = if raw[ji] < 1.0 { gb } else { 0.0 };
                    }
                }
            }

            // added control
            let dg = &mut delta_grads[l];
            for k in 0..shape.n_dst {
                let pairs = &shape.valid_pairs[k];
                if pairs.is_empty() {
                    continue;
                }
                let (sum, scale) = cache.delta_scale[k];
                let cap = shape.caps[k];
                let inner: f64 = if scale < 1.0 {
                    pairs.iter().map(|&p| g_raw[k * q + p as usize] * cache.softplus[k * q + p as usize]).sum::<f64>()
                } else {
                    0.0
                };
                for &p in pairs {
                    let idx = k * q + p as usize;
                    let g_sp = if scale < 1.0 { cap / sum * g_raw[idx] - cap / (sum * sum) * inner } else { g_raw[idx] };
                    dg[idx] = g_sp * cache.slopes[idx];
                }
            }

            // diamond and softmax
            let prev = &control[l];
            let mut g_prev = vec![0.0; shape.n_src * q];
            let mut g_ratio = vec![0.0; cache.ratios.len()];
            for (e, &(src, dst)) in shape.edges.iter().enumerate() {
                let c = &prev[src * q..(src + 1) * q];
                let r = &cache.ratios[e * q..(e + 1) * q];
                let gr = &g_raw[dst * q..(dst + 1) * q];
                let gp = &mut g_prev[src * q..(src + 1) * q];
                let gratio = &mut g_ratio[e * q..(e + 1) * q];
                for p in 0..q {
                    gp[p] += gr[p] * r[p];
                    gratio[p] = gr[p] * c[p];
                }
            }
            let rg = &mut ratio_grads[l];
            let mut dot = vec![0.0; q];
            for group in &shape.out_groups {
                if group.len() < 2 {
                    continue;
                }
                dot.fill(0.0);
                for &e in group {
                    let (r, g) = (&cache.ratios[e * q..(e + 1) * q], &g_ratio[e * q..(e + 1) * q]);
                    for ((d, &rv), &gv) in dot.iter_mut().zip(r).zip(g) {
                        *d += rv * gv;
                    }
                }
                for &e in group {
                    let (r, g) = (&cache.ratios[e * q..(e + 1) * q], &g_ratio[e * q..(e + 1) * q]);
                    for (((out, &rv), &gv), &d) in rg[e * q..(e + 1) * q].iter_mut().zip(r).zip(g).zip(&dot) {
                        *out = rv * (gv - d);
                    }
                }
            }
            grad_c = g_prev;
        }
        (loss, ControlGradients { ratio: ratio_grads, delta: delta_grads })
    }

    /// Plain gradient descent. `on_iter` sees the state whose stored tensors
    /// match its parameters, before each update.
    pub fn train_with(&mut self, iters: usize, lr: f64, mut on_iter: impl FnMut(usize, &ControlState, f64)) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        for it in 0..iters {
            let (control, caches) = self.forward();
            self.control = control;
            let (loss, grads) = self.backward(&self.control, &caches);
            if !loss.is_finite() {
                return Err(Error::Diverged { step: it });
            }
            on_iter(it, self, loss);
            for (p, g) in self.ratio_params.iter_mut().zip(&grads.ratio) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
            for (p, g) in self.delta_params.iter_mut().zip(&grads.delta) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        self.refresh();
        if !self.loss().is_finite() {
            return Err(Error::Diverged { step: iters });
        }
        Ok(())
    }

    pub fn train(&mut self, iters: usize, lr: f64) -> Result<()> {
        self.train_with(iters, lr, |_, _, _| {})
    }

    /// Verifies the bound, base-case, simplex and cap invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.n_in;
        let q = self.pairs();
        if self.control[0].iter().any(|&v| v != 0.0) {
            return Err("C^0 is not zero".into());
        }
        for (l, c) in self.control.iter().enumerate() {
            for (k, row) in c.chunks(q).enumerate() {
                for i in 0..n {
                    if row[i * n + i] != 0.0 {
                        return Err(format!("layer {l} neuron {k}: diagonal pair ({i},{i}) is nonzero"));
                    }
                    for j in 0..n {
                        let v = row[i * n + j];
                        if !(-TOL..=1.0 + TOL).contains(&v) {
                            return Err(format!("layer {l} neuron {k}: C[{i},{j}] = {v} outside [0,1]"));
                        }
                        if v + row[j * n + i] > 1.0 + TOL {
                            return Err(format!("layer {l} neuron {k}: pair ({i},{j}) sums above 1"));
                        }
                    }
                }
            }
        }
        for l in 0..self.shapes.len() {
            let shape = &self.shapes[l];
            let ratios = self.ratio_values(l);
            for (m, group) in shape.out_groups.iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                for p in 0..q {
                    let s: f64 = group.iter().map(|&e| ratios[e * q + p]).sum();
                    if (s - 1.0).abs() > TOL || group.iter().any(|&e| !(0.0..=1.0).contains(&ratios[e * q + p])) {
                        return Err(format!("layer {l} neuron {m}: ratio split for pair {p} is not a distribution"));
                    }
                }
            }
            let (sp, _, scales) = self.delta_values(l);
            for k in 0..shape.n_dst {
                let total: f64 = shape.valid_pairs[k].iter().map(|&p| sp[k * q + p as usize] * scales[k].1).sum();
                if total > shape.caps[k] + TOL {
                    return Err(format!("layer {} neuron {k}: added control {total} above cap {}", l + 1, shape.caps[k]));
                }
            }
        }
        Ok(())
    }

    /// The same state for the topology with input `i` renamed `perm[i]`; every
    /// parameter indexed by an input pair moves with the permutation.
    pub fn relabel_inputs(&self, perm: &[usize]) -> Result<ControlState> {
        let t = self.topology.relabel_inputs(perm)?;
        let n = self.n_in;
        let q = self.pairs();
        let mut out = ControlState::new(&t, 0, 0.0)?;
        let map_pair = |p: usize| perm[p / n] * n + perm[p % n];
        for l in 0..self.shapes.len() {
            let old = &self.shapes[l];
            let new = &out.shapes[l];
            for (e, &(src, dst)) in old.edges.iter().enumerate() {
                let key = if l == 0 { (perm[src], dst) } else { (src, dst) };
                let e2 = new.edges.iter().position(|&x| x == key).expect("edge survives relabeling");
                for p in 0..q {
                    out.ratio_params[l][e2 * q + map_pair(p)] = self.ratio_params[l][e * q + p];
                }
            }
            for k in 0..old.n_dst {
                for p in 0..q {
                    out.delta_params[l][k * q + map_pair(p)] = self.delta_params[l][k * q + p];
                }
            }
        }
        out.refresh();
        Ok(out)
    }
}

/// Trains the controllability network of `t` from a seeded initialization.
pub fn train_control(t: &Topology, cfg: &ControlConfig) -> Result<ControlState> {
    let mut state = ControlState::new(t, cfg.seed, cfg.init_scale)?;
    state.train(cfg.iters, cfg.learning_rate)?;
    Ok(state)
}

/// Like [`propagate`] for an existing state: the output-layer tensor.
pub fn propagate(state: &ControlState) -> Array3<f64> {
    let (control, _) = state.forward();
    let n = state.n_in;
    let c = control.last().unwrap();
    Array3::from_shape_fn((n, n, state.topology.n_outputs()), |(i, j, k)| c[k * n * n + i * n + j])
}
