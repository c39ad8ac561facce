//! Trainability of random sparse cascades across depth and sparsity.

use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{fmt_float, load_idx_dataset, run_jobs, CsvRow};
use crate::engine::{backward, forward_acts};
use crate::error::{Error, Result};
use crate::init::{init_weights, InitScheme, InitSpec};
use crate::topology::{connectivity, gen_random_with_hidden, Topology};

/// Labels are the argmax of a fixed random one-hidden-layer tanh network
/// applied to Gaussian inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTeacher {
    pub seed: u64,
    pub n_in: usize,
    pub hidden: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Standard deviation of the hidden pre-activations. Small gains keep
    /// `tanh` near its linear range.
    pub gain: f64,
}

impl Default for SyntheticTeacher {
    fn default() -> Self {
        SyntheticTeacher { seed: 0, n_in: 32, hidden: 64, classes: 10, n_train: 4000, n_test: 1000, gain: 0.25 }
    }
}

struct Dataset {
    n_in: usize,
    classes: usize,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<usize>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<usize>,
}

impl SyntheticTeacher {
    fn sample(&self) -> Result<Dataset> {
        if self.n_in == 0 || self.hidden == 0 || self.classes < 2 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("teacher sizes must be positive with at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let w1 = Normal::new(0.0, self.gain / (self.n_in as f64).sqrt()).map_err(|_| Error::invalid("teacher gain must be finite and >= 0"))?;
        let w2 = Normal::new(0.0, 1.0 / (self.hidden as f64).sqrt()).unwrap();
        let first: Vec<f64> = (0..self.hidden * self.n_in).map(|_| w1.sample(&mut rng)).collect();
        let second: Vec<f64> = (0..self.classes * self.hidden).map(|_| w2.sample(&mut rng)).collect();
        let mut draw = |count: usize| {
            let mut xs = Vec::with_capacity(count);
            let mut ys = Vec::with_capacity(count);
            for _ in 0..count {
                let x: Vec<f64> = (0..self.n_in).map(|_| StandardNormal.sample(&mut rng)).collect();
                let h: Vec<f64> = first.chunks(self.n_in).map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().tanh()).collect();
                let logits = second.chunks(self.hidden).map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>());
                ys.push(argmax(logits));
                xs.push(x);
            }
            (xs, ys)
        };
        let (train_x, train_y) = draw(self.n_train);
        let (test_x, test_y) = draw(self.n_test);
        Ok(Dataset { n_in: self.n_in, classes: self.classes, train_x, train_y, test_x, test_y })
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values.enumerate().fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best }).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridTask {
    SyntheticTeacher(SyntheticTeacher),
    /// IDX image/label files; the last `test_fraction` of samples is held out.
    Idx { images: PathBuf, labels: PathBuf, test_fraction: f64 },
}

impl Default for GridTask {
    fn default() -> Self {
        GridTask::SyntheticTeacher(SyntheticTeacher::default())
    }
}

impl GridTask {
    fn load(&self) -> Result<Dataset> {
        match self {
            GridTask::SyntheticTeacher(t) => t.sample(),
            GridTask::Idx { images, labels, test_fraction } => {
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(Error::invalid(format!("test_fraction must lie in [0, 1), got {test_fraction}")));
                }
                let ds = load_idx_dataset(images, labels)?;
                let n_in = ds.images.first().map(Vec::len).ok_or_else(|| Error::Validation("empty IDX dataset".into()))?;
                let split = ((1.0 - test_fraction) * ds.images.len() as f64).round() as usize;
                let labels: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();
                Ok(Dataset {
                    n_in,
                    classes: 10,
                    train_x: ds.images[..split].to_vec(),
                    train_y: labels[..split].to_vec(),
                    test_x: ds.images[split..].to_vec(),
                    test_y: labels[split..].to_vec(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub hidden_width: usize,
    /// Number of hidden layers.
    pub depths: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub task: GridTask,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub init: InitScheme,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            hidden_width: 256,
            depths: (1..=20).collect(),
            sparsities: vec![0.0, 0.5, 0.75, 0.875, 15.0 / 16.0, 31.0 / 32.0, 63.0 / 64.0, 127.0 / 128.0, 255.0 / 256.0],
            task: GridTask::default(),
            epochs: 5,
            seeds: vec![0],
            init: InitScheme::SparseXavier,
            learning_rate: 0.05,
            batch_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub depth: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub connectivity: f64,
}

impl CsvRow for GridRow {
    const HEADER: &'static str = "depth,sparsity,seed,accuracy,connectivity";

    fn cells(&self) -> Vec<String> {
        vec![
            self.depth.to_string(),
            fmt_float(self.sparsity),
            self.seed.to_string(),
            fmt_float(self.accuracy),
            fmt_float(self.connectivity),
        ]
    }
}

fn softmax_xent_grad(logits: &[f64], labels: &[usize], classes: usize, batch: usize) -> Vec<f64> {
    // logits are (class, sample); gradient of the mean cross-entropy
    let mut grad = vec![0.0; classes * batch];
    for b in 0..batch {
        let max = (0..classes).map(|c| logits[c * batch + b]).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..classes).map(|c| (logits[c * batch + b] - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..classes {
            let target = if labels[b] == c { 1.0 } else { 0.0 };
            grad[c * batch + b] = (exps[c] / sum - target) / batch as f64;
        }
    }
    grad
}

fn gather(xs: &[Vec<f64>], idx: &[usize], n_in: usize) -> Vec<f64> {
    let batch = idx.len();
    let mut out = vec![0.0; n_in * batch];
    for (b, &i) in idx.iter().enumerate() {
        for (f, &v) in xs[i].iter().enumerate() {
            out[f * batch + b] = v;
        }
    }
    out
}

fn accuracy(t: &Topology, w: &[Vec<f64>], xs: &[Vec<f64>], ys: &[usize], classes: usize) -> f64 {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(500) {
        let batch = chunk.len();
        let acts = forward_acts(t, w, &gather(xs, chunk, t.n_inputs()), batch);
        let logits = acts.last().unwrap();
        for (b, &i) in chunk.iter().enumerate() {
            let pred = argmax((0..classes).map(|c| logits[c * batch + b]));
            correct += usize::from(pred == ys[i]);
        }
    }
    correct as f64 / xs.len() as f64
}

fn train_cell(spec: &GridSpec, data: &Dataset, depth: usize, sparsity: f64, seed: u64) -> Result<GridRow> {
    let t = gen_random_with_hidden(data.n_in, data.classes, depth + 1, spec.hidden_width, 1.0 - sparsity, seed)?;
    let conn = connectivity(&t).fraction;
    let mut w = init_weights(&t, InitSpec { scheme: spec.init, seed }).values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(spec.batch_size).enumerate() {
            let batch = chunk.len();
            let acts = forward_acts(&t, &w, &gather(&data.train_x, chunk, data.n_in), batch);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
            let grad_out = softmax_xent_grad(acts.last().unwrap(), &labels, data.classes, batch);
            let grads = backward(&t, &w, &acts, grad_out, batch);
            for (wl, gl) in w.iter_mut().zip(&grads) {
                for (v, g) in wl.iter_mut().zip(gl) {
                    *v -= spec.learning_rate * g;
                }
            }
            if w.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step: epoch * data.train_x.len().div_ceil(spec.batch_size) + step });
            }
        }
    }
    let acc = accuracy(&t, &w, &data.test_x, &data.test_y, data.classes);
    log::info!("grid depth={depth} sparsity={} seed={seed} acc={}", fmt_float(sparsity), fmt_float(acc));
    Ok(GridRow { depth, sparsity, seed, accuracy: acc, connectivity: conn })
}

/// Trains one random cascade per (depth, sparsity, seed) cell with linear
/// hidden layers and a softmax cross-entropy readout.
pub fn run_grid(spec: &GridSpec, jobs: usize) -> Result<Vec<GridRow>> {
    if let Some(&s) = spec.sparsities.iter().find(|&&s| !(0.0..1.0).contains(&s)) {
        return Err(Error::invalid(format!("sparsity must lie in [0, 1), got {s}")));
    }
    if spec.depths.contains(&0) {
        return Err(Error::invalid("depth must be >= 1"));
    }
    if spec.batch_size == 0 || spec.hidden_width == 0 || !(spec.learning_rate > 0.0) {
        return Err(Error::invalid("batch_size, hidden_width and learning_rate must be positive"));
    }
    let data = spec.task.load()?;
    let cells: Vec<(usize, f64, u64)> = spec
        .depths
        .iter()
        .flat_map(|&d| spec.sparsities.iter().flat_map(move |&s| spec.seeds.iter().map(move |&seed| (d, s, seed))))
        .collect();
    run_jobs(cells.len(), jobs, |c| {
        let (d, s, seed) = cells[c];
        train_cell(spec, &data, d, s, seed)
    })
}

/// Mean accuracy over seeds, indexed `(depth position, sparsity position)`.
pub fn accuracy_matrix(rows: &[GridRow], depths: &[usize], sparsities: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((depths.len(), sparsities.len()), |(d, s)| {
        let hits: Vec<f64> = rows
            .iter()
            .filter(|r| r.depth == depths[d] && r.sparsity == sparsities[s])
            .map(|r| r.accuracy)
            .collect();
        if hits.is_empty() {
            f64::NAN
        } else {
            hits.iter().sum::<f64>() / hits.len() as f64
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_is_deterministic_and_balanced_enough() {
        let t = SyntheticTeacher { n_train: 500, n_test: 100, ..Default::default() };
        let a = t.sample().unwrap();
        let b = t.sample().unwrap();
        assert_eq!(a.train_y, b.train_y);
        let distinct: std::collections::BTreeSet<_> = a.train_y.iter().collect();
        assert!(distinct.len() >= 5);
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.0, 0.5, 2.0, 0.1, 0.0];
        let labels = vec![2, 0];
        let g = softmax_xent_grad(&logits, &labels, 3, 2);
        let loss = |z: &[f64]| {
            (0..2)
                .map(|b| {
                    let s: f64 = (0..3).map(|c| z[c * 2 + b].exp()).sum();
                    -(z[labels[b] * 2 + b].exp() / s).ln()
                })
                .sum::<f64>()
                / 2.0
        };
        for i in 0..6 {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            assert!(((loss(&p) - loss(&m)) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_grid() {
        let spec = GridSpec { sparsities: vec![1.0], ..Default::default() };
        assert!(run_grid(&spec, 1).is_err());
        let spec = GridSpec { depths: vec![0], ..Default::default() };
        assert!(run_grid(&spec, 1).is_err());
    }

    #[test]
    fn matrix_averages_seeds() {
        let rows = vec![
            GridRow { depth: 1, sparsity: 0.0, seed: 0, accuracy: 0.5, connectivity: 1.0 },
            GridRow { depth: 1, sparsity: 0.0, seed: 1, accuracy: 0.7, connectivity: 1.0 },
        ];
        let m = accuracy_matrix(&rows, &[1, 2], &[0.0]);
        assert!((m[[0, 0]] - 0.6).abs() < 1e-12);
        assert!(m[[1, 0]].is_nan());
    }
}
