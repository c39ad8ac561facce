#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsecascade::control::ControlState;
use sparsecascade::engine::{append_diagonal_layer, loss_and_gradient, reconstruction_loss, CascadeWeights, Loss};
use sparsecascade::experiments::gaussian_target;
use sparsecascade::init::{init_weights, InitSpec};
use sparsecascade::topology::{self, apply_skip_connections, Edge, SkipSelection, Topology};

/// One small member of every family, with and without skip connections.
pub fn small_families() -> Vec<Topology> {
    let base = vec![
        topology::gen_dense(4, 3).unwrap(),
        topology::gen_random(6, 5, 3, 0.6, 11).unwrap(),
        topology::gen_clos(8, 8, 2, 3).unwrap(),
        topology::gen_butterfly(8, 3).unwrap(),
        topology::gen_hypercube(8, 4).unwrap(),
        topology::gen_torus(2, 4, 3).unwrap(),
        topology::gen_low_rank(8, 6, 2).unwrap(),
        topology::gen_parallel_butterfly(8, 5, 2).unwrap(),
        topology::gen_split_312().unwrap(),
    ];
    let mut out = Vec::new();
    for t in base {
        if t.depth() > 1 && t.name() != "split_312" {
            let skip = apply_skip_connections(&t, SkipSelection::LowestSource).unwrap();
            out.push(append_diagonal_layer(&skip));
        }
        out.push(t);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||, 1e-9)`; the floor keeps rounding noise
/// around a zero gradient from reading as a large relative error.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-9)
}

/// A 4-input graph with two layers of uneven fan-in and fan-out.
pub fn four_input_two_layer() -> Topology {
    let layers = vec![
        vec![
            Edge::trainable(0, 0),
            Edge::trainable(1, 0),
            Edge::trainable(2, 0),
            Edge::trainable(1, 1),
            Edge::trainable(2, 1),
            Edge::trainable(3, 1),
            Edge::trainable(0, 2),
            Edge::trainable(3, 2),
        ],
        vec![
            Edge::trainable(0, 0),
            Edge::trainable(1, 0),
            Edge::trainable(1, 1),
            Edge::trainable(2, 1),
            Edge::trainable(0, 2),
            Edge::trainable(2, 2),
            Edge::trainable(1, 3),
        ],
    ];
    Topology::new("fd4", vec![4, 3, 4], layers).unwrap()
}

/// Relative error between the analytic L2/L1 gradient and central
/// differences over every trainable edge.
pub fn engine_fd_error(t: &Topology, loss: Loss, seed: u64) -> f64 {
    let target = gaussian_target(t.n_outputs(), t.n_inputs(), seed);
    let w = init_weights(t, InitSpec::sparse(seed));
    let (_, grad) = loss_and_gradient(t, &w, &target, loss).unwrap();
    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (l, layer) in t.layers().iter().enumerate() {
        for (i, e) in layer.iter().enumerate() {
            if !e.kind.is_trainable() {
                assert_eq!(grad[l][i], 0.0);
                continue;
            }
            let eval = |delta: f64| {
                let mut v = w.values().to_vec();
                v[l][i] += delta;
                reconstruction_loss(t, &CascadeWeights::new(t, v).unwrap(), &target, loss).unwrap()
            };
            analytic.push(grad[l][i]);
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    rel_err(&analytic, &numeric)
}

/// Compares the analytic control gradient with central differences on up
/// to `sample` randomly chosen parameters.
pub fn control_fd_error(t: &Topology, seed: u64, sample: usize) -> f64 {
    let state = ControlState::new(t, seed, 0.5).unwrap();
    let (_, grads) = state.loss_and_gradients();
    let mut coords: Vec<(bool, usize, usize)> = Vec::new();
    for (l, p) in state.ratio_params().iter().enumerate() {
        coords.extend((0..p.len()).map(|i| (true, l, i)));
    }
    for (l, p) in state.delta_params().iter().enumerate() {
        coords.extend((0..p.len()).map(|i| (false, l, i)));
    }
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    coords.truncate(sample);

    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &(ratio, l, i) in &coords {
        let eval = |delta: f64| {
            let mut s = state.clone();
            if ratio {
                s.ratio_params_mut()[l][i] += delta;
            } else {
                s.delta_params_mut()[l][i] += delta;
            }
            s.refresh();
            s.loss()
        };
        analytic.push(if ratio { grads.ratio[l][i] } else { grads.delta[l][i] });
        numeric.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    rel_err(&analytic, &numeric)
}
