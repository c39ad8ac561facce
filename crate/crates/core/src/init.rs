//! Sparsity-corrected Xavier initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::engine::CascadeWeights;
use crate::error::{Error, Result};
use crate::topology::{EdgeKind, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform bound scaled by the layer's realized density.
    #[default]
    SparseXavier,
    /// The dense Xavier bound, ignoring sparsity.
    PlainXavier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn sparse(seed: u64) -> Self {
        InitSpec { scheme: InitScheme::SparseXavier, seed }
    }

    pub fn plain(seed: u64) -> Self {
        InitSpec { scheme: InitScheme::PlainXavier, seed }
    }
}

/// `sqrt(6) / sqrt((n_in + n_out) (1 - s))`.
pub fn sparse_xavier_bound(n_in: usize, n_out: usize, s: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::invalid(format!("sparsity must lie in [0, 1), got {s}")));
    }
    if n_in + n_out == 0 {
        return Err(Error::invalid("layer has no neurons"));
    }
    Ok((6.0 / ((n_in + n_out) as f64 * (1.0 - s))).sqrt())
}

/// Draws every trainable edge uniformly within the layer's bound. Constant
/// edges keep their values and consume no random numbers.
///
/// The sparsity used for a layer is the realized one, counting constant edges
/// as present since they carry signal.
///
/// A neuron with a constant in-edge passes its input through at gain 1 before
/// any trainable edge contributes, so stacking such neurons multiplies the
/// signal variance by at least `1 + (k - 1) var(w)` per layer. Trainable
/// in-edges of those neurons are therefore scaled by `1 / sqrt(depth)`, which
/// keeps the end-to-end gain bounded by `exp((k - 1) var(w))` at any depth.
pub fn init_weights(t: &Topology, spec: InitSpec) -> CascadeWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let widths = t.layer_widths();
    let residual_scale = 1.0 / (t.depth() as f64).sqrt();
    let values = t
        .layers()
        .iter()
        .enumerate()
        .map(|(l, edges)| {
            let s = match spec.scheme {
                InitScheme::SparseXavier => t.layer_sparsity(l),
                InitScheme::PlainXavier => 0.0,
            };
            // an empty layer never draws, so any bound works there
            let bound = sparse_xavier_bound(widths[l], widths[l + 1], s.min(1.0 - f64::EPSILON)).unwrap_or(0.0);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let mut has_constant = vec![false; widths[l + 1]];
            for e in edges.iter().filter(|e| !e.kind.is_trainable()) {
                has_constant[e.dst] = true;
            }
            edges
                .iter()
                .map(|e| match e.kind {
                    EdgeKind::Trainable if has_constant[e.dst] => residual_scale * dist.sample(&mut rng),
                    EdgeKind::Trainable => dist.sample(&mut rng),
                    EdgeKind::Constant(v) => v,
                })
                .collect()
        })
        .collect();
    CascadeWeights::new_unchecked(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{gen_dense, gen_identity};
    use approx::assert_relative_eq;

    #[test]
    fn bound_values() {
        assert_relative_eq!(sparse_xavier_bound(256, 256, 0.0).unwrap(), 0.108253, epsilon = 1e-6);
        assert_relative_eq!(sparse_xavier_bound(256, 256, 255.0 / 256.0).unwrap(), 3f64.sqrt(), epsilon = 1e-12);
        for n in [1usize, 7, 64, 300] {
            for s in [0.0, 0.25, 0.9, 0.999] {
                let lhs = sparse_xavier_bound(n, n, s).unwrap();
                let rhs = sparse_xavier_bound(n, n, 0.0).unwrap() / (1.0 - s).sqrt();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            }
        }
        assert!(sparse_xavier_bound(4, 4, 1.0).is_err());
        assert!(sparse_xavier_bound(4, 4, -0.1).is_err());
    }

    #[test]
    fn dense_weight_variance_matches_uniform() {
        let t = gen_dense(128, 128).unwrap();
        let w = init_weights(&t, InitSpec::sparse(11));
        let vals = &w.values()[0];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let bound = sparse_xavier_bound(128, 128, 0.0).unwrap();
        let expected = bound * bound / 3.0;
        assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
        assert!(vals.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn constant_layers_ignore_seed() {
        let t = gen_identity(5).unwrap();
        assert_eq!(init_weights(&t, InitSpec::sparse(1)), init_weights(&t, InitSpec::sparse(2)));
        assert!(init_weights(&t, InitSpec::plain(3)).values()[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn skip_neurons_draw_scaled_weights() {
        let t = crate::topology::gen_butterfly(16, 16).unwrap();
        let s = crate::topology::apply_skip_connections(&t, crate::topology::SkipSelection::LowestSource).unwrap();
        let bound = sparse_xavier_bound(16, 16, t.layer_sparsity(0)).unwrap();
        let w = init_weights(&s, InitSpec::sparse(3));
        let drawn: Vec<f64> = s.edges().filter(|(_, e)| e.kind.is_trainable()).map(|(l, e)| {
            let i = s.layer(l).iter().position(|x| x == e).unwrap();
            w.values()[l][i]
        }).collect();
        assert!(drawn.iter().all(|v| v.abs() <= bound / 4.0));
        assert!(drawn.iter().any(|v| v.abs() > bound / 8.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let t = crate::topology::gen_random(16, 16, 3, 0.3, 5).unwrap();
        let a = init_weights(&t, InitSpec::sparse(42));
        let b = init_weights(&t, InitSpec::sparse(42));
        assert_eq!(a, b);
        assert_ne!(a, init_weights(&t, InitSpec::sparse(43)));
    }
}
