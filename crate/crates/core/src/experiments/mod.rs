//! Desk-scale reproductions of the comparative studies: reconstruction
//! sweeps, controllability studies and the depth x sparsity grid.

mod grid;
mod idx;
mod sweep;

pub use grid::{accuracy_matrix, run_grid, GridRow, GridSpec, GridTask, SyntheticTeacher};
pub use idx::{load_idx_dataset, parse_idx_images, parse_idx_labels, IdxDataset};
pub use sweep::{
    run_control_study, run_recon_sweep, ControlStudyRow, SweepRow, SweepSpec, TopologyParams,
};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Formats a float with 9 significant digits, `%g` style.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{x:.8e}");
    // rounding can bump the exponent; trust the formatted one
    let (mantissa, e) = sci.split_once('e').unwrap();
    let e: i32 = e.parse().unwrap_or(exp);
    if (-5..9).contains(&e) {
        let decimals = (8 - e).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{}e{}", trim_zeros(mantissa), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// `rows x cols` matrix of i.i.d. Gaussian entries with variance `1 / cols`,
/// the scale of a Xavier-initialized dense map with `cols` inputs.
pub fn gaussian_target(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    })
}

/// Runs `count` independent jobs on up to `jobs` threads; results come back
/// in index order regardless of completion order.
pub(crate) fn run_jobs<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..count).map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Rows as CSV with the given header; each row supplies its own cells.
pub fn to_csv<R: CsvRow>(rows: &[R]) -> String {
    let mut out = String::from(R::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join(","));
        out.push('\n');
    }
    out
}

/// Rows as a pretty JSON array.
pub fn to_json<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    Ok(s)
}

pub trait CsvRow {
    const HEADER: &'static str;
    fn cells(&self) -> Vec<String>;
}
