use serde::{Deserialize, Serialize};

use super::{fmt_float, gaussian_target, run_jobs, CsvRow};
use crate::control::{train_control, ControlConfig, KMatrix};
use crate::engine::{append_diagonal_layer, train_reconstruction, TrainConfig};
use crate::error::{Error, Result};
use crate::init::{InitScheme, InitSpec};
use crate::matching::{build_constraint_graph, max_matching};
use crate::topology::{self, SkipSelection, Topology};

/// One member of a topology family, sized by the sweep's `n_in`/`n_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TopologyParams {
    Dense,
    Random { depth: usize, density: f64 },
    Clos { r: usize, mid: usize },
    Butterfly { depth: usize },
    Hypercube { depth: usize },
    Torus { rows: usize, cols: usize, depth: usize },
    LowRank { k: usize },
    ParallelButterfly { depth: usize, p: usize },
    /// The fixed 3-input, 2-output split of a 3-1-2 cascade.
    #[serde(rename = "split_312")]
    Split312,
}

impl TopologyParams {
    pub fn family(&self) -> &'static str {
        match self {
            TopologyParams::Dense => "dense",
            TopologyParams::Random { .. } => "random",
            TopologyParams::Clos { .. } => "clos",
            TopologyParams::Butterfly { .. } => "butterfly",
            TopologyParams::Hypercube { .. } => "hypercube",
            TopologyParams::Torus { .. } => "torus",
            TopologyParams::LowRank { .. } => "low_rank",
            TopologyParams::ParallelButterfly { .. } => "parallel_butterfly",
            TopologyParams::Split312 => "split_312",
        }
    }

    /// Family parameters as `key=value` pairs joined by `;`.
    pub fn label(&self) -> String {
        match self {
            TopologyParams::Dense | TopologyParams::Split312 => String::new(),
            TopologyParams::Random { depth, density } => format!("depth={depth};density={}", fmt_float(*density)),
            TopologyParams::Clos { r, mid } => format!("r={r};mid={mid}"),
            TopologyParams::Butterfly { depth } | TopologyParams::Hypercube { depth } => format!("depth={depth}"),
            TopologyParams::Torus { rows, cols, depth } => format!("rows={rows};cols={cols};depth={depth}"),
            TopologyParams::LowRank { k } => format!("k={k}"),
            TopologyParams::ParallelButterfly { depth, p } => format!("depth={depth};p={p}"),
        }
    }

    /// Builds the topology; `seed` only matters for random cascades.
    pub fn build(&self, n_in: usize, n_out: usize, seed: u64) -> Result<Topology> {
        let square = || {
            if n_in == n_out {
                Ok(n_in)
            } else {
                Err(Error::invalid(format!("{} needs n_in == n_out, got {n_in} and {n_out}", self.family())))
            }
        };
        match *self {
            TopologyParams::Dense => topology::gen_dense(n_in, n_out),
            TopologyParams::Random { depth, density } => topology::gen_random(n_in, n_out, depth, density, seed),
            TopologyParams::Clos { r, mid } => topology::gen_clos(n_in, n_out, r, mid),
            TopologyParams::Butterfly { depth } => topology::gen_butterfly(square()?, depth),
            TopologyParams::Hypercube { depth } => topology::gen_hypercube(square()?, depth),
            TopologyParams::Torus { rows, cols, depth } => {
                let n = square()?;
                if rows * cols != n {
                    return Err(Error::invalid(format!("torus {rows}x{cols} does not have {n} nodes")));
                }
                topology::gen_torus(rows, cols, depth)
            }
            TopologyParams::LowRank { k } => topology::gen_low_rank(n_in, n_out, k),
            TopologyParams::ParallelButterfly { depth, p } => topology::gen_parallel_butterfly(square()?, depth, p),
            TopologyParams::Split312 => {
                if (n_in, n_out) != (3, 2) {
                    return Err(Error::invalid(format!("split_312 has 3 inputs and 2 outputs, got {n_in} and {n_out}")));
                }
                topology::gen_split_312()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub topologies: Vec<TopologyParams>,
    pub skip: bool,
    #[serde(default)]
    pub skip_selection: SkipSelection,
    /// Append a trainable diagonal layer even without skip connections.
    #[serde(default)]
    pub diagonal: bool,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    #[serde(default)]
    pub init: InitScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub topology: String,
    pub params: String,
    pub depth: usize,
    pub skip: bool,
    pub seed: u64,
    pub final_loss: f64,
    pub l0: usize,
    pub matching: usize,
}

impl CsvRow for SweepRow {
    const HEADER: &'static str = "topology,params,depth,skip,seed,final_loss,l0,matching";

    fn cells(&self) -> Vec<String> {
        vec![
            self.topology.clone(),
            self.params.clone(),
            self.depth.to_string(),
            self.skip.to_string(),
            self.seed.to_string(),
            fmt_float(self.final_loss),
            self.l0.to_string(),
            self.matching.to_string(),
        ]
    }
}

impl SweepSpec {
    /// Topology for one cell. With skip connections every neuron only sets
    /// ratios, so a trainable diagonal layer is appended to carry the output
    /// magnitudes.
    pub fn cell_topology(&self, params: &TopologyParams, seed: u64) -> Result<Topology> {
        let t = params.build(self.n_in, self.n_out, seed)?;
        let t = if self.skip { topology::apply_skip_connections(&t, self.skip_selection)? } else { t };
        Ok(if self.skip || self.diagonal { append_diagonal_layer(&t) } else { t })
    }
}

/// One reconstruction run per (topology, seed), each on a fresh Gaussian
/// target drawn from the seed. Rows come back in spec order.
pub fn run_recon_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    spec.train.validate()?;
    let cells: Vec<(&TopologyParams, u64)> =
        spec.topologies.iter().flat_map(|p| spec.seeds.iter().map(move |&s| (p, s))).collect();
    run_jobs(cells.len(), jobs, |c| {
        let (params, seed) = cells[c];
        let t = spec.cell_topology(params, seed)?;
        let target = gaussian_target(spec.n_out, spec.n_in, seed);
        let cfg = TrainConfig { seed, ..spec.train.clone() };
        let report = train_reconstruction(&t, &target, InitSpec { scheme: spec.init, seed }, &cfg)?;
        let matching = max_matching(&build_constraint_graph(&t));
        log::info!("{} seed={seed} loss={}", t.name(), fmt_float(report.final_loss));
        Ok(SweepRow {
            topology: params.family().to_string(),
            params: params.label(),
            depth: t.depth(),
            skip: spec.skip,
            seed,
            final_loss: report.final_loss,
            l0: report.l0_satisfied,
            matching,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlStudyRow {
    pub name: String,
    pub seed: u64,
    pub edges: usize,
    pub trainable: usize,
    pub total_k: f64,
    pub mean: f64,
    pub variance: f64,
    pub loss: f64,
}

impl CsvRow for ControlStudyRow {
    const HEADER: &'static str = "name,seed,edges,trainable,total_k,mean,variance,loss";

    fn cells(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            self.seed.to_string(),
            self.edges.to_string(),
            self.trainable.to_string(),
            fmt_float(self.total_k),
            fmt_float(self.mean),
            fmt_float(self.variance),
            fmt_float(self.loss),
        ]
    }
}

/// Trains a controllability state per (topology, seed) and summarizes its
/// K matrix. `cfg.seed` is replaced by each seed in turn.
pub fn run_control_study(
    topologies: &[Topology],
    seeds: &[u64],
    cfg: &ControlConfig,
    jobs: usize,
) -> Result<Vec<(ControlStudyRow, KMatrix)>> {
    let cells: Vec<(&Topology, u64)> = topologies.iter().flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    run_jobs(cells.len(), jobs, |c| {
        let (t, seed) = cells[c];
        let state = train_control(t, &ControlConfig { seed, ..*cfg })?;
        let k = state.k_matrix();
        log::info!("{} total_k={} variance={}", t.name(), fmt_float(k.total()), fmt_float(k.variance));
        let row = ControlStudyRow {
            name: t.name().to_string(),
            seed,
            edges: t.edge_count(),
            trainable: t.trainable_edge_count(),
            total_k: k.total(),
            mean: k.mean,
            variance: k.variance,
            loss: state.loss(),
        };
        Ok((row, k))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_build_and_label() {
        let p = TopologyParams::Clos { r: 8, mid: 9 };
        assert_eq!(p.build(32, 32, 0).unwrap().edge_count(), 1152);
        assert_eq!(p.label(), "r=8;mid=9");
        assert!(TopologyParams::Butterfly { depth: 2 }.build(8, 4, 0).is_err());
        assert!(TopologyParams::Torus { rows: 3, cols: 3, depth: 1 }.build(8, 8, 0).is_err());
        let json = serde_json::to_string(&TopologyParams::Torus { rows: 8, cols: 4, depth: 7 }).unwrap();
        assert_eq!(json, r#"{"family":"torus","rows":8,"cols":4,"depth":7}"#);
    }

    #[test]
    fn sweep_is_reproducible() {
        let spec = SweepSpec {
            n_in: 8,
            n_out: 8,
            topologies: vec![TopologyParams::Butterfly { depth: 3 }, TopologyParams::Random { depth: 2, density: 0.5 }],
            skip: true,
            skip_selection: SkipSelection::LowestSource,
            diagonal: false,
            seeds: vec![1, 2],
            train: TrainConfig { steps: 100, ..TrainConfig::l2() },
            init: InitScheme::SparseXavier,
        };
        let a = run_recon_sweep(&spec, 1).unwrap();
        let b = run_recon_sweep(&spec, 3).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(super::super::to_csv(&a), super::super::to_csv(&b));
        assert!(a.iter().all(|r| r.matching <= 8 * 8));
    }
}
