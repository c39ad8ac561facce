//! Command-line interface.
//!
//! Each subcommand resolves its settings from three layers: built-in
//! defaults, then the `--config` file (TOML or JSON, same shape as the
//! `config` object of a manifest), then flags. Every run writes its outputs
//! and a `manifest.json` holding the fully resolved config into `--out-dir`;
//! `replay` re-runs a manifest.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::control::ControlConfig;
use crate::engine::{Loss, LrSchedule, Optimizer, Precision, TrainConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    accuracy_matrix, fmt_float, run_control_study, run_grid, run_recon_sweep, to_csv, to_json, CsvRow, GridSpec, GridTask,
    SweepSpec, TopologyParams,
};
use crate::init::InitScheme;
use crate::matching::{build_constraint_graph, max_matching};
use crate::topology::{apply_skip_connections, connectivity, SkipSelection, Topology};

const PRECEDENCE: &str = "\
Settings are resolved in three layers, later layers winning:
  1. built-in defaults
  2. the file given with --config (TOML, or JSON when the name ends in .json)
  3. flags on the command line
The config file has the shape of the `config` object in a manifest, e.g.
  seed = 3
  loss = \"l1\"
  [topology]
  family = \"butterfly\"
  depth = 9
Every run writes manifest.json next to its outputs; `replay` re-runs it.";

const FAMILIES: [&str; 9] =
    ["dense", "random", "clos", "butterfly", "hypercube", "torus", "low_rank", "parallel_butterfly", "split_312"];

#[derive(Parser, Debug)]
#[command(name = "sparsecascade", version, about = "Sparse linear cascades: generate, train, match and score topologies")]
#[command(after_help = PRECEDENCE)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Base random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs and manifest.json
    #[arg(short = 'o', long = "out-dir", global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Output table format
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Floating-point precision of reconstruction training (recon only)
    #[arg(long, global = true, value_parser = ["f64", "f32"])]
    precision: Option<String>,
    /// TOML or JSON settings file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweep cells
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a topology, print its counts and write topology.json
    Topo {
        #[arg(id = "kind", value_name = "FAMILY", value_parser = FAMILIES)]
        family: String,
        #[command(flatten)]
        topo: TopoFlags,
    },
    /// Maximum matching between (input, output) constraints and trainable edges
    Match {
        #[command(flatten)]
        topo: TopoFlags,
    },
    /// Train cascades to reconstruct Gaussian targets, one run per seed
    Recon(ReconFlags),
    /// Train the controllability model and write the K matrix
    Control(ControlFlags),
    /// Depth x sparsity accuracy grid of random cascades
    Grid(GridFlags),
    /// Re-run a manifest, writing the same outputs into --out-dir
    Replay {
        manifest: PathBuf,
    },
}

/// Topology selection shared by every subcommand.
#[derive(Args, Debug, Default)]
struct TopoFlags {
    /// Topology family
    #[arg(long = "topology", value_parser = FAMILIES)]
    family: Option<String>,
    /// Inputs and outputs at once
    #[arg(long)]
    n: Option<usize>,
    /// Number of inputs
    #[arg(long = "in")]
    n_in: Option<usize>,
    /// Number of outputs
    #[arg(long = "out")]
    n_out: Option<usize>,
    /// Clos: inputs per ingress switch (and outputs per egress switch)
    #[arg(long)]
    r: Option<usize>,
    /// Clos: number of middle switches
    #[arg(long)]
    mid: Option<usize>,
    /// Number of layers (random, butterfly, hypercube, torus, parallel_butterfly)
    #[arg(long)]
    depth: Option<usize>,
    /// Torus rows
    #[arg(long)]
    rows: Option<usize>,
    /// Torus columns
    #[arg(long)]
    cols: Option<usize>,
    /// Low-rank bottleneck width
    #[arg(long)]
    k: Option<usize>,
    /// Parallel butterfly: number of parallel copies
    #[arg(long)]
    p: Option<usize>,
    /// Random: edge density per layer
    #[arg(long, allow_negative_numbers = true)]
    density: Option<f64>,
    /// Turn one in-edge per neuron into a constant-1 skip connection
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    skip: Option<bool>,
    /// Which in-edge becomes the skip connection
    #[arg(long, value_parser = ["lowest_source", "prefer_self"])]
    skip_selection: Option<String>,
}

#[derive(Args, Debug)]
struct ReconFlags {
    #[command(flatten)]
    topo: TopoFlags,
    /// Number of consecutive seeds starting at --seed
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_parser = ["l2", "l1"])]
    loss: Option<String>,
    /// Learning rate (default 0.05 for l2, 0.01 with adam, 0.005 for l1)
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    /// Training steps (default 5000 for l2, 20000 for l1)
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    optimizer: Option<String>,
    /// Learning-rate schedule (default linear_decay for l1)
    #[arg(long, value_parser = ["constant", "linear_decay"])]
    schedule: Option<String>,
    #[arg(long, value_parser = ["sparse_xavier", "plain_xavier"])]
    init: Option<String>,
    /// Tolerance for counting an entry as reconstructed
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    /// Append a trainable diagonal layer (always on with --skip)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    diagonal: Option<bool>,
}

#[derive(Args, Debug)]
struct ControlFlags {
    #[command(flatten)]
    topo: TopoFlags,
    /// Number of consecutive seeds starting at --seed
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    /// Standard deviation of the initial free parameters
    #[arg(long, allow_negative_numbers = true)]
    init_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct GridFlags {
    /// Hidden layer counts, comma separated
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// Sparsities in [0, 1), comma separated
    #[arg(long, value_delimiter = ',')]
    sparsities: Option<Vec<f64>>,
    /// Hidden layer width
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    /// Number of consecutive seeds starting at --seed
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_parser = ["sparse_xavier", "plain_xavier"])]
    init: Option<String>,
    /// IDX image file; uses the IDX task instead of the synthetic teacher
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Held-out fraction of the IDX samples
    #[arg(long, requires = "images")]
    test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Dense,
    Random,
    Clos,
    Butterfly,
    Hypercube,
    Torus,
    LowRank,
    ParallelButterfly,
    #[serde(rename = "split_312")]
    Split312,
}

/// Topology parameters; fields a family does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoConfig {
    pub family: Family,
    pub n_in: usize,
    pub n_out: usize,
    pub r: usize,
    pub mid: usize,
    /// Filled from the family when absent: `log2 n` for butterfly,
    /// `2 log2 n - 1` for parallel butterfly, diameter + 1 for hypercube and
    /// torus, 2 for random.
    pub depth: Option<usize>,
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub p: usize,
    pub density: f64,
    pub skip: bool,
    pub skip_selection: SkipSelection,
}

impl Default for TopoConfig {
    fn default() -> Self {
        TopoConfig {
            family: Family::Dense,
            n_in: 32,
            n_out: 32,
            r: 8,
            mid: 9,
            depth: None,
            rows: 8,
            cols: 4,
            k: 4,
            p: 2,
            density: 0.25,
            skip: false,
            skip_selection: SkipSelection::LowestSource,
        }
    }
}

impl TopoConfig {
    /// Input and output counts the family actually produces.
    pub fn dims(&self) -> (usize, usize) {
        match self.family {
            Family::Torus => (self.rows * self.cols, self.rows * self.cols),
            Family::Split312 => (3, 2),
            _ => (self.n_in, self.n_out),
        }
    }

    fn finalize(&mut self) {
        let n = self.dims().0;
        let log2 = n.max(1).ilog2() as usize;
        let default = match self.family {
            Family::Random => Some(2),
            Family::Butterfly => Some(log2),
            Family::ParallelButterfly => Some((2 * log2).saturating_sub(1)),
            Family::Hypercube => Some(log2 + 1),
            Family::Torus => Some(self.rows / 2 + self.cols / 2 + 1),
            _ => None,
        };
        if self.depth.is_none() {
            self.depth = default;
        }
    }

    fn validate(&self) -> Result<()> {
        let (n_in, n_out) = self.dims();
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("--in and --out (or --n) must be >= 1"));
        }
        if self.depth == Some(0) {
            return Err(Error::invalid("--depth must be >= 1"));
        }
        if self.family == Family::Random && !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid(format!("--density must lie in (0, 1], got {}", self.density)));
        }
        Ok(())
    }

    pub fn params(&self) -> TopologyParams {
        let depth = self.depth.unwrap_or(1);
        match self.family {
            Family::Dense => TopologyParams::Dense,
            Family::Random => TopologyParams::Random { depth, density: self.density },
            Family::Clos => TopologyParams::Clos { r: self.r, mid: self.mid },
            Family::Butterfly => TopologyParams::Butterfly { depth },
            Family::Hypercube => TopologyParams::Hypercube { depth },
            Family::Torus => TopologyParams::Torus { rows: self.rows, cols: self.cols, depth },
            Family::LowRank => TopologyParams::LowRank { k: self.k },
            Family::ParallelButterfly => TopologyParams::ParallelButterfly { depth, p: self.p },
            Family::Split312 => TopologyParams::Split312,
        }
    }

    /// The topology with skip connections applied when requested.
    pub fn build(&self, seed: u64) -> Result<Topology> {
        let (n_in, n_out) = self.dims();
        let t = self.params().build(n_in, n_out, seed)?;
        if self.skip {
            apply_skip_connections(&t, self.skip_selection)
        } else {
            Ok(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoCmd {
    pub topology: TopoConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchCmd {
    pub topology: TopoConfig,
    pub seed: u64,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconCmd {
    pub topology: TopoConfig,
    pub seed: u64,
    pub seeds: usize,
    pub format: Format,
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub steps: usize,
    pub schedule: LrSchedule,
    pub epsilon_l0: f64,
    pub precision: Precision,
    pub init: InitScheme,
    pub diagonal: bool,
}

impl ReconCmd {
    /// Defaults for a loss and optimizer pair.
    fn defaults(loss: Loss, optimizer: Optimizer) -> Self {
        let base = match (loss, optimizer) {
            (Loss::L2, Optimizer::Adam) => TrainConfig::adam(),
            (l, o) => TrainConfig { optimizer: o, ..TrainConfig::for_loss(l) },
        };
        ReconCmd {
            topology: TopoConfig::default(),
            seed: 0,
            seeds: 1,
            format: Format::Csv,
            loss,
            optimizer,
            learning_rate: base.learning_rate,
            steps: base.steps,
            schedule: base.schedule,
            epsilon_l0: base.epsilon_l0,
            precision: Precision::F64,
            init: InitScheme::SparseXavier,
            diagonal: false,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
            epsilon_l0: self.epsilon_l0,
            schedule: self.schedule,
            optimizer: self.optimizer,
            precision: self.precision,
            ..TrainConfig::l2()
        }
    }
}

impl Default for ReconCmd {
    fn default() -> Self {
        Self::defaults(Loss::L2, Optimizer::Sgd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlCmd {
    pub topology: TopoConfig,
    pub seed: u64,
    pub seeds: usize,
    pub format: Format,
    pub iters: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
}

impl Default for ControlCmd {
    fn default() -> Self {
        let c = ControlConfig::default();
        ControlCmd {
            topology: TopoConfig::default(),
            seed: 0,
            seeds: 1,
            format: Format::Csv,
            iters: c.iters,
            learning_rate: c.learning_rate,
            init_scale: c.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCmd {
    pub seed: u64,
    pub seeds: usize,
    pub format: Format,
    pub hidden_width: usize,
    pub depths: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init: InitScheme,
    pub task: GridTask,
}

impl Default for GridCmd {
    fn default() -> Self {
        let g = GridSpec::default();
        GridCmd {
            seed: 0,
            seeds: 1,
            format: Format::Csv,
            hidden_width: g.hidden_width,
            depths: g.depths,
            sparsities: g.sparsities,
            epochs: g.epochs,
            batch_size: g.batch_size,
            learning_rate: g.learning_rate,
            init: g.init,
            task: g.task,
        }
    }
}

impl GridCmd {
    fn spec(&self) -> GridSpec {
        GridSpec {
            hidden_width: self.hidden_width,
            depths: self.depths.clone(),
            sparsities: self.sparsities.clone(),
            task: self.task.clone(),
            epochs: self.epochs,
            seeds: seed_range(self.seed, self.seeds),
            init: self.init,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Topo(TopoCmd),
    Match(MatchCmd),
    Recon(ReconCmd),
    Control(ControlCmd),
    Grid(GridCmd),
}

/// Files produced by a run plus the lines printed to stdout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
    pub summary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: Value,
    pub outputs: Vec<String>,
}

fn seed_range(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed + i).collect()
}

fn positive(flag: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{flag} must be positive, got {v}")))
    }
}

fn at_least_one(flag: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{flag} must be >= 1")))
    }
}

fn table<R: CsvRow + Serialize>(format: Format, stem: &str, rows: &[R]) -> Result<(String, String)> {
    Ok(match format {
        Format::Csv => (format!("{stem}.csv"), to_csv(rows)),
        Format::Json => (format!("{stem}.json"), to_json(rows)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MatchRow {
    constraints: usize,
    edges: usize,
    matching: usize,
}

impl CsvRow for MatchRow {
    const HEADER: &'static str = "constraints,edges,matching";

    fn cells(&self) -> Vec<String> {
        vec![self.constraints.to_string(), self.edges.to_string(), self.matching.to_string()]
    }
}

impl RunConfig {
    pub fn command(&self) -> &'static str {
        match self {
            RunConfig::Topo(_) => "topo",
            RunConfig::Match(_) => "match",
            RunConfig::Recon(_) => "recon",
            RunConfig::Control(_) => "control",
            RunConfig::Grid(_) => "grid",
        }
    }

    pub fn config_value(&self) -> Value {
        let v = match self {
            RunConfig::Topo(c) => serde_json::to_value(c),
            RunConfig::Match(c) => serde_json::to_value(c),
            RunConfig::Recon(c) => serde_json::to_value(c),
            RunConfig::Control(c) => serde_json::to_value(c),
            RunConfig::Grid(c) => serde_json::to_value(c),
        };
        v.expect("configs serialize to JSON")
    }

    /// Parses a resolved config object for `command`, fills family-dependent
    /// defaults and validates ranges.
    pub fn from_value(command: &str, config: Value) -> Result<Self> {
        let mut run = match command {
            "topo" => RunConfig::Topo(parse(config)?),
            "match" => RunConfig::Match(parse(config)?),
            "recon" => RunConfig::Recon(parse(config)?),
            "control" => RunConfig::Control(parse(config)?),
            "grid" => RunConfig::Grid(parse(config)?),
            other => return Err(Error::invalid(format!("unknown command `{other}`"))),
        };
        run.finalize();
        run.validate()?;
        Ok(run)
    }

    fn finalize(&mut self) {
        match self {
            RunConfig::Topo(c) => c.topology.finalize(),
            RunConfig::Match(c) => c.topology.finalize(),
            RunConfig::Recon(c) => c.topology.finalize(),
            RunConfig::Control(c) => c.topology.finalize(),
            RunConfig::Grid(_) => {}
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RunConfig::Topo(c) => c.topology.validate(),
            RunConfig::Match(c) => c.topology.validate(),
            RunConfig::Recon(c) => {
                c.topology.validate()?;
                at_least_one("--seeds", c.seeds)?;
                positive("--lr", c.learning_rate)?;
                positive("--epsilon", c.epsilon_l0)
            }
            RunConfig::Control(c) => {
                c.topology.validate()?;
                at_least_one("--seeds", c.seeds)?;
                positive("--lr", c.learning_rate)?;
                if !(c.init_scale >= 0.0 && c.init_scale.is_finite()) {
                    return Err(Error::invalid(format!("--init-scale must be >= 0, got {}", c.init_scale)));
                }
                Ok(())
            }
            RunConfig::Grid(c) => {
                at_least_one("--seeds", c.seeds)?;
                at_least_one("--width", c.hidden_width)?;
                at_least_one("--batch", c.batch_size)?;
                positive("--lr", c.learning_rate)?;
                if c.depths.is_empty() || c.depths.contains(&0) {
                    return Err(Error::invalid("--depths must be a non-empty list of values >= 1"));
                }
                if let Some(s) = c.sparsities.iter().find(|s| !(0.0..1.0).contains(*s)) {
                    return Err(Error::invalid(format!("--sparsities values must lie in [0, 1), got {s}")));
                }
                if c.sparsities.is_empty() {
                    return Err(Error::invalid("--sparsities must not be empty"));
                }
                if let GridTask::Idx { test_fraction, .. } = c.task {
                    if !(0.0..1.0).contains(&test_fraction) {
                        return Err(Error::invalid(format!("--test-fraction must lie in [0, 1), got {test_fraction}")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn execute(&self, jobs: usize) -> Result<Artifacts> {
        match self {
            RunConfig::Topo(c) => {
                let t = c.topology.build(c.seed)?;
                let conn = connectivity(&t);
                Ok(Artifacts {
                    files: vec![("topology.json".into(), t.to_json()? + "\n")],
                    summary: vec![format!(
                        "edges={} trainable={} constant={} connectivity={}",
                        t.edge_count(),
                        t.trainable_edge_count(),
                        t.constant_edge_count(),
                        fmt_float(conn.fraction)
                    )],
                })
            }
            RunConfig::Match(c) => {
                let t = c.topology.build(c.seed)?;
                let g = build_constraint_graph(&t);
                let row = MatchRow { constraints: g.constraints.len(), edges: g.edges.len(), matching: max_matching(&g) };
                let summary = vec![format!("matching={}", row.matching)];
                Ok(Artifacts { files: vec![table(c.format, "match", &[row])?], summary })
            }
            RunConfig::Recon(c) => {
                let (n_in, n_out) = c.topology.dims();
                let spec = SweepSpec {
                    n_in,
                    n_out,
                    topologies: vec![c.topology.params()],
                    skip: c.topology.skip,
                    skip_selection: c.topology.skip_selection,
                    diagonal: c.diagonal,
                    seeds: seed_range(c.seed, c.seeds),
                    train: c.train_config(),
                    init: c.init,
                };
                let rows = run_recon_sweep(&spec, jobs)?;
                let summary = rows
                    .iter()
                    .map(|r| format!("seed={} final_loss={} l0={} matching={}", r.seed, fmt_float(r.final_loss), r.l0, r.matching))
                    .collect();
                Ok(Artifacts { files: vec![table(c.format, "recon", &rows)?], summary })
            }
            RunConfig::Control(c) => {
                let t = c.topology.build(c.seed)?;
                let cfg = ControlConfig { iters: c.iters, learning_rate: c.learning_rate, seed: c.seed, init_scale: c.init_scale };
                let seeds = seed_range(c.seed, c.seeds);
                let results = run_control_study(std::slice::from_ref(&t), &seeds, &cfg, jobs)?;
                let mut files = Vec::new();
                for (row, k) in &results {
                    let name = if c.seeds == 1 { "k_matrix.csv".to_string() } else { format!("k_matrix_{}.csv", row.seed) };
                    files.push((name, k.to_csv()));
                }
                let rows: Vec<_> = results.iter().map(|(r, _)| r.clone()).collect();
                let summary = rows
                    .iter()
                    .map(|r| format!("seed={} total_k={} variance={} loss={}", r.seed, fmt_float(r.total_k), fmt_float(r.variance), fmt_float(r.loss)))
                    .collect();
                files.push(table(c.format, "control", &rows)?);
                Ok(Artifacts { files, summary })
            }
            RunConfig::Grid(c) => {
                let rows = run_grid(&c.spec(), jobs)?;
                let acc = accuracy_matrix(&rows, &c.depths, &c.sparsities);
                let summary = c
                    .depths
                    .iter()
                    .zip(acc.rows())
                    .map(|(d, row)| {
                        let cells: Vec<String> = row.iter().map(|&a| fmt_float(a)).collect();
                        format!("depth={d} accuracy={}", cells.join(","))
                    })
                    .collect();
                Ok(Artifacts { files: vec![table(c.format, "grid", &rows)?], summary })
            }
        }
    }
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::invalid(format!("invalid config: {e}")))
}

/// Recursively overlays `over` onto `base`; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(Error::invalid(format!("{}: expected a table of settings", path.display())));
    }
    Ok(value)
}

fn put<T: Serialize>(map: &mut Map<String, Value>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

impl TopoFlags {
    fn overrides(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "family", &self.family);
        put(&mut m, "n_in", &self.n_in.or(self.n));
        put(&mut m, "n_out", &self.n_out.or(self.n));
        put(&mut m, "r", &self.r);
        put(&mut m, "mid", &self.mid);
        put(&mut m, "depth", &self.depth);
        put(&mut m, "rows", &self.rows);
        put(&mut m, "cols", &self.cols);
        put(&mut m, "k", &self.k);
        put(&mut m, "p", &self.p);
        put(&mut m, "density", &self.density);
        put(&mut m, "skip", &self.skip);
        put(&mut m, "skip_selection", &self.skip_selection);
        Value::Object(m)
    }
}

/// Flag overrides for a subcommand, plus the names of the global flags it accepts.
fn overrides(cmd: &Command) -> (&'static str, Map<String, Value>, &'static [&'static str]) {
    let mut m = Map::new();
    match cmd {
        Command::Topo { family, topo } => {
            let mut t = topo.overrides();
            t["family"] = json!(family);
            m.insert("topology".into(), t);
            ("topo", m, &["seed"])
        }
        Command::Match { topo } => {
            m.insert("topology".into(), topo.overrides());
            ("match", m, &["seed", "format"])
        }
        Command::Recon(f) => {
            m.insert("topology".into(), f.topo.overrides());
            put(&mut m, "seeds", &f.seeds);
            put(&mut m, "loss", &f.loss);
            put(&mut m, "learning_rate", &f.lr);
            put(&mut m, "steps", &f.steps);
            put(&mut m, "optimizer", &f.optimizer);
            put(&mut m, "schedule", &f.schedule);
            put(&mut m, "init", &f.init);
            put(&mut m, "epsilon_l0", &f.epsilon);
            put(&mut m, "diagonal", &f.diagonal);
            ("recon", m, &["seed", "format", "precision"])
        }
        Command::Control(f) => {
            m.insert("topology".into(), f.topo.overrides());
            put(&mut m, "seeds", &f.seeds);
            put(&mut m, "iters", &f.iters);
            put(&mut m, "learning_rate", &f.lr);
            put(&mut m, "init_scale", &f.init_scale);
            ("control", m, &["seed", "format"])
        }
        Command::Grid(f) => {
            put(&mut m, "depths", &f.depths);
            put(&mut m, "sparsities", &f.sparsities);
            put(&mut m, "hidden_width", &f.width);
            put(&mut m, "epochs", &f.epochs);
            put(&mut m, "batch_size", &f.batch);
            put(&mut m, "learning_rate", &f.lr);
            put(&mut m, "seeds", &f.seeds);
            put(&mut m, "init", &f.init);
            if let (Some(images), Some(labels)) = (&f.images, &f.labels) {
                let test_fraction = f.test_fraction.unwrap_or(0.2);
                m.insert("task".into(), json!({"kind": "idx", "images": images, "labels": labels, "test_fraction": test_fraction}));
            }
            ("grid", m, &["seed", "format"])
        }
        Command::Replay { .. } => unreachable!("replay has no overrides"),
    }
}

fn default_value(command: &str, layered: &Value) -> Value {
    let v = match command {
        "topo" => serde_json::to_value(TopoCmd::default()),
        "match" => serde_json::to_value(MatchCmd::default()),
        "recon" => {
            // learning rate, steps and schedule depend on the chosen loss and optimizer
            let loss = layered.get("loss").cloned().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default();
            let opt = layered.get("optimizer").cloned().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default();
            serde_json::to_value(ReconCmd::defaults(loss, opt))
        }
        "control" => serde_json::to_value(ControlCmd::default()),
        _ => serde_json::to_value(GridCmd::default()),
    };
    v.expect("defaults serialize")
}

fn resolve(cmd: &Command, global: &GlobalArgs) -> Result<RunConfig> {
    let (name, mut flags, accepted) = overrides(cmd);
    for (flag, value) in [("seed", global.seed.map(|s| json!(s))), ("format", global.format.as_ref().map(|s| json!(s))), ("precision", global.precision.as_ref().map(|s| json!(s)))] {
        if let Some(v) = value {
            if !accepted.contains(&flag) {
                return Err(Error::invalid(format!("--{flag} does not apply to `{name}`")));
            }
            flags.insert(flag.to_string(), v);
        }
    }
    let mut layered = match &global.config {
        Some(path) => read_config_file(path)?,
        None => Value::Object(Map::new()),
    };
    merge(&mut layered, Value::Object(flags));
    let mut config = default_value(name, &layered);
    merge(&mut config, layered);
    RunConfig::from_value(name, config)
}

/// Writes the artifacts and the manifest into `dir`.
pub fn write_run(dir: &Path, run: &RunConfig, artifacts: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, contents) in &artifacts.files {
        fs::write(dir.join(name), contents)?;
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: run.command().to_string(),
        config: run.config_value(),
        outputs: artifacts.files.iter().map(|(n, _)| n.clone()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunConfig> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::invalid(format!("{}: not a manifest: {e}", path.display())))?;
    RunConfig::from_value(&m.command, m.config)
}

fn run(cli: Cli) -> Result<()> {
    if cli.global.jobs == 0 {
        return Err(Error::invalid("--jobs must be >= 1"));
    }
    let run = match &cli.command {
        Command::Replay { manifest } => {
            if cli.global.config.is_some() {
                return Err(Error::invalid("--config does not apply to `replay`"));
            }
            read_manifest(manifest)?
        }
        cmd => resolve(cmd, &cli.global)?,
    };
    log::info!("{} {}", run.command(), run.config_value());
    let artifacts = run.execute(cli.global.jobs)?;
    write_run(&cli.global.out_dir, &run, &artifacts)?;
    for line in &artifacts.summary {
        println!("{line}");
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 when training diverged, 1 for any
/// other error.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Diverged { .. }) {
                2
            } else {
                1
            }
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}
