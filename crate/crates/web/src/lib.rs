//! WebAssembly bindings for a small in-browser explorer.
//!
//! Each exported function takes and returns JSON strings so the page needs
//! no generated bindings beyond `wasm-bindgen`'s own glue. The Rust-side
//! functions with typed results are public too and carry the tests.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sparsecascade::control::{train_control, ControlConfig};
use sparsecascade::experiments::{gaussian_target, TopologyParams};
use sparsecascade::init::{init_weights, InitSpec};
use sparsecascade::topology::{self, apply_skip_connections, SkipSelection, Topology};
use sparsecascade::Result;
use wasm_bindgen::prelude::*;

/// Upper bound on the width the page may request; keeps the control model
/// (quadratic in the input count) responsive.
pub const MAX_WIDTH: usize = 64;

#[derive(Debug, Clone, Deserialize)]
pub struct TopologyRequest {
    #[serde(flatten)]
    pub params: TopologyParams,
    pub n: usize,
    #[serde(default)]
    pub skip: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TopologyRequest {
    pub fn build(&self) -> Result<Topology> {
        if self.n == 0 || self.n > MAX_WIDTH {
            return Err(sparsecascade::Error::InvalidArgument(format!("n must lie in 1..={MAX_WIDTH}, got {}", self.n)));
        }
        let t = self.params.build(self.n, self.n, self.seed)?;
        if self.skip {
            apply_skip_connections(&t, SkipSelection::LowestSource)
        } else {
            Ok(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub widths: Vec<usize>,
    pub edges: usize,
    pub trainable: usize,
    pub constant: usize,
    pub connectivity: f64,
    /// `[layer, src, dst, trainable]` per edge, for drawing.
    pub edge_list: Vec<(usize, usize, usize, bool)>,
}

pub fn summarize(req: &TopologyRequest) -> Result<Summary> {
    let t = req.build()?;
    let edge_list = t.edges().map(|(l, e)| (l, e.src, e.dst, e.kind.is_trainable())).collect();
    Ok(Summary {
        name: t.name().to_string(),
        widths: t.layer_widths().to_vec(),
        edges: t.edge_count(),
        trainable: t.trainable_edge_count(),
        constant: t.constant_edge_count(),
        connectivity: topology::connectivity(&t).fraction,
        edge_list,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, inputs by outputs.
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

pub fn control_heatmap(req: &TopologyRequest, iters: usize) -> Result<Heatmap> {
    let t = req.build()?;
    let cfg = ControlConfig { iters, seed: req.seed, ..ControlConfig::default() };
    let k = train_control(&t, &cfg)?.k_matrix();
    let (rows, cols) = k.k.dim();
    Ok(Heatmap { rows, cols, values: k.k.iter().copied().collect(), mean: k.mean, variance: k.variance })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceProfile {
    /// Activation variance after each layer divided by the input variance;
    /// entry 0 is the input itself.
    pub sparse: Vec<f64>,
    pub plain: Vec<f64>,
}

fn variance(a: &Array2<f64>) -> f64 {
    let mean = a.mean().unwrap_or(0.0);
    a.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0)
}

fn layer_gains(t: &Topology, spec: InitSpec, x: &Array2<f64>) -> Vec<f64> {
    let w = init_weights(t, spec);
    let v0 = variance(x);
    let mut h = x.clone();
    let mut gains = vec![1.0];
    for (l, (edges, vals)) in t.layers().iter().zip(w.values()).enumerate() {
        let mut next = Array2::zeros((t.layer_widths()[l + 1], h.ncols()));
        for (e, &v) in edges.iter().zip(vals) {
            let src = h.row(e.src).to_owned();
            next.row_mut(e.dst).scaled_add(v, &src);
        }
        h = next;
        gains.push(variance(&h) / v0);
    }
    gains
}

/// Forward variance through a random cascade under both Xavier variants.
pub fn variance_profile(width: usize, depth: usize, density: f64, seed: u64) -> Result<VarianceProfile> {
    if width == 0 || width > 4 * MAX_WIDTH {
        return Err(sparsecascade::Error::InvalidArgument(format!("width must lie in 1..={}, got {width}", 4 * MAX_WIDTH)));
    }
    let t = topology::gen_random(width, width, depth, density, seed)?;
    let x = gaussian_target(width, 64, seed);
    Ok(VarianceProfile { sparse: layer_gains(&t, InitSpec::sparse(seed), &x), plain: layer_gains(&t, InitSpec::plain(seed), &x) })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(sparsecascade::Error::from))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn parse(json: &str) -> std::result::Result<TopologyRequest, JsValue> {
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&format!("bad request: {e}")))
}

/// `request` is e.g. `{"family":"butterfly","depth":3,"n":8,"skip":true}`.
#[wasm_bindgen(js_name = topologySummary)]
pub fn topology_summary(request: &str) -> std::result::Result<String, JsValue> {
    to_js(summarize(&parse(request)?))
}

#[wasm_bindgen(js_name = controlHeatmap)]
pub fn control_heatmap_js(request: &str, iters: usize) -> std::result::Result<String, JsValue> {
    to_js(control_heatmap(&parse(request)?, iters))
}

#[wasm_bindgen(js_name = varianceProfile)]
pub fn variance_profile_js(width: usize, depth: usize, density: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(variance_profile(width, depth, density, seed.into()))
}
