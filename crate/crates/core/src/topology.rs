//! Layered sparse topologies.
//!
//! A [`Topology`] is a layered DAG: layer `l` holds the edges from the
//! neurons of width `layer_widths[l]` into the neurons of width
//! `layer_widths[l + 1]`. Every edge is either trainable or carries a fixed
//! constant value. Edges inside a layer are kept sorted by `(dst, src)` so
//! that every derived report has a canonical order.

use std::collections::BTreeSet;
use std::fmt;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeKind {
    Trainable,
    Constant(f64),
}

impl EdgeKind {
    pub fn is_trainable(&self) -> bool {
        matches!(self, EdgeKind::Trainable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn trainable(src: usize, dst: usize) -> Self {
        Edge { src, dst, kind: EdgeKind::Trainable }
    }

    pub fn constant(src: usize, dst: usize, value: f64) -> Self {
        Edge { src, dst, kind: EdgeKind::Constant(value) }
    }
}

// Edges serialize as `[src, dst, "t"]` or `[src, dst, "c", value]`.
impl Serialize for Edge {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.kind {
            EdgeKind::Trainable => {
                let mut seq = serializer.serialize_seq(Some(3))?;
                seq.serialize_element(&self.src)?;
                seq.serialize_element(&self.dst)?;
                seq.serialize_element("t")?;
                seq.end()
            }
            EdgeKind::Constant(v) => {
                let mut seq = serializer.serialize_seq(Some(4))?;
                seq.serialize_element(&self.src)?;
                seq.serialize_element(&self.dst)?;
                seq.serialize_element("c")?;
                seq.serialize_element(&v)?;
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EdgeVisitor;

        impl<'de> Visitor<'de> for EdgeVisitor {
            type Value = Edge;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an edge [src, dst, \"t\"] or [src, dst, \"c\", value]")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Edge, A::Error> {
                let src: usize = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let dst: usize = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let kind: String = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(2, &self))?;
                let edge = match kind.as_str() {
                    "t" => Edge::trainable(src, dst),
                    "c" => {
                        let v: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(3, &self))?;
                        Edge::constant(src, dst, v)
                    }
                    other => return Err(de::Error::custom(format!("unknown edge kind {other:?}"))),
                };
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::custom("trailing elements in edge"));
                }
                Ok(edge)
            }
        }

        deserializer.deserialize_seq(EdgeVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology")]
pub struct Topology {
    name: String,
    layer_widths: Vec<usize>,
    layers: Vec<Vec<Edge>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    name: String,
    layer_widths: Vec<usize>,
    layers: Vec<Vec<Edge>>,
}

impl TryFrom<RawTopology> for Topology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        Topology::new(raw.name, raw.layer_widths, raw.layers)
    }
}

/// Reachable (input, output) pair coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub reachable_pairs: usize,
    pub total_pairs: usize,
    pub fraction: f64,
}

/// How [`apply_skip_connections`] picks the in-edge that becomes the
/// constant-1 connection of a neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSelection {
    /// The in-edge with the smallest source index.
    #[default]
    LowestSource,
    /// The edge from the neuron with the same index when the previous layer
    /// has one, otherwise the smallest source index.
    PreferSelf,
    /// A uniformly random in-edge, drawn from the given seed.
    Seeded(u64),
}

impl Topology {
    /// Builds a topology, validating bounds and rejecting duplicate edges.
    pub fn new(name: impl Into<String>, layer_widths: Vec<usize>, mut layers: Vec<Vec<Edge>>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::invalid("a topology needs at least an input and an output layer"));
        }
        if let Some(l) = layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::invalid(format!("layer {l} has zero width")));
        }
        if layers.len() + 1 != layer_widths.len() {
            return Err(Error::invalid(format!(
                "{} edge layers do not match {} layer widths",
                layers.len(),
                layer_widths.len()
            )));
        }
        for (l, edges) in layers.iter_mut().enumerate() {
            let (n_src, n_dst) = (layer_widths[l], layer_widths[l + 1]);
            for e in edges.iter() {
                if e.src >= n_src || e.dst >= n_dst {
                    return Err(Error::invalid(format!(
                        "edge {}->{} in layer {l} out of bounds ({n_src}x{n_dst})",
                        e.src, e.dst
                    )));
                }
                if let EdgeKind::Constant(v) = e.kind {
                    if !v.is_finite() {
                        return Err(Error::invalid(format!("edge {}->{} in layer {l} has non-finite value", e.src, e.dst)));
                    }
                }
            }
            edges.sort_by_key(|e| (e.dst, e.src));
            if let Some(w) = edges.windows(2).find(|w| w[0].src == w[1].src && w[0].dst == w[1].dst) {
                return Err(Error::invalid(format!("duplicate edge {}->{} in layer {l}", w[0].src, w[0].dst)));
            }
        }
        Ok(Topology { name: name.into(), layer_widths, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn layers(&self) -> &[Vec<Edge>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[Edge] {
        &self.layers[l]
    }

    /// Number of edge layers (cascade depth).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn trainable_edge_count(&self) -> usize {
        self.edges().filter(|(_, e)| e.kind.is_trainable()).count()
    }

    pub fn constant_edge_count(&self) -> usize {
        self.edge_count() - self.trainable_edge_count()
    }

    /// All edges with their layer index, in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.layers.iter().enumerate().flat_map(|(l, es)| es.iter().map(move |e| (l, e)))
    }

    /// Realized sparsity of layer `l`: `1 - edges / (n_l * n_{l+1})`.
    pub fn layer_sparsity(&self, l: usize) -> f64 {
        let possible = (self.layer_widths[l] * self.layer_widths[l + 1]) as f64;
        1.0 - self.layers[l].len() as f64 / possible
    }

    /// For every layer and neuron, the set of cascade inputs with a path to it.
    pub fn input_reach(&self) -> Vec<Vec<FixedBitSet>> {
        let n0 = self.n_inputs();
        let mut reach = Vec::with_capacity(self.layer_widths.len());
        reach.push(
            (0..n0)
                .map(|i| {
                    let mut b = FixedBitSet::with_capacity(n0);
                    b.insert(i);
                    b
                })
                .collect::<Vec<_>>(),
        );
        for (l, edges) in self.layers.iter().enumerate() {
            let mut next = vec![FixedBitSet::with_capacity(n0); self.layer_widths[l + 1]];
            for e in edges {
                let src = &reach[l][e.src];
                next[e.dst].union_with(src);
            }
            reach.push(next);
        }
        reach
    }

    /// For every layer and neuron, the set of cascade outputs it has a path to.
    pub fn output_reach(&self) -> Vec<Vec<FixedBitSet>> {
        let depth = self.depth();
        let n_out = self.n_outputs();
        let mut reach = vec![Vec::new(); depth + 1];
        reach[depth] = (0..n_out)
            .map(|o| {
                let mut b = FixedBitSet::with_capacity(n_out);
                b.insert(o);
                b
            })
            .collect();
        for l in (0..depth).rev() {
            let mut prev = vec![FixedBitSet::with_capacity(n_out); self.layer_widths[l]];
            for e in &self.layers[l] {
                let dst = reach[l + 1][e.dst].clone();
                prev[e.src].union_with(&dst);
            }
            reach[l] = prev;
        }
        reach
    }

    /// Returns the topology with input `i` renamed to `perm[i]`.
    pub fn relabel_inputs(&self, perm: &[usize]) -> Result<Topology> {
        check_permutation(perm, self.n_inputs())?;
        let mut layers = self.layers.clone();
        for e in &mut layers[0] {
            e.src = perm[e.src];
        }
        Topology::new(self.name.clone(), self.layer_widths.clone(), layers)
    }

    /// Returns the topology with output `o` renamed to `perm[o]`.
    pub fn relabel_outputs(&self, perm: &[usize]) -> Result<Topology> {
        check_permutation(perm, self.n_outputs())?;
        let mut layers = self.layers.clone();
        for e in layers.last_mut().unwrap() {
            e.dst = perm[e.dst];
        }
        Topology::new(self.name.clone(), self.layer_widths.clone(), layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Topology> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::invalid(format!("permutation has length {}, expected {n}", perm.len())));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::invalid("not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

fn log2_exact(n: usize, what: &str) -> Result<u32> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("{what} must be a power of two >= 2, got {n}")));
    }
    Ok(n.trailing_zeros())
}

/// Single fully connected trainable layer.
pub fn gen_dense(n_in: usize, n_out: usize) -> Result<Topology> {
    let edges = (0..n_out).flat_map(|d| (0..n_in).map(move |s| Edge::trainable(s, d))).collect();
    Topology::new(format!("dense({n_in},{n_out})"), vec![n_in, n_out], vec![edges])
}

/// Single layer of constant-1 edges `i -> i`.
pub fn gen_identity(n: usize) -> Result<Topology> {
    let edges = (0..n).map(|i| Edge::constant(i, i, 1.0)).collect();
    Topology::new(format!("identity({n})"), vec![n, n], vec![edges])
}

/// Random cascade where every potential edge exists independently with
/// probability `density`. Hidden layers have width `max(n_in, n_out)`.
pub fn gen_random(n_in: usize, n_out: usize, depth: usize, density: f64, seed: u64) -> Result<Topology> {
    gen_random_with_hidden(n_in, n_out, depth, n_in.max(n_out), density, seed)
}

pub fn gen_random_with_hidden(
    n_in: usize,
    n_out: usize,
    depth: usize,
    hidden: usize,
    density: f64,
    seed: u64,
) -> Result<Topology> {
    if depth == 0 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("density must lie in (0, 1], got {density}")));
    }
    if n_in == 0 || n_out == 0 || hidden == 0 {
        return Err(Error::invalid("layer widths must be positive"));
    }
    let mut widths = vec![n_in];
    widths.extend(std::iter::repeat_n(hidden, depth - 1));
    widths.push(n_out);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .windows(2)
        .map(|w| {
            let mut edges = Vec::new();
            for dst in 0..w[1] {
                for src in 0..w[0] {
                    if density >= 1.0 || rng.random::<f64>() < density {
                        edges.push(Edge::trainable(src, dst));
                    }
                }
            }
            edges
        })
        .collect();
    Topology::new(format!("random({n_in},{n_out},{depth},{density})"), widths, layers)
}

/// Three-stage Clos network with `r` ingress and egress switches and `n_mid`
/// middle switches. Each ingress switch fully connects its `n_in / r` inputs
/// to one neuron per middle switch, each middle switch is an `r x r`
/// crossbar and the egress stage mirrors the ingress stage.
pub fn gen_clos(n_in: usize, n_out: usize, r: usize, n_mid: usize) -> Result<Topology> {
    if r == 0 || n_mid == 0 {
        return Err(Error::invalid("r and n_mid must be positive"));
    }
    if n_in == 0 || n_out == 0 || n_in % r != 0 || n_out % r != 0 {
        return Err(Error::invalid(format!("r={r} must divide n_in={n_in} and n_out={n_out}")));
    }
    let in_per = n_in / r;
    let out_per = n_out / r;
    // Stage-1 neuron for (ingress switch b, middle switch j) is b * n_mid + j.
    // Stage-2 neuron for (middle switch j, egress switch b) is j * r + b.
    let mut ingress = Vec::with_capacity(n_in * n_mid);
    for b in 0..r {
        for i in 0..in_per {
            for j in 0..n_mid {
                ingress.push(Edge::trainable(b * in_per + i, b * n_mid + j));
            }
        }
    }
    let mut middle = Vec::with_capacity(n_mid * r * r);
    for j in 0..n_mid {
        for a in 0..r {
            for b in 0..r {
                middle.push(Edge::trainable(a * n_mid + j, j * r + b));
            }
        }
    }
    let mut egress = Vec::with_capacity(n_out * n_mid);
    for b in 0..r {
        for j in 0..n_mid {
            for o in 0..out_per {
                egress.push(Edge::trainable(j * r + b, b * out_per + o));
            }
        }
    }
    Topology::new(
        format!("clos({n_in},{n_out},{r},{n_mid})"),
        vec![n_in, r * n_mid, n_mid * r, n_out],
        vec![ingress, middle, egress],
    )
}

fn butterfly_layer(n: usize, stage: u32, offset: usize) -> Vec<Edge> {
    let bit = 1usize << stage;
    (0..n)
        .flat_map(|i| [Edge::trainable(offset + i, offset + i), Edge::trainable(offset + (i ^ bit), offset + i)])
        .collect()
}

/// Radix-2 butterfly: layer `t` connects `i` to `i` and `i ^ 2^(t mod log2 n)`.
pub fn gen_butterfly(n: usize, depth: usize) -> Result<Topology> {
    let stages = log2_exact(n, "butterfly width")?;
    if depth == 0 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let layers = (0..depth).map(|t| butterfly_layer(n, t as u32 % stages, 0)).collect();
    Topology::new(format!("butterfly({n},{depth})"), vec![n; depth + 1], layers)
}

/// Every layer connects a neuron to itself and its `log2 n` hypercube neighbours.
pub fn gen_hypercube(n: usize, depth: usize) -> Result<Topology> {
    let dims = log2_exact(n, "hypercube width")?;
    if depth == 0 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let layer: Vec<Edge> = (0..n)
        .flat_map(|i| std::iter::once(i).chain((0..dims).map(move |d| i ^ (1 << d))).map(move |s| Edge::trainable(s, i)))
        .collect();
    Topology::new(format!("hypercube({n},{depth})"), vec![n; depth + 1], vec![layer; depth])
}

/// 2D torus on `rows x cols` neurons; every layer connects a node to itself
/// and its four wrap-around neighbours (coinciding neighbours are merged).
pub fn gen_torus(rows: usize, cols: usize, depth: usize) -> Result<Topology> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!("torus needs rows, cols >= 2, got {rows}x{cols}")));
    }
    if depth == 0 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let n = rows * cols;
    let idx = |r: usize, c: usize| r * cols + c;
    let mut layer = Vec::with_capacity(5 * n);
    for r in 0..rows {
        for c in 0..cols {
            let srcs: BTreeSet<usize> = [
                idx(r, c),
                idx((r + 1) % rows, c),
                idx((r + rows - 1) % rows, c),
                idx(r, (c + 1) % cols),
                idx(r, (c + cols - 1) % cols),
            ]
            .into_iter()
            .collect();
            layer.extend(srcs.into_iter().map(|s| Edge::trainable(s, idx(r, c))));
        }
    }
    Topology::new(format!("torus({rows},{cols},{depth})"), vec![n; depth + 1], vec![layer; depth])
}

/// Two dense layers through a bottleneck of width `k`.
pub fn gen_low_rank(n_in: usize, n_out: usize, k: usize) -> Result<Topology> {
    if n_in == 0 || n_out == 0 || k == 0 {
        return Err(Error::invalid("widths and rank must be positive"));
    }
    let first = (0..k).flat_map(|d| (0..n_in).map(move |s| Edge::trainable(s, d))).collect();
    let second = (0..n_out).flat_map(|d| (0..k).map(move |s| Edge::trainable(s, d))).collect();
    Topology::new(format!("low_rank({n_in},{n_out},{k})"), vec![n_in, k, n_out], vec![first, second])
}

/// `p` disjoint depth-`d` butterflies fed by the same inputs, followed by a
/// constant summation layer adding corresponding outputs of all blocks.
pub fn gen_parallel_butterfly(n: usize, d: usize, p: usize) -> Result<Topology> {
    let stages = log2_exact(n, "butterfly width")?;
    if d == 0 || p == 0 {
        return Err(Error::invalid("d and p must be >= 1"));
    }
    let bit0 = 1usize;
    let first: Vec<Edge> = (0..p)
        .flat_map(|b| (0..n).flat_map(move |i| [Edge::trainable(i, b * n + i), Edge::trainable(i ^ bit0, b * n + i)]))
        .collect();
    let mut layers = vec![first];
    for t in 1..d {
        let stage = t as u32 % stages;
        layers.push((0..p).flat_map(|b| butterfly_layer(n, stage, b * n)).collect());
    }
    layers.push((0..p).flat_map(|b| (0..n).map(move |i| Edge::constant(b * n + i, i, 1.0))).collect());
    let mut widths = vec![n];
    widths.extend(std::iter::repeat_n(p * n, d));
    widths.push(n);
    Topology::new(format!("parallel_butterfly({n},{d},{p})"), widths, layers)
}

/// The 3-input, 2-output graph obtained by splitting a 3-1-2 cascade into
/// two-input and two-output primitives: `a,b -> m`, `m,c -> n`, `n -> x',y'`
/// followed by constant pass-throughs `x' -> x`, `y' -> y`. Input `c` reaches
/// the second stage through a constant pass-through as well.
pub fn gen_split_312() -> Result<Topology> {
    let layers = vec![
        // inputs a=0, b=1, c=2 -> m=0, c'=1
        vec![Edge::trainable(0, 0), Edge::trainable(1, 0), Edge::constant(2, 1, 1.0)],
        // m, c' -> n
        vec![Edge::trainable(0, 0), Edge::trainable(1, 0)],
        // n -> x', y'
        vec![Edge::trainable(0, 0), Edge::trainable(0, 1)],
        // x' -> x, y' -> y
        vec![Edge::constant(0, 0, 1.0), Edge::constant(1, 1, 1.0)],
    ];
    Topology::new("split_312", vec![3, 2, 1, 2, 2], layers)
}

/// Converts one in-edge of every non-input neuron into a constant-1 edge.
///
/// Neurons that already own a constant in-edge are left untouched, so the
/// operation is idempotent.
pub fn apply_skip_connections(t: &Topology, selection: SkipSelection) -> Result<Topology> {
    let mut rng = match selection {
        SkipSelection::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut layers = t.layers.clone();
    for (l, edges) in layers.iter_mut().enumerate() {
        let n_dst = t.layer_widths[l + 1];
        let mut start = 0;
        for dst in 0..n_dst {
            let end = start + edges[start..].iter().take_while(|e| e.dst == dst).count();
            let incoming = &mut edges[start..end];
            if incoming.is_empty() {
                return Err(Error::invalid(format!("neuron {dst} in layer {} has no in-edges", l + 1)));
            }
            if incoming.iter().all(|e| e.kind.is_trainable()) {
                let pick = match selection {
                    SkipSelection::LowestSource => 0,
                    SkipSelection::PreferSelf => incoming.iter().position(|e| e.src == dst).unwrap_or(0),
                    SkipSelection::Seeded(_) => rng.as_mut().unwrap().random_range(0..incoming.len()),
                };
                incoming[pick].kind = EdgeKind::Constant(1.0);
            }
            start = end;
        }
    }
    Topology::new(format!("{}+skip", t.name), t.layer_widths.clone(), layers)
}

/// Exact (input, output) reachability coverage.
pub fn connectivity(t: &Topology) -> ConnectivityReport {
    let reach = t.input_reach();
    let reachable_pairs: usize = reach.last().unwrap().iter().map(|b| b.count_ones(..)).sum();
    let total_pairs = t.n_inputs() * t.n_outputs();
    ConnectivityReport { reachable_pairs, total_pairs, fraction: reachable_pairs as f64 / total_pairs as f64 }
}

/// Parameter counts of a dense `f x f` convolution with `c` input and `k`
/// output channels versus its depthwise (`n` filters per channel) plus
/// `t`-layer sparse pointwise decomposition at pointwise density `s`.
pub fn conv_param_counts(f: u64, c: u64, k: u64, n: u64, t: u64, s: f64) -> (u64, f64) {
    let dense = f * f * c * k;
    let decomposed = (f * f * c * n) as f64 + (c * n * k * t) as f64 * s;
    (dense, decomposed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_fraction(t: &Topology) -> f64 {
        // independent reachability: explicit BFS from each input
        let mut reached = 0;
        for i in 0..t.n_inputs() {
            let mut frontier = vec![i];
            for edges in t.layers() {
                let mut next: Vec<usize> = edges.iter().filter(|e| frontier.contains(&e.src)).map(|e| e.dst).collect();
                next.sort_unstable();
                next.dedup();
                frontier = next;
            }
            reached += frontier.len();
        }
        reached as f64 / (t.n_inputs() * t.n_outputs()) as f64
    }

    #[test]
    fn dense_random_is_complete() {
        let t = gen_random(4, 4, 1, 1.0, 123).unwrap();
        assert_eq!(t.edge_count(), 16);
        assert_eq!(t, gen_random(4, 4, 1, 1.0, 99).unwrap().with_name(t.name()));
    }

    #[test]
    fn random_edge_count_within_binomial_band() {
        let t = gen_random(256, 256, 3, 1.0 / 256.0, 7).unwrap();
        let trials: f64 = 3.0 * 256.0 * 256.0;
        let p: f64 = 1.0 / 256.0;
        let mean = trials * p;
        let sd = (trials * p * (1.0 - p)).sqrt();
        assert!((t.edge_count() as f64 - mean).abs() < 4.0 * sd, "{}", t.edge_count());
        assert_eq!(t, gen_random(256, 256, 3, 1.0 / 256.0, 7).unwrap());
    }

    #[test]
    fn random_rejects_bad_arguments() {
        assert!(gen_random(0, 4, 1, 0.5, 0).is_err());
        assert!(gen_random(4, 4, 0, 0.5, 0).is_err());
        assert!(gen_random(4, 4, 1, 0.0, 0).is_err());
        assert!(gen_random(4, 4, 1, 1.5, 0).is_err());
    }

    #[test]
    fn clos_counts() {
        let t = gen_clos(32, 32, 8, 9).unwrap();
        assert_eq!(t.edge_count(), 1152);
        assert_eq!(connectivity(&t).fraction, 1.0);
        let small = gen_clos(4, 4, 2, 1).unwrap();
        let mut counted = 0;
        for edges in small.layers() {
            counted += edges.len();
        }
        assert_eq!(counted, 12);
        assert!(gen_clos(30, 32, 8, 9).is_err());
    }

    #[test]
    fn butterfly_counts_and_reach() {
        assert_eq!(gen_butterfly(32, 18).unwrap().edge_count(), 1152);
        let full = gen_butterfly(32, 5).unwrap();
        assert_eq!(connectivity(&full).fraction, 1.0);
        assert_eq!(bfs_fraction(&full), 1.0);
        let one = gen_butterfly(4, 1).unwrap();
        assert_eq!(one.edge_count(), 8);
        assert_eq!(connectivity(&one).reachable_pairs, 8);
        assert!(gen_butterfly(12, 2).is_err());
        for l in 0..full.depth() {
            for dst in 0..32 {
                assert_eq!(full.layer(l).iter().filter(|e| e.dst == dst).count(), 2);
            }
        }
    }

    #[test]
    fn hypercube_counts() {
        assert_eq!(gen_hypercube(32, 6).unwrap().edge_count(), 1152);
        assert_eq!(gen_hypercube(2, 1).unwrap().edge_count(), 4);
        let one = gen_hypercube(32, 1).unwrap();
        let report = connectivity(&one);
        assert_eq!(report.reachable_pairs, 6 * 32);
        assert!((bfs_fraction(&one) - 6.0 / 32.0).abs() < 1e-12);
        assert!(gen_hypercube(6, 1).is_err());
    }

    #[test]
    fn torus_counts() {
        assert_eq!(gen_torus(8, 4, 7).unwrap().edge_count(), 1120);
        let tiny = gen_torus(2, 2, 1).unwrap();
        // node (r,c) sees itself, (1-r,c) and (r,1-c)
        assert_eq!(tiny.edge_count(), 12);
        for d in 1..4 {
            let a = gen_torus(4, 3, d).unwrap().edge_count();
            let b = gen_torus(4, 3, d + 1).unwrap().edge_count();
            assert_eq!(b - a, 5 * 12);
        }
        assert!(gen_torus(1, 4, 1).is_err());
    }

    #[test]
    fn low_rank_counts() {
        assert_eq!(gen_low_rank(32, 32, 4).unwrap().edge_count(), 256);
        assert_eq!(connectivity(&gen_low_rank(32, 32, 1).unwrap()).fraction, 1.0);
    }

    #[test]
    fn parallel_butterfly_structure() {
        let t = gen_parallel_butterfly(32, 5, 3).unwrap();
        assert_eq!(t.trainable_edge_count(), 3 * 2 * 32 * 5);
        assert_eq!(t.constant_edge_count(), 3 * 32);
        assert_eq!(t.layer_widths(), &[32, 96, 96, 96, 96, 96, 32]);

        let pb = gen_parallel_butterfly(4, 3, 2).unwrap();
        assert_eq!(pb.layer_widths(), &[4, 8, 8, 8, 4]);
        // block b of the parallel network is a shifted copy of butterfly(4, 3)
        let single = gen_butterfly(4, 3).unwrap();
        for b in 0..2 {
            for l in 0..3 {
                let block: Vec<(usize, usize)> = pb
                    .layer(l)
                    .iter()
                    .filter(|e| e.dst / 4 == b)
                    .map(|e| (if l == 0 { e.src } else { e.src - 4 * b }, e.dst - 4 * b))
                    .collect();
                let reference: Vec<(usize, usize)> = single.layer(l).iter().map(|e| (e.src, e.dst)).collect();
                assert_eq!(block, reference);
            }
        }
        assert!(pb.layer(3).iter().all(|e| e.kind == EdgeKind::Constant(1.0)));
    }

    #[test]
    fn skip_connections() {
        let b = gen_butterfly(32, 18).unwrap();
        let s = apply_skip_connections(&b, SkipSelection::LowestSource).unwrap();
        assert_eq!(s.edge_count(), 1152);
        assert_eq!(s.trainable_edge_count(), 1152 - 17 * 32 - 32);
        let again = apply_skip_connections(&s, SkipSelection::LowestSource).unwrap();
        assert_eq!(again.layers(), s.layers());
        for l in 0..s.depth() {
            for dst in 0..32 {
                let consts = s.layer(l).iter().filter(|e| e.dst == dst && !e.kind.is_trainable()).count();
                assert_eq!(consts, 1);
            }
        }
        let d = apply_skip_connections(&gen_dense(2, 2).unwrap(), SkipSelection::LowestSource).unwrap();
        assert_eq!(d.edge_count(), 4);
        assert_eq!(d.trainable_edge_count(), 2);

        let ps = apply_skip_connections(&b, SkipSelection::PreferSelf).unwrap();
        assert!(ps.edges().filter(|(_, e)| !e.kind.is_trainable()).all(|(_, e)| e.src == e.dst));
        let seeded = apply_skip_connections(&b, SkipSelection::Seeded(3)).unwrap();
        assert_eq!(seeded, apply_skip_connections(&b, SkipSelection::Seeded(3)).unwrap());
        assert_eq!(seeded.trainable_edge_count(), 576);
    }

    #[test]
    fn skip_rejects_dangling_neuron() {
        let t = Topology::new("gap", vec![2, 2], vec![vec![Edge::trainable(0, 0)]]).unwrap();
        let err = apply_skip_connections(&t, SkipSelection::LowestSource).unwrap_err();
        assert!(err.to_string().contains("neuron 1"), "{err}");
    }

    #[test]
    fn isolated_output_lowers_fraction() {
        let t = Topology::new("iso", vec![2, 2], vec![vec![Edge::trainable(0, 0), Edge::trainable(1, 0)]]).unwrap();
        let r = connectivity(&t);
        assert_eq!(r.reachable_pairs, 2);
        assert_eq!(r.fraction, 0.5);
        assert_eq!(connectivity(&gen_dense(3, 5).unwrap()).fraction, 1.0);
    }

    #[test]
    fn sparse_random_matches_closure_oracle() {
        let t = gen_random(256, 256, 3, 1.0 / 256.0, 7).unwrap();
        // boolean matrix product oracle
        let mut m = vec![vec![false; 256]; 256];
        for i in 0..256 {
            m[i][i] = true;
        }
        for edges in t.layers() {
            let mut next = vec![vec![false; 256]; 256];
            for e in edges {
                for i in 0..256 {
                    if m[i][e.src] {
                        next[i][e.dst] = true;
                    }
                }
            }
            m = next;
        }
        let count: usize = m.iter().map(|row| row.iter().filter(|&&b| b).count()).sum();
        let r = connectivity(&t);
        assert_eq!(r.reachable_pairs, count);
        assert!(r.fraction < 0.5);
    }

    #[test]
    fn validation_errors() {
        assert!(Topology::new("x", vec![2, 2], vec![vec![Edge::trainable(2, 0)]]).is_err());
        assert!(Topology::new("x", vec![2, 2], vec![vec![Edge::trainable(0, 0), Edge::trainable(0, 0)]]).is_err());
        assert!(Topology::new("x", vec![2, 0], vec![vec![]]).is_err());
        assert!(Topology::new("x", vec![2, 2], vec![vec![Edge::constant(0, 0, f64::NAN)]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = apply_skip_connections(&gen_parallel_butterfly(4, 2, 2).unwrap(), SkipSelection::LowestSource).unwrap();
        let s = t.to_json().unwrap();
        assert!(s.contains("\"layer_widths\""));
        assert_eq!(Topology::from_json(&s).unwrap(), t);
        let odd = Topology::new("v", vec![1, 1], vec![vec![Edge::constant(0, 0, 0.1 + 0.2)]]).unwrap();
        assert_eq!(Topology::from_json(&odd.to_json().unwrap()).unwrap(), odd);
        assert!(Topology::from_json(r#"{"name":"x","layer_widths":[1,1],"layers":[[[0,0,"q"]]]}"#).is_err());
        assert!(Topology::from_json(r#"{"name":"x","layer_widths":[1,1],"layers":[[[0,3,"t"]]]}"#).is_err());
    }

    #[test]
    fn conv_counts() {
        assert_eq!(conv_param_counts(3, 64, 64, 1, 1, 1.0), (36864, 4672.0));
        assert_eq!(conv_param_counts(3, 64, 64, 2, 3, 0.0).1, (9 * 64 * 2) as f64);
        let (f, c, k) = (3u64, 16u64, 32u64);
        assert_eq!(conv_param_counts(f, c, k, k, 1, 1.0).1, (f * f * c * k + c * k * k) as f64);
    }

    #[test]
    fn conv_decomposed_matches_generated_pointwise_layer() {
        // pointwise stage as a dense c*n -> k layer, one layer, density 1
        let (f, c, k, n) = (3u64, 4u64, 6u64, 2u64);
        let pointwise = gen_dense((c * n) as usize, k as usize).unwrap();
        let (_, decomposed) = conv_param_counts(f, c, k, n, 1, 1.0);
        assert_eq!(decomposed, (f * f * c * n) as f64 + pointwise.edge_count() as f64);
    }

    #[test]
    fn split_312_shape() {
        let t = gen_split_312().unwrap();
        assert_eq!(t.trainable_edge_count(), 6);
        assert_eq!(connectivity(&t).fraction, 1.0);
    }
}
