//! Upper bound on the number of exactly reconstructible matrix entries.
//!
//! Every entry `(i, o)` of the reconstructed matrix is a sum over the paths
//! from input `i` to output `o`; fixing it requires dedicating one trainable
//! edge on one of those paths. Matching constraints to edges therefore bounds
//! how many entries can be satisfied at once.

use std::collections::VecDeque;

use serde::Serialize;

use crate::topology::Topology;

/// Identifies an edge by its layer and position inside the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EdgeId {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintGraph {
    /// Reachable `(input, output)` pairs with at least one trainable edge on a path.
    pub constraints: Vec<(usize, usize)>,
    /// Trainable edges.
    pub edges: Vec<EdgeId>,
    /// For each constraint, indices into `edges` lying on some path.
    pub adjacency: Vec<Vec<usize>>,
    /// Reachable pairs whose paths consist of constant edges only.
    pub constant_only: usize,
    /// Pairs without any path.
    pub unreachable: usize,
}

/// Edge `e` is adjacent to `(i, o)` iff `i` reaches `e.src` and `e.dst`
/// reaches `o`. Constant edges cannot absorb a constraint and are skipped.
pub fn build_constraint_graph(t: &Topology) -> ConstraintGraph {
    let fwd = t.input_reach();
    let bwd = t.output_reach();
    let n_in = t.n_inputs();
    let n_out = t.n_outputs();

    let mut edges = Vec::new();
    let mut per_pair: Vec<Vec<usize>> = vec![Vec::new(); n_in * n_out];
    for (l, layer) in t.layers().iter().enumerate() {
        for (index, e) in layer.iter().enumerate() {
            if !e.kind.is_trainable() {
                continue;
            }
            let id = edges.len();
            edges.push(EdgeId { layer: l, index });
            let outs: Vec<usize> = bwd[l + 1][e.dst].ones().collect();
            for i in fwd[l][e.src].ones() {
                for &o in &outs {
                    per_pair[i * n_out + o].push(id);
                }
            }
        }
    }

    let reach_out = fwd.last().unwrap();
    let mut constraints = Vec::new();
    let mut adjacency = Vec::new();
    let mut constant_only = 0;
    let mut unreachable = 0;
    for i in 0..n_in {
        for o in 0..n_out {
            let adj = std::mem::take(&mut per_pair[i * n_out + o]);
            if !reach_out[o].contains(i) {
                unreachable += 1;
            } else if adj.is_empty() {
                constant_only += 1;
            } else {
                constraints.push((i, o));
                adjacency.push(adj);
            }
        }
    }
    ConstraintGraph { constraints, edges, adjacency, constant_only, unreachable }
}

/// Size of a maximum matching between constraints and edges (Hopcroft-Karp).
pub fn max_matching(g: &ConstraintGraph) -> usize {
    const FREE: usize = usize::MAX;
    let n_left = g.constraints.len();
    let n_right = g.edges.len();
    let mut match_left = vec![FREE; n_left];
    let mut match_right = vec![FREE; n_right];
    let mut dist = vec![0usize; n_left];
    let mut matched = 0;

    loop {
        // BFS layering from free left vertices
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if match_left[u] == FREE {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = FREE;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &g.adjacency[u] {
                let w = match_right[v];
                if w == FREE {
                    found = true;
                } else if dist[w] == FREE {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            break;
        }

        // DFS for vertex-disjoint shortest augmenting paths, iteratively
        let mut next_edge = vec![0usize; n_left];
        for root in 0..n_left {
            if match_left[root] != FREE {
                continue;
            }
            let mut stack = vec![root];
            while let Some(&u) = stack.last() {
                if next_edge[u] == g.adjacency[u].len() {
                    dist[u] = FREE;
                    stack.pop();
                    continue;
                }
                let v = g.adjacency[u][next_edge[u]];
                next_edge[u] += 1;
                let w = match_right[v];
                if w == FREE {
                    // augment along the stack
                    let mut v = v;
                    while let Some(u) = stack.pop() {
                        let prev = match_left[u];
                        match_left[u] = v;
                        match_right[v] = u;
                        v = prev;
                    }
                    matched += 1;
                    break;
                } else if dist[w] != FREE && dist[w] == dist[u] + 1 {
                    stack.push(w);
                }
            }
        }
    }
    matched
}
