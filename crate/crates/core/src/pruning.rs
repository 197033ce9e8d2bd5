//! Translation-invariant measurements and max-clique correspondence pruning.

use fixedbitset::FixedBitSet;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::CorrespondenceSet;
use crate::geometry::PointCloud;

/// Translation-invariant measurements: `beta_k ≈ R alpha_k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimSet {
    pub alphas: Vec<Vector3<f64>>,
    pub betas: Vec<Vector3<f64>>,
}

impl TimSet {
    pub fn new(alphas: Vec<Vector3<f64>>, betas: Vec<Vector3<f64>>) -> Self {
        assert_eq!(alphas.len(), betas.len(), "TIM halves differ in length");
        Self { alphas, betas }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vector3<f64>, &Vector3<f64>)> {
        self.alphas.iter().zip(self.betas.iter())
    }
}

/// Chain-form TIMs: `k`-th TIM is pair `k+1` minus pair `k`, and the last
/// one closes the chain (first pair minus last pair), so `K = |corr|`.
pub fn build_tims_chain(src: &PointCloud, tgt: &PointCloud, corr: &CorrespondenceSet) -> Result<TimSet> {
    let n = corr.len();
    if n < 2 {
        return Err(Error::InsufficientCorrespondences { needed: 2, got: n });
    }
    corr.check_bounds(src.len(), tgt.len())?;
    let p = src.points();
    let q = tgt.points();
    let c = corr.pairs();
    let (alphas, betas) = (0..n)
        .map(|k| {
            let (a, b) = (&c[k], &c[(k + 1) % n]);
            (p[b.src] - p[a.src], q[b.tgt] - q[a.tgt])
        })
        .unzip();
    Ok(TimSet { alphas, betas })
}

/// Undirected simple graph over correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatGraph {
    adj: Vec<FixedBitSet>,
}

impl CompatGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![FixedBitSet::with_capacity(n); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(b)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].count_ones(..)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].ones()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.len()).map(|v| self.degree(v)).sum::<usize>() / 2
    }

    /// True when every pair of `vertices` is adjacent.
    pub fn is_clique(&self, vertices: &[usize]) -> bool {
        vertices
            .iter()
            .enumerate()
            .all(|(k, &a)| vertices[k + 1..].iter().all(|&b| self.has_edge(a, b)))
    }

    /// True when no vertex outside `clique` is adjacent to all of it.
    pub fn is_maximal_clique(&self, clique: &[usize]) -> bool {
        self.is_clique(clique)
            && (0..self.len())
                .filter(|v| !clique.contains(v))
                .all(|v| !clique.iter().all(|&c| self.has_edge(v, c)))
    }
}

/// Pairwise length consistency: vertices `a` and `b` are joined when
/// `| ‖p_a − p_b‖ − ‖q_a − q_b‖ | ≤ scale · (σ_a + σ_b)`.
pub fn build_compat_graph(src: &PointCloud, tgt: &PointCloud, corr: &CorrespondenceSet, scale: f64) -> CompatGraph {
    let n = corr.len();
    let p = src.points();
    let q = tgt.points();
    let c = corr.pairs();
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|a| {
            ((a + 1)..n)
                .filter(|&b| {
                    let dp = (p[c[a].src] - p[c[b].src]).norm();
                    let dq = (q[c[a].tgt] - q[c[b].tgt]).norm();
                    (dp - dq).abs() <= scale * (c[a].sigma + c[b].sigma)
                })
                .collect()
        })
        .collect();
    let mut g = CompatGraph::new(n);
    for (a, row) in rows.into_iter().enumerate() {
        for b in row {
            g.add_edge(a, b);
        }
    }
    g
}

/// k-core number of every vertex (bucket peeling).
pub fn core_numbers(graph: &CompatGraph) -> Vec<usize> {
    let n = graph.len();
    let mut deg: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let mut bins = vec![0usize; max_deg + 1];
    for &d in &deg {
        bins[d] += 1;
    }
    let mut start = 0;
    for b in bins.iter_mut() {
        let count = *b;
        *b = start;
        start += count;
    }
    let mut order = vec![0usize; n];
    let mut pos = vec![0usize; n];
    for v in 0..n {
        pos[v] = bins[deg[v]];
        order[pos[v]] = v;
        bins[deg[v]] += 1;
    }
    for d in (1..=max_deg).rev() {
        bins[d] = bins[d - 1];
    }
    bins[0] = 0;
    for i in 0..n {
        let v = order[i];
        for u in graph.neighbors(v) {
            if deg[u] > deg[v] {
                let du = deg[u];
                let pu = pos[u];
                let pw = bins[du];
                let w = order[pw];
                if u != w {
                    order.swap(pu, pw);
                    pos[u] = pw;
                    pos[w] = pu;
                }
                bins[du] += 1;
                deg[u] -= 1;
            }
        }
    }
    deg
}

fn greedy_clique(graph: &CompatGraph, seed: usize, allowed: &FixedBitSet) -> Vec<usize> {
    let mut clique = vec![seed];
    let mut cand = graph.adj[seed].clone();
    cand.intersect_with(allowed);
    while !cand.is_clear() {
        let mut pick = None;
        let mut pick_score = 0;
        for v in cand.ones() {
            let score = graph.adj[v].intersection_count(&cand);
            if pick.is_none() || score > pick_score {
                pick = Some(v);
                pick_score = score;
            }
        }
        let v = pick.expect("candidate set is non-empty");
        clique.push(v);
        cand.intersect_with(&graph.adj[v]);
    }
    clique
}

/// Greedy maximal clique.
///
/// Seeds are tried in descending core-number order (ties by lowest index);
/// each seed grows by repeatedly adding the candidate with the most
/// neighbours inside the remaining candidate set. Seeds and candidates
/// whose core number cannot beat the current best are skipped. The result
/// is sorted and is empty only for an empty graph.
pub fn mcis_heuristic(graph: &CompatGraph) -> Vec<usize> {
    let n = graph.len();
    if n == 0 {
        return Vec::new();
    }
    let core = core_numbers(graph);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| core[b].cmp(&core[a]).then(a.cmp(&b)));

    let mut best: Vec<usize> = Vec::new();
    for &seed in &order {
        if core[seed] < best.len() {
            break;
        }
        let mut allowed = FixedBitSet::with_capacity(n);
        for (v, &c) in core.iter().enumerate() {
            if c >= best.len() {
                allowed.insert(v);
            }
        }
        let clique = greedy_clique(graph, seed, &allowed);
        if clique.len() > best.len() {
            best = clique;
        }
    }
    best.sort_unstable();
    best
}

/// Restricts `corr` to the clique members (in their original order) and
/// rebuilds the chain TIMs over the survivors. A single survivor yields an
/// empty TIM set.
pub fn filter_by_clique(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
    clique: &[usize],
) -> Result<(CorrespondenceSet, TimSet)> {
    let mut positions = clique.to_vec();
    positions.sort_unstable();
    positions.dedup();
    if let Some(&bad) = positions.iter().find(|&&k| k >= corr.len()) {
        return Err(Error::IndexOutOfRange {
            pair: bad,
            index: bad,
            len: corr.len(),
        });
    }
    let kept = corr.select(&positions);
    let tims = if kept.len() >= 2 {
        build_tims_chain(src, tgt, &kept)?
    } else {
        TimSet::default()
    };
    Ok((kept, tims))
}
