//! FPFH descriptors and reciprocal descriptor matching.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Location, Result};
use crate::geometry::{Normal3, Point3, PointCloud};
use crate::spatial::PointIndex;

pub const FPFH_BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * FPFH_BINS;

/// 33-bin fast point feature histogram: θ, α and φ sub-histograms in that
/// order, each rescaled to sum to 100. An all-zero histogram marks a point
/// that had no usable neighbours and must not be matched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpfhDescriptor {
    pub histogram: [f64; FPFH_DIM],
}

impl FpfhDescriptor {
    pub const ZERO: FpfhDescriptor = FpfhDescriptor {
        histogram: [0.0; FPFH_DIM],
    };

    pub fn is_empty(&self) -> bool {
        self.histogram.iter().all(|&b| b == 0.0)
    }

    fn dist_sq(&self, other: &FpfhDescriptor) -> f64 {
        self.histogram
            .iter()
            .zip(other.histogram.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A putative match between source point `src` and target point `tgt` with
/// noise bound `sigma` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: usize,
    pub tgt: usize,
    pub sigma: f64,
}

/// Ordered correspondence list. Order matters: TIMs are built along it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Validates `sigma > 0` and uniqueness of `(src, tgt)`.
    pub fn new(pairs: Vec<Correspondence>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for (k, c) in pairs.iter().enumerate() {
            if !(c.sigma > 0.0) || !c.sigma.is_finite() {
                return Err(Error::Config(format!(
                    "correspondence {k} has non-positive sigma {}",
                    c.sigma
                )));
            }
            if !seen.insert((c.src, c.tgt)) {
                return Err(Error::Config(format!(
                    "duplicate correspondence ({}, {})",
                    c.src, c.tgt
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn from_pairs(pairs: &[(usize, usize)], sigma: f64) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(src, tgt)| Correspondence { src, tgt, sigma })
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.pairs.iter()
    }

    /// Keeps the listed positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            pairs: positions.iter().map(|&k| self.pairs[k]).collect(),
        }
    }

    /// Checks every index against the cloud sizes.
    pub fn check_bounds(&self, src_len: usize, tgt_len: usize) -> Result<()> {
        for (pair, c) in self.pairs.iter().enumerate() {
            if c.src >= src_len {
                return Err(Error::IndexOutOfRange {
                    pair,
                    index: c.src,
                    len: src_len,
                });
            }
            if c.tgt >= tgt_len {
                return Err(Error::IndexOutOfRange {
                    pair,
                    index: c.tgt,
                    len: tgt_len,
                });
            }
        }
        Ok(())
    }

    /// Text form: one `src tgt sigma` line per pair.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# src_index tgt_index sigma\n");
        for c in &self.pairs {
            let _ = writeln!(out, "{} {} {}", c.src, c.tgt, c.sigma);
        }
        out
    }
}

/// Parses the whitespace-separated `src tgt sigma` format; `#` starts a comment.
pub fn parse_correspondences(text: &str) -> Result<CorrespondenceSet> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loc = Location::Line(lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(loc, format!("expected 3 fields, found {}", fields.len())));
        }
        let src: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(loc, format!("bad source index {:?}", fields[0])))?;
        let tgt: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(loc, format!("bad target index {:?}", fields[1])))?;
        let sigma: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(loc, format!("bad sigma {:?}", fields[2])))?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::parse(loc, format!("sigma must be positive, got {sigma}")));
        }
        if !seen.insert((src, tgt)) {
            return Err(Error::parse(loc, format!("duplicate pair ({src}, {tgt})")));
        }
        pairs.push(Correspondence { src, tgt, sigma });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    Ok(CorrespondenceSet { pairs })
}

pub fn load_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correspondences(&text)
}

pub fn save_correspondences(path: impl AsRef<Path>, corr: &CorrespondenceSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corr.to_text()).map_err(|e| Error::io(path, e))
}

/// Darboux-frame pair features `(θ, α, φ)` between an oriented source and
/// target point. The source is the point whose normal makes the smaller
/// angle with the connecting line.
fn pair_features(p1: &Point3, n1: &Normal3, p2: &Point3, n2: &Normal3) -> Option<[f64; 3]> {
    let mut d = p2.coords - p1.coords;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let (mut u, mut n_other) = (n1.into_inner(), n2.into_inner());
    let a1 = u.dot(&d) / len;
    let a2 = n_other.dot(&d) / len;
    let phi = if a1.abs().acos() > a2.abs().acos() {
        std::mem::swap(&mut u, &mut n_other);
        d = -d;
        -a2
    } else {
        a1
    };
    let v = d.cross(&u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Some([0.0, 0.0, phi]);
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(&n_other);
    let theta = w.dot(&n_other).atan2(u.dot(&n_other));
    Some([theta, alpha, phi])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = ((value - lo) / (hi - lo) * FPFH_BINS as f64).floor();
    (b.max(0.0) as usize).min(FPFH_BINS - 1)
}

fn normalize_blocks(hist: &mut [f64; FPFH_DIM]) {
    for block in hist.chunks_mut(FPFH_BINS) {
        let sum: f64 = block.iter().sum();
        if sum > 0.0 {
            let s = 100.0 / sum;
            block.iter_mut().for_each(|b| *b *= s);
        }
    }
}

/// Two-pass FPFH over the radius neighbourhood.
///
/// First a simplified histogram (SPFH) per point from the pair features to
/// each neighbour, then `FPFH(p) = SPFH(p) + (1/k) Σ SPFH(q)/‖p − q‖`.
/// Points without a normal are skipped both as queries and as neighbours.
/// Neighbour sums run in index order, so results do not depend on thread
/// scheduling.
pub fn compute_fpfh(cloud: &PointCloud, normals: &[Option<Normal3>], radius: f64) -> Result<Vec<FpfhDescriptor>> {
    if normals.len() != cloud.len() {
        return Err(Error::Config(format!(
            "{} normals for {} points",
            normals.len(),
            cloud.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("FPFH radius must be positive, got {radius}")));
    }
    let pts = cloud.points();
    let index = PointIndex::new(pts);
    let neighbors: Vec<Vec<usize>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if normals[i].is_none() {
                return Vec::new();
            }
            index
                .within(p, radius)
                .into_iter()
                .filter(|&j| j != i && normals[j].is_some())
                .collect()
        })
        .collect();

    let spfh: Vec<[f64; FPFH_DIM]> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut h = [0.0; FPFH_DIM];
            let (Some(ni), nbrs) = (normals[i].as_ref(), &neighbors[i]) else {
                return h;
            };
            if nbrs.is_empty() {
                return h;
            }
            let inc = 100.0 / nbrs.len() as f64;
            for &j in nbrs {
                let nj = normals[j].as_ref().expect("filtered above");
                if let Some([theta, alpha, phi]) = pair_features(&pts[i], ni, &pts[j], nj) {
                    h[bin(theta, -PI, PI)] += inc;
                    h[FPFH_BINS + bin(alpha, -1.0, 1.0)] += inc;
                    h[2 * FPFH_BINS + bin(phi, -1.0, 1.0)] += inc;
                }
            }
            h
        })
        .collect();

    Ok((0..pts.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = &neighbors[i];
            if nbrs.is_empty() {
                return FpfhDescriptor::ZERO;
            }
            let mut h = spfh[i];
            let k = nbrs.len() as f64;
            for &j in nbrs {
                let d = (pts[j] - pts[i]).norm();
                if d == 0.0 {
                    continue;
                }
                let w = 1.0 / (k * d);
                for (acc, s) in h.iter_mut().zip(spfh[j].iter()) {
                    *acc += w * s;
                }
            }
            normalize_blocks(&mut h);
            FpfhDescriptor { histogram: h }
        })
        .collect())
}

fn nearest(query: &FpfhDescriptor, pool: &[FpfhDescriptor]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, d) in pool.iter().enumerate() {
        if d.is_empty() {
            continue;
        }
        let dist = query.dist_sq(d);
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}

/// Mutual nearest neighbours in descriptor space under L2, with ties broken
/// by lowest index. Empty descriptors never match. Output is ordered by
/// source index.
pub fn match_correspondences(
    desc_src: &[FpfhDescriptor],
    desc_tgt: &[FpfhDescriptor],
    default_sigma: f64,
) -> Result<CorrespondenceSet> {
    if desc_src.is_empty() || desc_tgt.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let nn_src: Vec<Option<usize>> = desc_tgt
        .par_iter()
        .map(|d| if d.is_empty() { None } else { nearest(d, desc_src) })
        .collect();
    let pairs: Vec<Correspondence> = desc_src
        .par_iter()
        .enumerate()
        .filter_map(|(i, d)| {
            if d.is_empty() {
                return None;
            }
            let j = nearest(d, desc_tgt)?;
            (nn_src[j] == Some(i)).then_some(Correspondence {
                src: i,
                tgt: j,
                sigma: default_sigma,
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    CorrespondenceSet::new(pairs)
}
