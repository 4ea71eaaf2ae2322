//! Relative-motion priors and the sparse transition graph they induce on a
//! shift grid.

use crate::error::{Error, Result};
use crate::transform::TransformationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MotionMode {
    /// One bin per displacement `(Δi, Δj)`.
    #[default]
    Vector,
    /// One bin per rounded displacement length.
    Magnitude,
}

impl MotionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionMode::Vector => "vector",
            MotionMode::Magnitude => "magnitude",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(MotionMode::Vector),
            "magnitude" => Ok(MotionMode::Magnitude),
            other => Err(Error::InvalidArgument(format!("unknown motion mode '{other}'"))),
        }
    }
}

/// Displacements with `Δi² + Δj² ≤ threshold²`, row-major in `(Δi, Δj)`.
pub fn vector_bins(threshold: u32) -> Vec<(i64, i64)> {
    let t = threshold as i64;
    let mut out = Vec::new();
    for di in -t..=t {
        for dj in -t..=t {
            if di * di + dj * dj <= t * t {
                out.push((di, dj));
            }
        }
    }
    out
}

/// `p(m)` over relative-motion bins. A displacement is allowed when its
/// Euclidean length is at most `threshold`; with `per_class` there is one
/// table per previous class, otherwise a single shared table.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrior {
    pub mode: MotionMode,
    pub threshold: u32,
    pub per_class: bool,
    pub tables: Vec<Vec<f64>>,
}

impl MotionPrior {
    pub fn uniform(mode: MotionMode, threshold: u32, per_class: bool, classes: usize) -> Self {
        let bins = Self::bin_count_for(mode, threshold);
        let count = if per_class { classes } else { 1 };
        Self {
            mode,
            threshold,
            per_class,
            tables: vec![vec![1.0 / bins as f64; bins]; count],
        }
    }

    pub fn bin_count_for(mode: MotionMode, threshold: u32) -> usize {
        match mode {
            MotionMode::Vector => vector_bins(threshold).len(),
            MotionMode::Magnitude => threshold as usize + 1,
        }
    }

    #[inline]
    pub fn bin_count(&self) -> usize {
        Self::bin_count_for(self.mode, self.threshold)
    }

    /// Bin of displacement `(Δi, Δj)`, or `None` beyond the threshold.
    pub fn bin_of(&self, di: i64, dj: i64) -> Option<usize> {
        let t = self.threshold as i64;
        let sq = di * di + dj * dj;
        if sq > t * t {
            return None;
        }
        match self.mode {
            MotionMode::Vector => vector_bins(self.threshold)
                .iter()
                .position(|&b| b == (di, dj)),
            MotionMode::Magnitude => Some((sq as f64).sqrt().round() as usize),
        }
    }

    /// Table used for transitions leaving class `c`.
    #[inline]
    pub fn table_index(&self, c: usize) -> usize {
        if self.per_class {
            c
        } else {
            0
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let expected = if self.per_class { classes } else { 1 };
        if self.tables.len() != expected {
            return Err(Error::InvalidModel(format!(
                "expected {expected} motion tables, found {}",
                self.tables.len()
            )));
        }
        let bins = self.bin_count();
        for (k, t) in self.tables.iter().enumerate() {
            if t.len() != bins {
                return Err(Error::InvalidModel(format!(
                    "motion table {k} has {} bins, expected {bins}",
                    t.len()
                )));
            }
            if t.iter().any(|&p| !(p >= 0.0)) || (t.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!(
                    "motion table {k} is not a distribution"
                )));
            }
        }
        Ok(())
    }
}

/// Grid displacement from cell `a` to cell `b` along an axis of size `m`.
#[inline]
fn axis_delta(a: usize, b: usize, m: usize, toroidal: bool) -> i64 {
    let d = b as i64 - a as i64;
    if !toroidal {
        return d;
    }
    let m = m as i64;
    let r = d.rem_euclid(m);
    if r > m / 2 {
        r - m
    } else {
        r
    }
}

/// Allowed moves between grid cells, in CSR form keyed by source cell.
/// Within a source the edges are sorted by target.
#[derive(Debug, Clone)]
pub(crate) struct MotionGraph {
    pub cells: usize,
    pub bins: usize,
    pub from: Vec<u32>,
    pub to: Vec<u32>,
    pub bin: Vec<u32>,
    /// `1 / #{edges from the same cell in the same bin}`.
    pub share: Vec<f64>,
    pub out_start: Vec<usize>,
    /// Edge ids grouped by target, each group sorted by source.
    pub in_edges: Vec<u32>,
    pub in_start: Vec<usize>,
}

impl MotionGraph {
    pub fn build(transforms: &TransformationSet, prior: &MotionPrior) -> Result<Self> {
        let grid = transforms.grid().ok_or_else(|| {
            Error::InvalidModel("a sequence model needs a grid-structured transformation set".into())
        })?;
        let toroidal = transforms.is_toroidal();
        let cells = grid.len();
        let bins = prior.bin_count();
        let lookup = match prior.mode {
            MotionMode::Vector => vector_bins(prior.threshold),
            MotionMode::Magnitude => Vec::new(),
        };
        let t = prior.threshold as i64;
        let bin_of = |di: i64, dj: i64| -> Option<usize> {
            if di * di + dj * dj > t * t {
                return None;
            }
            match prior.mode {
                MotionMode::Vector => lookup.iter().position(|&b| b == (di, dj)),
                MotionMode::Magnitude => Some(((di * di + dj * dj) as f64).sqrt().round() as usize),
            }
        };

        let mut from = Vec::new();
        let mut to = Vec::new();
        let mut bin = Vec::new();
        let mut share = Vec::new();
        let mut out_start = Vec::with_capacity(cells + 1);
        let mut per_bin = vec![0usize; bins];
        for a in 0..cells {
            out_start.push(from.len());
            let (ai, aj) = grid.cell(a);
            per_bin.fill(0);
            let first = from.len();
            for b in 0..cells {
                let (bi, bj) = grid.cell(b);
                let di = axis_delta(ai, bi, grid.rows, toroidal);
                let dj = axis_delta(aj, bj, grid.cols, toroidal);
                if let Some(k) = bin_of(di, dj) {
                    from.push(a as u32);
                    to.push(b as u32);
                    bin.push(k as u32);
                    per_bin[k] += 1;
                }
            }
            for e in first..from.len() {
                share.push(1.0 / per_bin[bin[e] as usize] as f64);
            }
        }
        out_start.push(from.len());

        let mut incoming: Vec<Vec<u32>> = vec![Vec::new(); cells];
        for (e, &b) in to.iter().enumerate() {
            incoming[b as usize].push(e as u32);
        }
        let mut in_start = Vec::with_capacity(cells + 1);
        let mut in_edges = Vec::with_capacity(from.len());
        for list in incoming {
            in_start.push(in_edges.len());
            in_edges.extend(list);
        }
        in_start.push(in_edges.len());

        Ok(Self {
            cells,
            bins,
            from,
            to,
            bin,
            share,
            out_start,
            in_edges,
            in_start,
        })
    }

    #[inline]
    pub fn edges(&self) -> usize {
        self.from.len()
    }

    #[inline]
    pub fn out_edges(&self, cell: usize) -> std::ops::Range<usize> {
        self.out_start[cell]..self.out_start[cell + 1]
    }

    #[inline]
    pub fn in_edges(&self, cell: usize) -> &[u32] {
        &self.in_edges[self.in_start[cell]..self.in_start[cell + 1]]
    }

    /// `Z_ℓ = Σ θ_b` over the bins reachable from each cell.
    pub fn normalizers(&self, table: &[f64]) -> Vec<f64> {
        (0..self.cells)
            .map(|a| {
                self.out_edges(a)
                    .map(|e| table[self.bin[e] as usize] * self.share[e])
                    .sum()
            })
            .collect()
    }

    /// Per-edge transition probabilities `θ_b / count_ℓ(b) / Z_ℓ`.
    pub fn edge_weights(&self, table: &[f64]) -> Vec<f64> {
        let z = self.normalizers(table);
        (0..self.edges())
            .map(|e| {
                let zf = z[self.from[e] as usize];
                if zf > 0.0 {
                    table[self.bin[e] as usize] * self.share[e] / zf
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Edge id for the move `a → b`, if allowed.
    pub fn find(&self, a: usize, b: usize) -> Option<usize> {
        let range = self.out_edges(a);
        let start = range.start;
        self.to[range]
            .binary_search(&(b as u32))
            .ok()
            .map(|i| start + i)
    }

    /// Maximizes `Σ_b n_b log θ_b − Σ_ℓ N_ℓ log Z_ℓ(θ)` by the
    /// minorize-maximize fixed point `θ_b ∝ n_b / Σ_{ℓ ∋ b} N_ℓ / Z_ℓ(θ)`,
    /// starting from `start`. Bins no departure can reach keep their old
    /// values; reachable bins keep their old total mass.
    pub fn refit_table(
        &self,
        start: &[f64],
        counts: &[f64],
        departures: &[f64],
        iterations: usize,
    ) -> Vec<f64> {
        let mut theta = start.to_vec();
        for _ in 0..iterations.max(1) {
            let z = self.normalizers(&theta);
            let mut denom = vec![0.0; self.bins];
            for a in 0..self.cells {
                if departures[a] > 0.0 && z[a] > 0.0 {
                    let w = departures[a] / z[a];
                    for e in self.out_edges(a) {
                        denom[self.bin[e] as usize] += w * self.share[e];
                    }
                }
            }
            let mut next = theta.clone();
            let (mut old_mass, mut new_mass) = (0.0, 0.0);
            for b in 0..self.bins {
                if denom[b] > 0.0 {
                    old_mass += theta[b];
                    next[b] = counts[b] / denom[b];
                    new_mass += next[b];
                }
            }
            if new_mass > 0.0 {
                for b in 0..self.bins {
                    if denom[b] > 0.0 {
                        next[b] *= old_mass / new_mass;
                    }
                }
            } else {
                return theta;
            }
            let change = next
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            theta = next;
            if change < 1e-14 {
                break;
            }
        }
        theta
    }
}
