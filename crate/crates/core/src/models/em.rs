//! EM options, step reports and expected sufficient statistics.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::kernel::LatentPosterior;
use super::tangent::TangentDirection;
use crate::error::Result;
use crate::transform::{TransformOp, VOID};

/// How per-datum statistics are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Fixed-size chunks summed in data order; bit-stable across thread counts.
    #[default]
    Deterministic,
    /// Rayon fold/reduce; summation order depends on scheduling.
    Unordered,
}

/// A loading column pinned to the tangent of `μ` along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenColumn {
    pub column: usize,
    pub direction: TangentDirection,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub freeze_rho: bool,
    /// Replace Ψ by its pixel average after every M-step.
    pub tie_psi: bool,
    pub freeze_psi: bool,
    pub frozen_columns: Vec<FrozenColumn>,
    /// Recompute frozen columns from the updated mean each M-step; when
    /// false they keep their initial values.
    pub refresh_frozen: bool,
    /// Clusters whose responsibility mass falls below this are reseeded.
    pub min_cluster_mass: f64,
    pub seed: u64,
    pub reduction: Reduction,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            freeze_rho: false,
            tie_psi: false,
            freeze_psi: false,
            frozen_columns: Vec::new(),
            refresh_frozen: true,
            min_cluster_mass: 1e-8,
            seed: 0,
            reduction: Reduction::Deterministic,
        }
    }
}

/// One EM iteration's summary, printed as a single `key=value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    /// Total log-likelihood under the model that entered the step.
    pub loglik: f64,
    pub cluster_mass: Vec<f64>,
    pub rescued: Vec<usize>,
}

impl fmt::Display for StepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} loglik={:.10e} mass=", self.iteration, self.loglik)?;
        for (i, m) in self.cluster_mass.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{m:.6}")?;
        }
        f.write_str(" rescued=")?;
        if self.rescued.is_empty() {
            f.write_str("-")?;
        }
        for (i, c) in self.rescued.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Result of one EM step.
#[derive(Debug, Clone)]
pub struct EmStep<M> {
    pub model: M,
    pub loglik: f64,
    pub report: StepReport,
}

/// Stopping rule: at most `iterations` steps, or stop once the relative
/// improvement falls below `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub iterations: usize,
    pub tolerance: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 50,
            tolerance: 1e-7,
        }
    }
}

impl Schedule {
    pub fn fixed(iterations: usize) -> Self {
        Self {
            iterations,
            tolerance: 0.0,
        }
    }

    pub(crate) fn converged(&self, previous: f64, current: f64) -> bool {
        self.tolerance > 0.0
            && previous.is_finite()
            && ((current - previous) / previous.abs().max(1e-300)).abs() < self.tolerance
    }
}

/// Expected sufficient statistics of a cluster/transformation mixture whose
/// components are linear-Gaussian in `(z, y)`.
#[derive(Debug, Clone)]
pub(crate) struct MixtureStats {
    pub loglik: f64,
    pub count: usize,
    pub mass: Vec<f64>,
    /// `[c][ℓ]` responsibility totals.
    pub rho_counts: Vec<Vec<f64>>,
    /// `Σ r E[z ỹᵀ]` with `ỹ = (y, 1)`, n×(K+1).
    pub sz: Vec<DMatrix<f64>>,
    /// `Σ r E[z_q²]`.
    pub szz: Vec<Vec<f64>>,
    /// `Σ r E[ỹ ỹᵀ]`.
    pub syy: Vec<DMatrix<f64>>,
    /// `Σ r E[(x_p − (Gz)_p)²]`.
    pub spsi: Vec<f64>,
}

/// Statistics that combine by addition.
pub(crate) trait Merge {
    fn merge(&mut self, other: &Self);
}

impl Merge for MixtureStats {
    fn merge(&mut self, other: &Self) {
        MixtureStats::merge(self, other);
    }
}

impl MixtureStats {
    pub fn zeros(n: usize, transforms: usize, factors: &[usize]) -> Self {
        let c = factors.len();
        Self {
            loglik: 0.0,
            count: 0,
            mass: vec![0.0; c],
            rho_counts: vec![vec![0.0; transforms]; c],
            sz: factors.iter().map(|&k| DMatrix::zeros(n, k + 1)).collect(),
            szz: vec![vec![0.0; n]; c],
            syy: factors.iter().map(|&k| DMatrix::zeros(k + 1, k + 1)).collect(),
            spsi: vec![0.0; n],
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.loglik += other.loglik;
        self.count += other.count;
        for c in 0..self.mass.len() {
            self.mass[c] += other.mass[c];
            for (a, b) in self.rho_counts[c].iter_mut().zip(&other.rho_counts[c]) {
                *a += b;
            }
            self.sz[c] += &other.sz[c];
            for (a, b) in self.szz[c].iter_mut().zip(&other.szz[c]) {
                *a += b;
            }
            self.syy[c] += &other.syy[c];
        }
        for (a, b) in self.spsi.iter_mut().zip(&other.spsi) {
            *a += b;
        }
    }

    /// Adds one `(ℓ, c)` configuration of one datum with weight `r`.
    pub fn accumulate(
        &mut self,
        l: usize,
        c: usize,
        r: f64,
        op: &TransformOp,
        post: &LatentPosterior,
        x: &[f64],
        update_psi: bool,
    ) {
        let k = post.y_mean.len();
        self.mass[c] += r;
        self.rho_counts[c][l] += r;
        let sz = &mut self.sz[c];
        let szz = &mut self.szz[c];
        for q in 0..x.len() {
            let zm = post.z_mean[q];
            for f in 0..k {
                sz[(q, f)] += r * (zm * post.y_mean[f] + post.zy_cov[(q, f)]);
            }
            sz[(q, k)] += r * zm;
            szz[q] += r * (zm * zm + post.z_var[q]);
        }
        let syy = &mut self.syy[c];
        for a in 0..k {
            for b in 0..k {
                syy[(a, b)] += r * (post.y_cov[(a, b)] + post.y_mean[a] * post.y_mean[b]);
            }
            syy[(a, k)] += r * post.y_mean[a];
            syy[(k, a)] += r * post.y_mean[a];
        }
        syy[(k, k)] += r;
        if update_psi {
            for (p, &s) in op.sources().iter().enumerate() {
                self.spsi[p] += r * if s == VOID {
                    x[p] * x[p]
                } else {
                    let s = s as usize;
                    let d = x[p] - post.z_mean[s];
                    d * d + post.z_var[s]
                };
            }
        }
    }
}

const CHUNK: usize = 16;

/// Maps items to statistics in parallel and combines them per `reduction`.
pub(crate) fn reduce_stats<T, S, F>(
    items: &[T],
    reduction: Reduction,
    empty: impl Fn() -> S + Sync + Send,
    per_item: F,
) -> Result<S>
where
    T: Sync,
    S: Merge + Send,
    F: Fn(&T, &mut S) -> Result<()> + Sync + Send,
{
    match reduction {
        Reduction::Deterministic => {
            let chunks: Vec<Result<S>> = items
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc = empty();
                    for item in chunk {
                        per_item(item, &mut acc)?;
                    }
                    Ok(acc)
                })
                .collect();
            let mut total = empty();
            for chunk in chunks {
                total.merge(&chunk?);
            }
            Ok(total)
        }
        Reduction::Unordered => items
            .par_iter()
            .try_fold(&empty, |mut acc, item| {
                per_item(item, &mut acc)?;
                Ok(acc)
            })
            .try_reduce(&empty, |mut a, b| {
                a.merge(&b);
                Ok(a)
            }),
    }
}

/// Solves `Λ̃ syy = sz` for the free columns of `Λ̃ = [Λ μ]`, holding the
/// columns listed in `fixed` at their values in `current`.
pub(crate) fn regress_loadings(
    sz: &DMatrix<f64>,
    syy: &DMatrix<f64>,
    current: &DMatrix<f64>,
    fixed: &[usize],
) -> DMatrix<f64> {
    let n = sz.nrows();
    let dim = sz.ncols();
    let free: Vec<usize> = (0..dim).filter(|i| !fixed.contains(i)).collect();
    let mut out = DMatrix::zeros(n, dim);
    for &f in fixed {
        out.set_column(f, &current.column(f));
    }
    let nf = free.len();
    let mut a = DMatrix::zeros(nf, nf);
    for (i, &fi) in free.iter().enumerate() {
        for (j, &fj) in free.iter().enumerate() {
            a[(i, j)] = syy[(fi, fj)];
        }
    }
    let mut rhs = DMatrix::zeros(n, nf);
    for q in 0..n {
        for (j, &fj) in free.iter().enumerate() {
            let mut v = sz[(q, fj)];
            for &x in fixed {
                v -= current[(q, x)] * syy[(x, fj)];
            }
            rhs[(q, j)] = v;
        }
    }
    // Λ_F A = rhs  ⇔  A Λ_Fᵀ = rhsᵀ (A symmetric)
    let solved = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs.transpose()),
        None => a
            .lu()
            .solve(&rhs.transpose())
            .unwrap_or_else(|| DMatrix::zeros(nf, n)),
    };
    for (j, &fj) in free.iter().enumerate() {
        for q in 0..n {
            out[(q, fj)] = solved[(j, q)];
        }
    }
    out
}

/// `E[(z_q − Λ̃_q ỹ)²]` totals for a given `Λ̃`.
pub(crate) fn residual_variance(
    sz: &DMatrix<f64>,
    szz: &[f64],
    syy: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    q: usize,
) -> f64 {
    let row: DVector<f64> = loadings.row(q).transpose();
    let cross: f64 = (0..row.len()).map(|f| row[f] * sz[(q, f)]).sum();
    let quad = (syy * &row).dot(&row);
    szz[q] - 2.0 * cross + quad
}
