//! Per-(ℓ, component) Gaussian algebra shared by every model family.
//!
//! A component is `z = μ + Λy + ε_Φ`, `y ~ N(0, I_K)`, observed through one
//! op as `x = G z + ε_Ψ`. Marginally `x ~ N(Gμ, D + AAᵀ)` with
//! `D = GΦGᵀ + Ψ` diagonal and `A = GΛ`, so the likelihood only needs the
//! K×K capacitance `I + AᵀD⁻¹A`. The fast path drops Ψ from `D` for ops
//! that are true permutations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::math::LN_2PI;
use crate::transform::{TransformOp, TransformationSet, VOID};

#[derive(Clone, Copy)]
pub(crate) struct ComponentRef<'a> {
    pub mu: &'a [f64],
    pub phi: &'a [f64],
    pub lambda: Option<&'a DMatrix<f64>>,
}

impl ComponentRef<'_> {
    #[inline]
    pub fn factors(&self) -> usize {
        self.lambda.map_or(0, |l| l.ncols())
    }
}

/// Moments of `(z, y)` given `x` and one `(ℓ, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub z_mean: Vec<f64>,
    /// Diagonal of `Cov[z | x]`.
    pub z_var: Vec<f64>,
    pub y_mean: DVector<f64>,
    pub y_cov: DMatrix<f64>,
    /// `Cov[z, y | x]`, n×K.
    pub zy_cov: DMatrix<f64>,
}

/// The data-independent part of one `(ℓ, c)` likelihood.
pub(crate) struct Structure {
    /// Diagonal `D`.
    diag: Vec<f64>,
    /// `log|D| + log|I + AᵀD⁻¹A|`.
    logdet: f64,
    /// Cholesky of `I + AᵀD⁻¹A` (absent when K = 0).
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

#[inline]
fn uses_fast_path(op: &TransformOp, fast: bool) -> bool {
    fast && op.is_permutation()
}

impl Structure {
    pub(crate) fn new(op: &TransformOp, comp: ComponentRef<'_>, psi: &[f64], fast: bool) -> Self {
        let n = op.sources().len();
        assert_eq!(comp.mu.len(), n, "image length does not match model");
        let drop_psi = uses_fast_path(op, fast);
        let mut diag = Vec::with_capacity(n);
        for (p, &s) in op.sources().iter().enumerate() {
            diag.push(if s == VOID {
                psi[p]
            } else if drop_psi {
                comp.phi[s as usize]
            } else {
                comp.phi[s as usize] + psi[p]
            });
        }
        let mut logdet: f64 = diag.iter().map(|d| d.ln()).sum();
        let k = comp.factors();
        if k == 0 {
            return Self {
                diag,
                logdet,
                chol: None,
            };
        }
        let lambda = comp.lambda.unwrap();
        let mut cap = DMatrix::<f64>::identity(k, k);
        for (p, &s) in op.sources().iter().enumerate() {
            if s == VOID {
                continue;
            }
            let row = lambda.row(s as usize);
            let inv = 1.0 / diag[p];
            for a in 0..k {
                let ra = row[a] * inv;
                for b in a..k {
                    cap[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                cap[(a, b)] = cap[(b, a)];
            }
        }
        let chol = cap.cholesky().expect("capacitance matrix is positive definite");
        let l = chol.l_dirty();
        for i in 0..k {
            logdet += 2.0 * l[(i, i)].ln();
        }
        Self {
            diag,
            logdet,
            chol: Some(chol),
        }
    }

    /// `AᵀD⁻¹(x − Gμ)` and the quadratic form `rᵀD⁻¹r`.
    fn project(&self, op: &TransformOp, comp: ComponentRef<'_>, x: &[f64]) -> (DVector<f64>, f64) {
        let k = comp.factors();
        let mut proj = DVector::<f64>::zeros(k);
        let mut quad = 0.0;
        for (p, &s) in op.sources().iter().enumerate() {
            let d = self.diag[p];
            if s == VOID {
                quad += x[p] * x[p] / d;
                continue;
            }
            let r = x[p] - comp.mu[s as usize];
            quad += r * r / d;
            if k > 0 {
                let row = comp.lambda.unwrap().row(s as usize);
                let rd = r / d;
                for a in 0..k {
                    proj[a] += row[a] * rd;
                }
            }
        }
        (proj, quad)
    }

    fn finish(&self, proj: &DVector<f64>, mut quad: f64) -> f64 {
        if let Some(chol) = &self.chol {
            quad -= proj.dot(&chol.solve(proj));
        }
        -0.5 * (self.logdet + quad + self.diag.len() as f64 * LN_2PI)
    }

    pub(crate) fn loglik(&self, op: &TransformOp, comp: ComponentRef<'_>, x: &[f64]) -> f64 {
        let (proj, quad) = self.project(op, comp, x);
        self.finish(&proj, quad)
    }
}

/// Structures for every `(ℓ, c)` of a model, at `ℓ·C + c`.
pub(crate) struct KernelCache {
    clusters: usize,
    entries: Vec<Structure>,
}

impl KernelCache {
    pub(crate) fn new(transforms: &TransformationSet, comps: &[ComponentRef<'_>], psi: &[f64], fast: bool) -> Self {
        let entries = transforms
            .ops()
            .par_iter()
            .flat_map_iter(|op| comps.iter().map(move |&c| Structure::new(op, c, psi, fast)))
            .collect();
        Self {
            clusters: comps.len(),
            entries,
        }
    }

    #[inline]
    pub(crate) fn get(&self, l: usize, c: usize) -> &Structure {
        &self.entries[l * self.clusters + c]
    }
}

/// `log N(x; Gμ, G(ΛΛᵀ+Φ)Gᵀ + Ψ)`, O(nK²).
pub(crate) fn cond_loglik(
    op: &TransformOp,
    comp: ComponentRef<'_>,
    psi: &[f64],
    x: &[f64],
    fast: bool,
) -> f64 {
    Structure::new(op, comp, psi, fast).loglik(op, comp, x)
}

/// Log-likelihood together with the latent posterior for one `(ℓ, c)`.
pub(crate) fn latent_posterior_with(
    st: &Structure,
    op: &TransformOp,
    comp: ComponentRef<'_>,
    psi: &[f64],
    x: &[f64],
    fast: bool,
) -> (f64, LatentPosterior) {
    let n = x.len();
    let k = comp.factors();
    let (proj, quad) = st.project(op, comp, x);
    let loglik = st.finish(&proj, quad);

    let (y_mean, y_cov) = match &st.chol {
        Some(chol) => (chol.solve(&proj), chol.inverse()),
        None => (DVector::zeros(0), DMatrix::zeros(0, 0)),
    };

    if uses_fast_path(op, fast) {
        // Ψ → 0 limit: z is pinned to Gᵀx.
        let z_mean = op.apply_adjoint(x);
        return (
            loglik,
            LatentPosterior {
                z_mean,
                z_var: vec![0.0; n],
                y_mean,
                y_cov,
                zy_cov: DMatrix::zeros(n, k),
            },
        );
    }

    // z | y, x has diagonal precision W = Φ⁻¹ + GᵀΨ⁻¹G and mean
    // W⁻¹(Φ⁻¹(μ + Λy) + GᵀΨ⁻¹x) = a + B y.
    let mut prec: Vec<f64> = comp.phi.iter().map(|v| 1.0 / v).collect();
    let mut data_term = vec![0.0; n];
    for (p, &s) in op.sources().iter().enumerate() {
        if s != VOID {
            let s = s as usize;
            prec[s] += 1.0 / psi[p];
            data_term[s] += x[p] / psi[p];
        }
    }
    let mut z_mean = Vec::with_capacity(n);
    let mut z_var = Vec::with_capacity(n);
    let mut b = DMatrix::<f64>::zeros(n, k);
    for q in 0..n {
        let cond_var = 1.0 / prec[q];
        let a = cond_var * (comp.mu[q] / comp.phi[q] + data_term[q]);
        z_mean.push(a);
        z_var.push(cond_var);
        if k > 0 {
            let scale = cond_var / comp.phi[q];
            let lambda = comp.lambda.unwrap();
            for f in 0..k {
                b[(q, f)] = scale * lambda[(q, f)];
            }
        }
    }
    let zy_cov = if k > 0 {
        let zy = &b * &y_cov;
        for q in 0..n {
            let mut extra = 0.0;
            for f in 0..k {
                z_mean[q] += b[(q, f)] * y_mean[f];
                extra += zy[(q, f)] * b[(q, f)];
            }
            z_var[q] += extra;
        }
        zy
    } else {
        b
    };
    (
        loglik,
        LatentPosterior {
            z_mean,
            z_var,
            y_mean,
            y_cov,
            zy_cov,
        },
    )
}
