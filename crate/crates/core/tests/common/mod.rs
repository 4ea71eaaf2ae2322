//! Dense reference computations used as independent oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinv::models::{MtcaModel, TmgModel};
use tinv::thmm::{InitialDist, MotionMode, MotionPrior, ThmmModel};
use tinv::transform::{
    build_translation_set, Boundary, ImageShape, ShiftGrid, TransformOp, TransformationSet, VOID,
};

pub mod invariants;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const LN_2PI: f64 = 1.8378770664093453;

/// The n×n matrix of an op.
pub fn dense_op(op: &TransformOp) -> DMatrix<f64> {
    let n = op.sources().len();
    let mut g = DMatrix::zeros(n, n);
    for (p, &s) in op.sources().iter().enumerate() {
        if s != VOID {
            g[(p, s as usize)] = 1.0;
        }
    }
    g
}

pub fn dense_gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("oracle covariance must be positive definite");
    let d = x - mean;
    let sol = chol.solve(&d);
    let logdet: f64 = (0..cov.nrows()).map(|i| 2.0 * chol.l()[(i, i)].ln()).sum();
    -0.5 * (logdet + d.dot(&sol) + x.len() as f64 * LN_2PI)
}

/// `log N(x; Gμ, G(ΛΛᵀ+Φ)Gᵀ + Ψ)` built densely.
pub fn dense_marginal(
    op: &TransformOp,
    mu: &[f64],
    lambda: Option<&DMatrix<f64>>,
    phi: &[f64],
    psi: &[f64],
    x: &[f64],
) -> f64 {
    let n = mu.len();
    let g = dense_op(op);
    let mut latent = DMatrix::from_diagonal(&DVector::from_column_slice(phi));
    if let Some(l) = lambda {
        latent += l * l.transpose();
    }
    let cov = &g * latent * g.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(psi));
    let mean = &g * DVector::from_column_slice(mu);
    let _ = n;
    dense_gaussian_logpdf(&DVector::from_column_slice(x), &mean, &cov)
}

/// Posterior moments of `w = (z, y)` given `x` by dense joint-Gaussian
/// conditioning. Returns `(mean, cov)` of the stacked vector.
pub fn dense_latent_posterior(
    op: &TransformOp,
    mu: &[f64],
    lambda: &DMatrix<f64>,
    phi: &[f64],
    psi: &[f64],
    x: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mu.len();
    let k = lambda.ncols();
    let g = dense_op(op);
    let mut prior_cov = DMatrix::zeros(n + k, n + k);
    let zz = DMatrix::from_diagonal(&DVector::from_column_slice(phi)) + lambda * lambda.transpose();
    prior_cov.view_mut((0, 0), (n, n)).copy_from(&zz);
    prior_cov.view_mut((0, n), (n, k)).copy_from(lambda);
    prior_cov.view_mut((n, 0), (k, n)).copy_from(&lambda.transpose());
    prior_cov
        .view_mut((n, n), (k, k))
        .copy_from(&DMatrix::identity(k, k));
    let mut prior_mean = DVector::zeros(n + k);
    prior_mean.rows_mut(0, n).copy_from_slice(mu);
    let mut h = DMatrix::zeros(n, n + k);
    h.view_mut((0, 0), (n, n)).copy_from(&g);
    let sxx = &h * &prior_cov * h.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(psi));
    let swx = &prior_cov * h.transpose();
    let gain = &swx * sxx.clone().try_inverse().unwrap();
    let resid = DVector::from_column_slice(x) - &h * &prior_mean;
    let mean = &prior_mean + &gain * resid;
    let cov = &prior_cov - &gain * swx.transpose();
    (mean, cov)
}

/// `log p(x | ℓ, c)` for a diagonal-Φ component by per-latent-pixel 1-D
/// trapezoid quadrature of `∫ N(z; μ, φ) Π N(x_p; z, ψ_p) dz`.
pub fn quadrature_cond_loglik(op: &TransformOp, mu: &[f64], phi: &[f64], psi: &[f64], x: &[f64]) -> f64 {
    let n = mu.len();
    let mut observers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut total = 0.0;
    for (p, &s) in op.sources().iter().enumerate() {
        if s == VOID {
            total += -0.5 * (LN_2PI + psi[p].ln() + x[p] * x[p] / psi[p]);
        } else {
            observers[s as usize].push(p);
        }
    }
    for q in 0..n {
        if observers[q].is_empty() {
            continue;
        }
        let sd = phi[q].sqrt();
        let (lo, hi) = (mu[q] - 14.0 * sd, mu[q] + 14.0 * sd);
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let logf = |z: f64| {
            let mut v = -0.5 * (LN_2PI + phi[q].ln() + (z - mu[q]).powi(2) / phi[q]);
            for &p in &observers[q] {
                v += -0.5 * (LN_2PI + psi[p].ln() + (x[p] - z).powi(2) / psi[p]);
            }
            v
        };
        let vals: Vec<f64> = (0..=steps).map(|i| logf(lo + i as f64 * h)).collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, v) in vals.iter().enumerate() {
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            sum += w * (v - m).exp();
        }
        total += m + (sum * h).ln();
    }
    total
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A random generalized permutation: a random injective partial map with
/// roughly `void_frac` of the rows empty.
pub fn random_op<R: Rng>(rng: &mut R, shape: ImageShape, void_frac: f64) -> TransformOp {
    let n = shape.n();
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    for s in perm.iter_mut() {
        if rng.random::<f64>() < void_frac {
            *s = VOID;
        }
    }
    TransformOp::new(shape, perm).unwrap()
}

pub fn random_set<R: Rng>(rng: &mut R, shape: ImageShape, l: usize, void_frac: f64) -> TransformationSet {
    let mut ops = vec![TransformOp::identity(shape)];
    while ops.len() < l {
        ops.push(random_op(rng, shape, void_frac));
    }
    TransformationSet::new(shape, ops, None, Boundary::ZeroPad).unwrap()
}

pub fn random_shape<R: Rng>(rng: &mut R, max_pixels: usize) -> ImageShape {
    loop {
        let h = rng.random_range(1..=3);
        let w = rng.random_range(1..=3);
        if h * w <= max_pixels && h * w >= 2 {
            return ImageShape::new(h, w).unwrap();
        }
    }
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Dense `p(s' | s)` for a sequence model, built by enumerating grid moves.
pub fn dense_transition(m: &tinv::thmm::ThmmModel) -> Vec<Vec<f64>> {
    use tinv::thmm::MotionMode;
    let grid = m.transforms.grid().unwrap();
    let l_count = grid.rows * grid.cols;
    let c_count = m.mu.len();
    let toroidal = m.transforms.is_toroidal();
    let t = m.motion.threshold as i64;
    let delta = |a: usize, b: usize, size: usize| -> i64 {
        let d = b as i64 - a as i64;
        if !toroidal {
            return d;
        }
        let size = size as i64;
        let mut r = ((d % size) + size) % size;
        if 2 * r > size {
            r -= size;
        }
        r
    };
    let mut keys: Vec<(i64, i64)> = Vec::new();
    for di in -t..=t {
        for dj in -t..=t {
            if di * di + dj * dj <= t * t {
                keys.push((di, dj));
            }
        }
    }
    let bin = |di: i64, dj: i64| -> Option<usize> {
        if di * di + dj * dj > t * t {
            return None;
        }
        Some(match m.motion.mode {
            MotionMode::Vector => keys.iter().position(|&k| k == (di, dj)).unwrap(),
            MotionMode::Magnitude => ((di * di + dj * dj) as f64).sqrt().round() as usize,
        })
    };
    // motion[k][ℓ][ℓ']
    let motion: Vec<Vec<Vec<f64>>> = m
        .motion
        .tables
        .iter()
        .map(|table| {
            (0..l_count)
                .map(|a| {
                    let (ai, aj) = (a / grid.cols, a % grid.cols);
                    let bins: Vec<Option<usize>> = (0..l_count)
                        .map(|b| bin(delta(ai, b / grid.cols, grid.rows), delta(aj, b % grid.cols, grid.cols)))
                        .collect();
                    let mut count = vec![0usize; table.len()];
                    for k in bins.iter().flatten() {
                        count[*k] += 1;
                    }
                    let z: f64 = (0..table.len()).filter(|&k| count[k] > 0).map(|k| table[k]).sum();
                    bins.iter()
                        .map(|b| match b {
                            Some(k) if z > 0.0 => table[*k] / count[*k] as f64 / z,
                            _ => 0.0,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let s_count = c_count * l_count;
    let mut p = vec![vec![0.0; s_count]; s_count];
    for c in 0..c_count {
        let k = if m.motion.per_class { c } else { 0 };
        for a in 0..l_count {
            for c2 in 0..c_count {
                for b in 0..l_count {
                    p[c * l_count + a][c2 * l_count + b] = m.class_trans[c][c2] * motion[k][a][b];
                }
            }
        }
    }
    p
}

/// Exhaustive path statistics for a short sequence.
pub struct PathSums {
    pub loglik: f64,
    pub gamma: Vec<Vec<f64>>,
    pub class_pairs: Vec<Vec<f64>>,
    /// Expected moves per `(from ℓ, to ℓ')`, summed over classes of the
    /// source table `k`: `[k][ℓ][ℓ']`.
    pub moves: Vec<Vec<Vec<f64>>>,
    pub best_path: Vec<usize>,
    pub best_logprob: f64,
}

pub fn enumerate_paths(m: &tinv::thmm::ThmmModel, frames: &[Vec<f64>]) -> PathSums {
    let l_count = m.transforms.len();
    let c_count = m.mu.len();
    let s_count = c_count * l_count;
    let t_len = frames.len();
    let p = dense_transition(m);
    let pi = m.initial.state_probs(l_count);
    let emit: Vec<Vec<f64>> = frames
        .iter()
        .map(|x| {
            (0..s_count)
                .map(|s| {
                    let (c, l) = (s / l_count, s % l_count);
                    dense_marginal(m.transforms.op(l), &m.mu[c], None, &m.phi[c], &m.psi, x)
                })
                .collect()
        })
        .collect();
    let total = s_count.pow(t_len as u32);
    let mut logs = Vec::with_capacity(total);
    let mut paths = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = vec![0usize; t_len];
        let mut rest = code;
        for t in (0..t_len).rev() {
            path[t] = rest % s_count;
            rest /= s_count;
        }
        let mut lp = pi[path[0]].ln() + emit[0][path[0]];
        for t in 1..t_len {
            lp += p[path[t - 1]][path[t]].ln() + emit[t][path[t]];
        }
        logs.push(lp);
        paths.push(path);
    }
    let z = lse(&logs);
    let tables = m.motion.tables.len();
    let mut gamma = vec![vec![0.0; s_count]; t_len];
    let mut class_pairs = vec![vec![0.0; c_count]; c_count];
    let mut moves = vec![vec![vec![0.0; l_count]; l_count]; tables];
    let mut best = 0;
    for (i, (lp, path)) in logs.iter().zip(&paths).enumerate() {
        if *lp > logs[best] {
            best = i;
        }
        let w = (lp - z).exp();
        for t in 0..t_len {
            gamma[t][path[t]] += w;
            if t > 0 {
                let (c, a) = (path[t - 1] / l_count, path[t - 1] % l_count);
                let (c2, b) = (path[t] / l_count, path[t] % l_count);
                class_pairs[c][c2] += w;
                let k = if m.motion.per_class { c } else { 0 };
                moves[k][a][b] += w;
            }
        }
    }
    PathSums {
        loglik: z,
        gamma,
        class_pairs,
        moves,
        best_path: paths[best].clone(),
        best_logprob: logs[best],
    }
}

/// Four ops on a 2×2 shift grid; wraps a 2×2 image (toroidal) or zero-pads a 3×2 one.
pub fn four_cell_set(toroidal: bool) -> TransformationSet {
    let grid = ShiftGrid { rows: 2, cols: 2 };
    let (shape, boundary) = if toroidal {
        (ImageShape::new(2, 2).unwrap(), Boundary::Wrap)
    } else {
        (ImageShape::new(3, 2).unwrap(), Boundary::ZeroPad)
    };
    let ops = (0..4)
        .map(|l| {
            let (dv, dh) = grid.shift_of(l);
            TransformOp::shift(shape, dv, dh, boundary)
        })
        .collect();
    TransformationSet::new(shape, ops, Some(grid), boundary).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R, set: TransformationSet, c: usize, mode: MotionMode, per_class: bool, joint: bool) -> ThmmModel {
    let n = set.shape().n();
    let l = set.len();
    let threshold = 1;
    let bins = MotionPrior::bin_count_for(mode, threshold);
    let motion = MotionPrior {
        mode,
        threshold,
        per_class,
        tables: (0..if per_class { c } else { 1 }).map(|_| random_simplex(rng, bins)).collect(),
    };
    ThmmModel::new(
        set,
        (0..c).map(|_| random_vec(rng, n, -1.0, 1.0)).collect(),
        (0..c).map(|_| random_vec(rng, n, 0.3, 1.0)).collect(),
        random_vec(rng, n, 0.2, 0.6),
        if joint {
            InitialDist::Joint(random_simplex(rng, c * l))
        } else {
            InitialDist::Factorized(random_simplex(rng, c))
        },
        (0..c).map(|_| random_simplex(rng, c)).collect(),
        motion,
    )
    .unwrap()
}

pub fn random_frames<R: Rng>(rng: &mut R, n: usize, t: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| random_vec(rng, n, -1.5, 1.5)).collect()
}

pub fn grid_delta(m: &ThmmModel, a: usize, b: usize) -> (i64, i64) {
    let g = m.transforms.grid().unwrap();
    let wrap = |d: i64, size: usize| {
        if !m.transforms.is_toroidal() {
            return d;
        }
        let size = size as i64;
        let r = d.rem_euclid(size);
        if 2 * r > size {
            r - size
        } else {
            r
        }
    };
    let (ai, aj) = g.cell(a);
    let (bi, bj) = g.cell(b);
    (wrap(bi as i64 - ai as i64, g.rows), wrap(bj as i64 - aj as i64, g.cols))
}

pub fn seeded_case(seed: u64) -> (ThmmModel, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let toroidal = r.random_bool(0.5);
    let shape = ImageShape::new(r.random_range(2..=4), r.random_range(2..=4)).unwrap();
    let set = if toroidal {
        build_translation_set(shape, shape.height - (shape.height + 1) % 2, shape.width - (shape.width + 1) % 2, Boundary::Wrap)
            .unwrap()
    } else {
        build_translation_set(shape, 3, 3, Boundary::ZeroPad).unwrap()
    };
    let mode = if r.random_bool(0.5) { MotionMode::Vector } else { MotionMode::Magnitude };
    let per_class = r.random_bool(0.5);
    let c = r.random_range(1..=3);
    let joint = r.random_bool(0.3);
    let m = random_model(&mut r, set, c, mode, per_class, joint);
    let t = r.random_range(1..=6);
    let frames = random_frames(&mut r, shape.n(), t);
    (m, frames)
}

pub fn random_tmg<R: Rng>(rng: &mut R, shape: ImageShape, l: usize, c: usize) -> TmgModel {
    let n = shape.n();
    TmgModel::new(
        random_set(rng, shape, l, 0.3),
        random_simplex(rng, c),
        (0..c).map(|_| random_vec(rng, n, -1.0, 1.0)).collect(),
        (0..c).map(|_| random_vec(rng, n, 0.2, 1.5)).collect(),
        (0..c).map(|_| random_simplex(rng, l)).collect(),
        random_vec(rng, n, 0.1, 0.8),
    )
    .unwrap()
}

pub fn random_mtca<R: Rng>(rng: &mut R, shape: ImageShape, l: usize, c: usize, k: usize, fast: bool) -> MtcaModel {
    let n = shape.n();
    let tmg = random_tmg(rng, shape, l, c);
    let lambda = (0..c).map(|_| random_matrix(rng, n, k, 0.8)).collect();
    MtcaModel::from_tmg(tmg, lambda, fast)
}

pub fn random_data<R: Rng>(rng: &mut R, count: usize, n: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| random_vec(rng, n, 0.0, 1.0)).collect()
}
