//! Seed-driven checks for every listed invariant of the transform, static
//! model and sequence model modules. Each returns `Err` with a reason on
//! the first violation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tinv::models::{
    bayes_classify, classify_scores, DensityModel, EmOptions, MtcaModel, Schedule, StepReport, TcaModel, TmgModel,
};
use tinv::thmm::{InitialDist, MotionMode, ThmmModel, ThmmOptions};
use tinv::transform::{
    build_shear_translation_set, build_translation_set, Boundary, ImageShape, ShearFamily, TransformOp,
    TransformationSet, VOID,
};

use super::*;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// `(module, name, check)` for every invariant.
pub const ALL: &[(&str, &str, fn(u64) -> Check)] = &[
    ("transform-ops", "wrap ops are bijections", wrap_ops_are_bijections),
    ("transform-ops", "diag cov matches dense", diag_cov_matches_dense),
    ("transform-ops", "grid indexing shifts exactly", grid_indexing_shifts_exactly),
    ("transform-ops", "apply is one lookup per pixel", apply_is_one_lookup_per_pixel),
    ("static-models", "marginal matches dense oracle", static_marginal_matches_oracle),
    ("static-models", "EM is monotone (50 steps)", static_em_is_monotone),
    ("static-models", "responsibilities sum to one", responsibilities_sum_to_one),
    ("static-models", "reduction lattice", reduction_lattice_holds),
    ("static-models", "fit is wrap equivariant", fit_is_wrap_equivariant),
    ("static-models", "classification ignores offsets", classification_ignores_offsets),
    ("thmm", "forward-backward matches enumeration", forward_backward_matches_enumeration),
    ("thmm", "marginals and move mass normalized", marginals_and_moves_normalized),
    ("thmm", "Viterbi beats pointwise decoding", viterbi_beats_pointwise),
    ("thmm", "motion threshold respected", motion_threshold_respected),
    ("thmm", "EM is monotone (30 steps)", thmm_em_is_monotone),
    ("thmm", "wrap shift moves the track", wrap_shift_moves_the_track),
];

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn odd_count<R: Rng>(r: &mut R, max: usize) -> usize {
    2 * r.random_range(0..=(max - 1) / 2) + 1
}

fn shape_upto<R: Rng>(r: &mut R, h: usize, w: usize) -> ImageShape {
    ImageShape::new(r.random_range(1..=h), r.random_range(1..=w)).unwrap()
}

/// A translation set with a random valid grid for `shape` and `boundary`.
fn random_translation_set<R: Rng>(r: &mut R, shape: ImageShape, boundary: Boundary) -> TransformationSet {
    let cap = |extent: usize| match boundary {
        Boundary::Wrap => extent,
        Boundary::ZeroPad => 2 * extent - 1,
    };
    let rows = odd_count(r, cap(shape.height));
    let cols = odd_count(r, cap(shape.width));
    build_translation_set(shape, rows, cols, boundary).unwrap()
}

fn random_boundary<R: Rng>(r: &mut R) -> Boundary {
    if r.random_bool(0.5) {
        Boundary::Wrap
    } else {
        Boundary::ZeroPad
    }
}

pub fn wrap_ops_are_bijections(seed: u64) -> Check {
    let mut r = rng(seed);
    let shape = shape_upto(&mut r, 8, 8);
    let n = shape.n();
    let mut set = random_translation_set(&mut r, shape, Boundary::Wrap).ops().to_vec();
    set.push(random_op(&mut r, shape, 0.0));
    let x = random_vec(&mut r, n, -1.0, 1.0);
    for (l, op) in set.iter().enumerate() {
        ensure!(op.is_permutation(), "op {l} has VOID rows under wrap");
        ensure!(op.apply_adjoint(&op.apply(&x)) == x, "op {l}: adjoint∘apply is not the identity");
        ensure!(op.apply(&op.apply_adjoint(&x)) == x, "op {l}: apply∘adjoint is not the identity");
        let mut hit = vec![false; n];
        for &s in op.sources() {
            ensure!(!hit[s as usize], "op {l} reads pixel {s} twice");
            hit[s as usize] = true;
        }
    }
    Ok(())
}

pub fn diag_cov_matches_dense(seed: u64) -> Check {
    let mut r = rng(seed);
    let (shape, set) = match r.random_range(0..4) {
        0 => {
            let shape = ImageShape::new(8, 8).unwrap();
            (shape, build_shear_translation_set(shape, &ShearFamily::standard()).unwrap())
        }
        1 => {
            let shape = shape_upto(&mut r, 8, 8);
            let l = r.random_range(1..=6);
            let voids = r.random_range(0.0..0.6);
            (shape, random_set(&mut r, shape, l, voids))
        }
        _ => {
            let shape = shape_upto(&mut r, 8, 8);
            let boundary = random_boundary(&mut r);
            (shape, random_translation_set(&mut r, shape, boundary))
        }
    };
    let n = shape.n();
    let phi = random_vec(&mut r, n, 0.01, 2.0);
    let psi = random_vec(&mut r, n, 0.01, 2.0);
    for (l, op) in set.ops().iter().enumerate() {
        let g = dense_op(op);
        let dense = &g * DMatrix::from_diagonal(&DVector::from_column_slice(&phi)) * g.transpose();
        let got = op.transform_diag_cov(&phi, &psi);
        for p in 0..n {
            let want = dense[(p, p)] + psi[p];
            ensure!(
                close(got[p], want, 4.0 * f64::EPSILON * want),
                "op {l} pixel {p}: {} vs dense {want}",
                got[p]
            );
        }
    }
    Ok(())
}

pub fn grid_indexing_shifts_exactly(seed: u64) -> Check {
    let mut r = rng(seed);
    let shape = shape_upto(&mut r, 8, 8);
    let boundary = random_boundary(&mut r);
    let set = random_translation_set(&mut r, shape, boundary);
    let grid = set.grid().ok_or("translation set lost its grid")?;
    let (h, w) = (shape.height as i64, shape.width as i64);
    for l in 0..set.len() {
        let (i, j) = (l / grid.cols, l % grid.cols);
        ensure!(grid.index(i, j) == l, "index({i}, {j}) != {l}");
        let dv = i as i64 - (grid.rows / 2) as i64;
        let dh = j as i64 - (grid.cols / 2) as i64;
        ensure!(grid.shift_of(l) == (dv, dh), "op {l}: grid shift {:?}", grid.shift_of(l));
        ensure!(grid.index_of_shift(dv, dh) == Some(l), "shift ({dv}, {dh}) does not index {l}");
        for row in 0..h {
            for col in 0..w {
                let (sr, sc) = (row - dv, col - dh);
                let want = match boundary {
                    Boundary::Wrap => Some((sr.rem_euclid(h) * w + sc.rem_euclid(w)) as usize),
                    Boundary::ZeroPad if (0..h).contains(&sr) && (0..w).contains(&sc) => Some((sr * w + sc) as usize),
                    Boundary::ZeroPad => None,
                };
                let p = (row * w + col) as usize;
                ensure!(set.op(l).source(p) == want, "op {l} pixel {p}: source {:?}, want {want:?}", set.op(l).source(p));
            }
        }
    }
    Ok(())
}

pub fn apply_is_one_lookup_per_pixel(seed: u64) -> Check {
    let mut r = rng(seed);
    let shape = shape_upto(&mut r, 8, 8);
    let n = shape.n();
    let voids = r.random_range(0.0..0.7);
    let op = random_op(&mut r, shape, voids);
    ensure!(op.sources().len() == n, "{} source entries for {n} pixels", op.sources().len());
    let x = random_vec(&mut r, n, -1.0, 1.0);
    let y = op.apply(&x);
    let mut into = vec![f64::NAN; n];
    op.apply_into(&x, &mut into);
    let mut adjoint = vec![0.0; n];
    for (p, &s) in op.sources().iter().enumerate() {
        let want = if s == VOID { 0.0 } else { x[s as usize] };
        ensure!(y[p] == want && into[p] == want, "pixel {p} is not a single gather");
        if s != VOID {
            adjoint[s as usize] += x[p];
        }
    }
    ensure!(op.apply_adjoint(&x) == adjoint, "adjoint is not the matching scatter");
    Ok(())
}

/// `log Σ π_c ρ_ℓc N(x; G_ℓ μ_c, G_ℓ(Λ_c Λ_cᵀ + Φ_c)G_ℓᵀ + Ψ_ℓ)` densely, with
/// `Ψ_ℓ = 0` on permutation ops when `fast`.
#[allow(clippy::too_many_arguments)]
fn dense_mixture(
    set: &TransformationSet,
    pi: &[f64],
    rho: &[Vec<f64>],
    mu: &[Vec<f64>],
    phi: &[Vec<f64>],
    lambda: Option<&[DMatrix<f64>]>,
    psi: &[f64],
    fast: bool,
    x: &[f64],
) -> f64 {
    let zero = vec![0.0; psi.len()];
    let mut terms = Vec::new();
    for c in 0..pi.len() {
        for l in 0..set.len() {
            let op = set.op(l);
            let noise = if fast && op.is_permutation() { &zero } else { psi };
            let ll = dense_marginal(op, &mu[c], lambda.map(|lam| &lam[c]), &phi[c], noise, x);
            terms.push(pi[c].ln() + rho[c][l].ln() + ll);
        }
    }
    lse(&terms)
}

fn small_case<R: Rng>(r: &mut R) -> (ImageShape, usize, usize, usize) {
    let shape = random_shape(r, 9);
    let k_max = 3.min(shape.n() - 1);
    (shape, r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=k_max))
}

pub fn static_marginal_matches_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let (shape, l, c, k) = small_case(&mut r);
    let n = shape.n();
    let x = random_vec(&mut r, n, -2.0, 2.0);

    let tmg = random_tmg(&mut r, shape, l, c);
    let want = dense_mixture(&tmg.transforms, &tmg.pi, &tmg.rho, &tmg.mu, &tmg.phi, None, &tmg.psi, false, &x);
    ensure!(close(tmg.loglik(&x), want, 1e-6), "tmg {} vs oracle {want}", tmg.loglik(&x));

    for fast in [false, true] {
        let set = if fast && r.random_bool(0.5) {
            random_translation_set(&mut r, shape, Boundary::Wrap)
        } else {
            random_set(&mut r, shape, l, 0.3)
        };
        let ls = set.len();
        let tca = TcaModel::new(
            set,
            random_vec(&mut r, n, -1.0, 1.0),
            random_matrix(&mut r, n, k, 1.0),
            random_vec(&mut r, n, 0.2, 1.0),
            random_simplex(&mut r, ls),
            random_vec(&mut r, n, 0.05, 0.5),
            fast,
        )
        .unwrap();
        let want = dense_mixture(
            &tca.transforms,
            &[1.0],
            std::slice::from_ref(&tca.rho),
            std::slice::from_ref(&tca.mu),
            std::slice::from_ref(&tca.phi),
            Some(std::slice::from_ref(&tca.lambda)),
            &tca.psi,
            fast,
            &x,
        );
        let tol = if fast { 1e-6 } else { 1e-10 };
        ensure!(close(tca.loglik(&x), want, tol), "tca fast={fast}: {} vs oracle {want}", tca.loglik(&x));

        let mtca = random_mtca(&mut r, shape, l, c, k, fast);
        let want = dense_mixture(
            &mtca.transforms,
            &mtca.pi,
            &mtca.rho,
            &mtca.mu,
            &mtca.phi,
            Some(&mtca.lambda),
            &mtca.psi,
            fast,
            &x,
        );
        ensure!(close(mtca.loglik(&x), want, 1e-6), "mtca fast={fast}: {} vs oracle {want}", mtca.loglik(&x));
    }
    Ok(())
}

/// Non-decreasing within `1e-9` relative, except across a step that reseeded
/// a starved cluster.
pub fn monotone(label: &str, reports: &[StepReport]) -> Check {
    for (i, w) in reports.windows(2).enumerate() {
        if !w[0].rescued.is_empty() {
            continue;
        }
        ensure!(
            w[1].loglik >= w[0].loglik - 1e-9 * w[0].loglik.abs(),
            "{label}: log-likelihood fell at step {}: {} -> {}",
            i + 1,
            w[0].loglik,
            w[1].loglik
        );
    }
    Ok(())
}

pub fn static_em_is_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let (shape, l, c, k) = small_case(&mut r);
    let n = shape.n();
    let count = r.random_range(12..=25);
    let data = random_data(&mut r, count, n);
    let opts = EmOptions {
        seed,
        freeze_rho: r.random_bool(0.3),
        tie_psi: r.random_bool(0.3),
        ..EmOptions::default()
    };
    let sched = Schedule::fixed(50);
    let set = random_set(&mut r, shape, l, 0.3);
    let wrap = random_translation_set(&mut r, shape, Boundary::Wrap);
    let fail = |e: tinv::Error| e.to_string();

    let (_, rep) = TmgModel::init(set.clone(), &data, c, &mut r).map_err(fail)?.fit(&data, sched, &opts).map_err(fail)?;
    monotone("tmg", &rep)?;
    for (fast, s) in [(false, &set), (true, &wrap)] {
        let init = TcaModel::init(s.clone(), &data, k, fast, &mut r).map_err(fail)?;
        monotone(&format!("tca fast={fast}"), &init.fit(&data, sched, &opts).map_err(fail)?.1)?;
        let init = MtcaModel::init(s.clone(), &data, c, k, fast, &mut r).map_err(fail)?;
        monotone(&format!("mtca fast={fast}"), &init.fit(&data, sched, &opts).map_err(fail)?.1)?;
    }
    Ok(())
}

pub fn responsibilities_sum_to_one(seed: u64) -> Check {
    let mut r = rng(seed);
    let (shape, l, c, k) = small_case(&mut r);
    let n = shape.n();
    let scale = r.random_range(0.5..20.0);
    let x = random_vec(&mut r, n, -scale, scale);
    let fast = r.random_bool(0.5);
    let tmg = random_tmg(&mut r, shape, l, c);
    let mtca = random_mtca(&mut r, shape, l, c, k, fast);
    let tca = TcaModel::new(
        tmg.transforms.clone(),
        tmg.mu[0].clone(),
        random_matrix(&mut r, n, k, 1.0),
        tmg.phi[0].clone(),
        tmg.rho[0].clone(),
        tmg.psi.clone(),
        fast,
    )
    .unwrap();
    let posts = [
        ("tmg", tmg.posterior(&x)),
        ("tca", tca.posterior(&x)),
        ("mtca", mtca.posterior(&x)),
    ];
    for (name, post) in posts {
        let post = post.map_err(|e| e.to_string())?;
        let total: f64 = post.resp.iter().sum();
        ensure!(close(total, 1.0, 1e-12), "{name}: responsibilities sum to {total}");
        ensure!(post.resp.iter().all(|&v| v >= 0.0), "{name}: negative responsibility");
    }
    Ok(())
}

pub fn reduction_lattice_holds(seed: u64) -> Check {
    let mut r = rng(seed);
    let (shape, l, c, k) = small_case(&mut r);
    let n = shape.n();
    let x = random_vec(&mut r, n, -2.0, 2.0);

    let tmg = random_tmg(&mut r, shape, l, c);
    let mtca = MtcaModel::from_tmg(tmg.clone(), vec![DMatrix::zeros(n, 0); c], false);
    ensure!(close(mtca.loglik(&x), tmg.loglik(&x), 1e-10), "MTCA(K=0) != TMG");

    let tca = TcaModel::new(
        random_set(&mut r, shape, l, 0.3),
        random_vec(&mut r, n, -1.0, 1.0),
        random_matrix(&mut r, n, k, 1.0),
        random_vec(&mut r, n, 0.2, 1.0),
        random_simplex(&mut r, l),
        random_vec(&mut r, n, 0.1, 0.5),
        false,
    )
    .unwrap();
    let single = MtcaModel::from_tca(tca.clone());
    ensure!(close(single.loglik(&x), tca.loglik(&x), 1e-10), "MTCA(C=1) != TCA");

    let mg = TmgModel {
        transforms: TransformationSet::identity(shape),
        rho: vec![vec![1.0]; c],
        ..tmg.clone()
    };
    let xv = DVector::from_column_slice(&x);
    let terms: Vec<f64> = (0..c)
        .map(|j| {
            let cov = DMatrix::from_fn(n, n, |a, b| if a == b { mg.phi[j][a] + mg.psi[a] } else { 0.0 });
            mg.pi[j].ln() + dense_gaussian_logpdf(&xv, &DVector::from_column_slice(&mg.mu[j]), &cov)
        })
        .collect();
    ensure!(close(mg.loglik(&x), lse(&terms), 1e-10), "TMG(L=1) != mixture of Gaussians");

    let fa = TcaModel {
        transforms: TransformationSet::identity(shape),
        rho: vec![1.0],
        ..tca.clone()
    };
    let mut cov = &fa.lambda * fa.lambda.transpose();
    for q in 0..n {
        cov[(q, q)] += fa.phi[q] + fa.psi[q];
    }
    let want = dense_gaussian_logpdf(&xv, &DVector::from_column_slice(&fa.mu), &cov);
    ensure!(close(fa.loglik(&x), want, 1e-10), "TCA(L=1) != factor analysis");
    Ok(())
}

pub fn fit_is_wrap_equivariant(seed: u64) -> Check {
    let mut r = rng(seed);
    let odd = [1, 3, 5];
    let shape = loop {
        let s = ImageShape::new(odd[r.random_range(0..3)], odd[r.random_range(0..3)]).unwrap();
        if s.n() >= 2 {
            break s;
        }
    };
    let n = shape.n();
    let set = build_translation_set(shape, shape.height, shape.width, Boundary::Wrap).unwrap();
    let (h, w) = (shape.height as i64, shape.width as i64);
    let sigma = TransformOp::shift(shape, r.random_range(0..h), r.random_range(0..w), Boundary::Wrap);
    let count = r.random_range(5..=15);
    let data = random_data(&mut r, count, n);
    let moved: Vec<Vec<f64>> = data.iter().map(|x| sigma.apply(x)).collect();
    let init = TmgModel::init(set, &data, 1, &mut r).map_err(|e| e.to_string())?;
    let init_moved = TmgModel {
        mu: vec![sigma.apply(&init.mu[0])],
        phi: vec![sigma.apply(&init.phi[0])],
        psi: sigma.apply(&init.psi),
        ..init.clone()
    };
    let opts = EmOptions {
        freeze_rho: true,
        seed,
        ..EmOptions::default()
    };
    let (a, _) = init.fit(&data, Schedule::fixed(20), &opts).map_err(|e| e.to_string())?;
    let (b, _) = init_moved.fit(&moved, Schedule::fixed(20), &opts).map_err(|e| e.to_string())?;
    let expected = sigma.apply(&a.mu[0]);
    for q in 0..n {
        ensure!(close(expected[q], b.mu[0][q], 1e-6), "pixel {q}: {} vs {}", b.mu[0][q], expected[q]);
    }
    Ok(())
}

/// A class model whose log density is another's plus a constant.
struct Offset<'a> {
    inner: &'a TmgModel,
    offset: f64,
}

impl DensityModel for Offset<'_> {
    fn shape(&self) -> ImageShape {
        self.inner.shape()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.loglik(x) + self.offset
    }
}

pub fn classification_ignores_offsets(seed: u64) -> Check {
    let mut r = rng(seed);
    let shape = random_shape(&mut r, 9);
    let classes = r.random_range(2..=5);
    let models: Vec<TmgModel> = (0..classes).map(|_| random_tmg(&mut r, shape, 2, 2)).collect();
    let priors = r.random_bool(0.5).then(|| random_simplex(&mut r, classes));
    let offset = r.random_range(-1e3..1e3);
    let shifted: Vec<Offset> = models.iter().map(|m| Offset { inner: m, offset }).collect();
    for _ in 0..5 {
        let x = random_vec(&mut r, shape.n(), -2.0, 2.0);
        let base = bayes_classify(&models, priors.as_deref(), &x);
        ensure!(base == bayes_classify(&shifted, priors.as_deref(), &x), "offset {offset} changed the class");
        let ll: Vec<f64> = models.iter().map(|m| m.loglik(&x)).collect();
        let moved: Vec<f64> = ll.iter().map(|v| v + offset).collect();
        ensure!(classify_scores(&moved, priors.as_deref()) == base, "offset {offset} changed the score rule");
    }
    Ok(())
}

/// A sequence case small enough to enumerate: `(CL)^T ≤ 10⁴`.
fn enumerable_case(seed: u64) -> (ThmmModel, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let set = match r.random_range(0..3) {
        0 => four_cell_set(r.random_bool(0.5)),
        1 => {
            let shape = shape_upto(&mut r, 3, 3);
            random_translation_set(&mut r, shape, Boundary::Wrap)
        }
        _ => {
            let shape = shape_upto(&mut r, 3, 3);
            let rows = odd_count(&mut r, 3);
            let cols = odd_count(&mut r, 3);
            build_translation_set(shape, rows.min(2 * shape.height - 1), cols.min(2 * shape.width - 1), Boundary::ZeroPad)
                .unwrap()
        }
    };
    let c = r.random_range(1..=3);
    let states = c * set.len();
    let mut t_max = 1;
    while t_max < 5 && states.pow(t_max as u32 + 1) <= 10_000 {
        t_max += 1;
    }
    let mode = if r.random_bool(0.5) { MotionMode::Vector } else { MotionMode::Magnitude };
    let per_class = r.random_bool(0.5);
    let joint = r.random_bool(0.3);
    let n = set.shape().n();
    let m = random_model(&mut r, set, c, mode, per_class, joint);
    let t = r.random_range(1..=t_max);
    (m, random_frames(&mut r, n, t))
}

pub fn forward_backward_matches_enumeration(seed: u64) -> Check {
    let (m, frames) = enumerable_case(seed);
    matches_enumeration(&m, &frames)
}

/// Posterior statistics, score and Viterbi path against every path summed
/// out explicitly, within `1e-10`.
pub fn matches_enumeration(m: &ThmmModel, frames: &[Vec<f64>]) -> Check {
    let (m, frames) = (m.clone(), frames.to_vec());
    let oracle = enumerate_paths(&m, &frames);
    let post = m.forward_backward(&frames).map_err(|e| e.to_string())?;
    let tol = 1e-10;
    ensure!(close(post.loglik, oracle.loglik, tol), "loglik {} vs {}", post.loglik, oracle.loglik);
    let score = m.score_sequence(&frames).map_err(|e| e.to_string())?;
    ensure!(close(score, oracle.loglik, tol), "score {score} vs {}", oracle.loglik);
    for (t, (g, o)) in post.gamma.iter().zip(&oracle.gamma).enumerate() {
        for (s, (a, b)) in g.iter().zip(o).enumerate() {
            ensure!(close(*a, *b, tol), "gamma[{t}][{s}] {a} vs {b}");
        }
    }
    for (a, b) in post.class_pairs.iter().flatten().zip(oracle.class_pairs.iter().flatten()) {
        ensure!(close(*a, *b, tol), "class pair {a} vs {b}");
    }
    let l_count = m.transforms.len();
    for (k, moves) in oracle.moves.iter().enumerate() {
        let mut bins = vec![0.0; m.motion.bin_count()];
        for a in 0..l_count {
            let mut dep = 0.0;
            for b in 0..l_count {
                if moves[a][b] > 0.0 {
                    let (di, dj) = grid_delta(&m, a, b);
                    bins[m.motion.bin_of(di, dj).ok_or("mass on an infeasible move")?] += moves[a][b];
                }
                dep += moves[a][b];
            }
            ensure!(close(post.departures[k][a], dep, tol), "departures[{k}][{a}]");
        }
        for (got, want) in post.motion_counts[k].iter().zip(&bins) {
            ensure!(close(*got, *want, tol), "motion count {got} vs {want}");
        }
    }
    let path = m.viterbi(&frames).map_err(|e| e.to_string())?;
    let lp = m.path_logprob(&frames, &path).map_err(|e| e.to_string())?;
    ensure!(close(lp, oracle.best_logprob, tol), "Viterbi log-probability {lp} vs {}", oracle.best_logprob);
    ensure!(path == oracle.best_path, "Viterbi path differs from the enumerated best");
    Ok(())
}

pub fn marginals_and_moves_normalized(seed: u64) -> Check {
    let (m, frames) = seeded_case(seed);
    let post = m.forward_backward(&frames).map_err(|e| e.to_string())?;
    for (t, g) in post.gamma.iter().enumerate() {
        let total: f64 = g.iter().sum();
        ensure!(close(total, 1.0, 1e-10), "gamma[{t}] sums to {total}");
    }
    let moves: f64 = post.motion_counts.iter().flatten().sum();
    let expected = (frames.len() - 1) as f64;
    ensure!(close(moves, expected, 1e-9), "motion mass {moves} for {} frames", frames.len());
    let pairs: f64 = post.class_pairs.iter().flatten().sum();
    ensure!(close(pairs, expected, 1e-9), "class-pair mass {pairs} for {} frames", frames.len());
    Ok(())
}

pub fn viterbi_beats_pointwise(seed: u64) -> Check {
    let (m, frames) = seeded_case(seed);
    let post = m.forward_backward(&frames).map_err(|e| e.to_string())?;
    let pointwise: Vec<usize> = post.gamma.iter().map(|g| tinv::math::argmax(g)).collect();
    let best = m.path_logprob(&frames, &m.viterbi(&frames).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let point = m.path_logprob(&frames, &pointwise).map_err(|e| e.to_string())?;
    ensure!(best >= point - 1e-9 * best.abs().max(1.0), "Viterbi {best} below pointwise {point}");
    Ok(())
}

pub fn motion_threshold_respected(seed: u64) -> Check {
    let (m, frames) = seeded_case(seed);
    let post = m.forward_backward(&frames).map_err(|e| e.to_string())?;
    let t2 = (m.motion.threshold * m.motion.threshold) as i64;
    for a in 0..m.states() {
        let row = m.transition_row(a).map_err(|e| e.to_string())?;
        for (b, &p) in row.iter().enumerate() {
            let (di, dj) = grid_delta(&m, m.state(a).1, m.state(b).1);
            ensure!(di * di + dj * dj <= t2 || p == 0.0, "transition {a}->{b} jumps ({di}, {dj}) with p={p}");
        }
    }
    for t in 1..frames.len() {
        let (di, dj) = grid_delta(&m, m.state(post.map_path[t - 1]).1, m.state(post.map_path[t]).1);
        ensure!(di * di + dj * dj <= t2, "decoded move ({di}, {dj}) at frame {t} exceeds the threshold");
    }
    let total: f64 = post.motion_counts.iter().flatten().sum();
    ensure!(close(total, (frames.len() - 1) as f64, 1e-9), "motion bins miss mass: {total}");
    Ok(())
}

pub fn thmm_em_is_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let shape = ImageShape::new(r.random_range(2..=4), r.random_range(2..=4)).unwrap();
    let boundary = random_boundary(&mut r);
    let cap = |extent: usize| match boundary {
        Boundary::Wrap => extent.min(3),
        Boundary::ZeroPad => 3,
    };
    let rows = odd_count(&mut r, cap(shape.height));
    let cols = odd_count(&mut r, cap(shape.width));
    let set = build_translation_set(shape, rows, cols, boundary).unwrap();
    let c = r.random_range(1..=2);
    let mode = if r.random_bool(0.5) { MotionMode::Vector } else { MotionMode::Magnitude };
    let per_class = r.random_bool(0.5);
    let joint = r.random_bool(0.3);
    let truth = random_model(&mut r, set.clone(), c, mode, per_class, joint);
    let seqs: Vec<Vec<Vec<f64>>> = (0..r.random_range(1..=2))
        .map(|_| {
            let t = r.random_range(6..=14);
            truth.sample(t, &mut r).map(|s| s.0)
        })
        .collect::<tinv::Result<_>>()
        .map_err(|e| e.to_string())?;
    let start = random_model(&mut r, set, c, mode, per_class, joint);
    let opts = ThmmOptions {
        seed,
        clamp_motion: r.random_bool(0.2),
        tie_psi: r.random_bool(0.3),
        ..ThmmOptions::default()
    };
    let (_, reports) = start.fit(&seqs, Schedule::fixed(30), &opts).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 30, "{} steps reported", reports.len());
    monotone("thmm", &reports)
}

pub fn wrap_shift_moves_the_track(seed: u64) -> Check {
    let mut r = rng(seed);
    let side = [3, 5][r.random_range(0..2)];
    let shape = ImageShape::new(side, side).unwrap();
    let set = build_translation_set(shape, side, side, Boundary::Wrap).unwrap();
    let per_class = r.random_bool(0.5);
    let c = r.random_range(1..=2);
    let mut m = random_model(&mut r, set, c, MotionMode::Magnitude, per_class, false);
    m.initial = InitialDist::Factorized(random_simplex(&mut r, c));
    // sensor noise lives in the observed frame, so it must be shift-invariant too
    m.psi = vec![r.random_range(0.1..0.6); side * side];
    let t = r.random_range(1..=6);
    let frames = random_frames(&mut r, side * side, t);
    let half = (side / 2) as i64;
    let (dv, dh) = (r.random_range(-half..=half), r.random_range(-half..=half));
    let sigma = TransformOp::shift(shape, dv, dh, Boundary::Wrap);
    let moved: Vec<Vec<f64>> = frames.iter().map(|x| sigma.apply(x)).collect();
    let a = m.forward_backward(&frames).map_err(|e| e.to_string())?;
    let b = m.forward_backward(&moved).map_err(|e| e.to_string())?;
    ensure!(close(a.loglik, b.loglik, 1e-8), "loglik {} vs {}", a.loglik, b.loglik);
    let grid = m.transforms.grid().unwrap();
    let va = m.viterbi(&frames).map_err(|e| e.to_string())?;
    let vb = m.viterbi(&moved).map_err(|e| e.to_string())?;
    for (pa, pb) in [(&a.map_path, &b.map_path), (&va, &vb)] {
        for (t, (sa, sb)) in pa.iter().zip(pb).enumerate() {
            let (ca, la) = m.state(*sa);
            let (cb, lb) = m.state(*sb);
            ensure!(ca == cb, "frame {t}: class {ca} became {cb}");
            let (ia, ja) = grid.cell(la);
            let want = grid.index(
                (ia as i64 + dv).rem_euclid(side as i64) as usize,
                (ja as i64 + dh).rem_euclid(side as i64) as usize,
            );
            ensure!(lb == want, "frame {t}: transform {lb}, want {want}");
        }
    }
    Ok(())
}
