//! Energy-controlled extension of tree and cycle configurations.
//!
//! Stage by stage, every vertex function is extended by one entry. The
//! Szegő parameters are chosen by minimizing relative energies along the
//! edges; for long words the family is first perturbed so that energies
//! blow up near the boundary of the disk, which keeps the minimization
//! inside a compact set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::extend::{extend_entry, from_stage, stage, to_stage, ExtendError, SzegoParameter, ZETA_MAX};
use crate::hilbert::{build_partial_space, core_coordinate_matrix, projection_coefficients, HilbertError, PartialHilbertSpace};
use crate::linalg::{c, herm_eig, CMat, CVec, C64};
use crate::pdcore::{check_pd, l1_distance, Domain, PdError, PdFunction, Verdict};
use crate::transport::{domain_energy, gram_energy_all, partial_relative_energy, StagePair, TransportError};
use crate::words::{ball_last, clique, Word};

pub const TOL_EDGE: f64 = 1e-6;
pub const ITER_CAP: usize = 10_000;
/// Relative gap below which the top eigenvalue counts as repeated.
pub const GAP_REL: f64 = 1e-8;
/// Relative eigenvalue spread below which the pencil is a multiple of the identity.
pub const FLAT_REL: f64 = 1e-10;
pub const MIX_GRID: usize = 32;
/// Smallest accepted kernel separation in the mixing search.
pub const THETA_MIN: f64 = 1e-8;
pub const DEGENERATE_RETRIES: usize = 8;
const PERTURB: f64 = 1e-7;
const ARMIJO_START: f64 = 0.1;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_SLOPE: f64 = 1e-4;
const STEP_CAP: f64 = 1e4;
/// Gradient norm treated as stationary by the edge solver.
pub const STATIONARY: f64 = 1e-7;
pub const CYCLE_GRAD: f64 = 1e-8;
pub const CYCLE_SWEEPS: usize = 200;
const LAMBDA_SAMPLES: usize = 400;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singularization needs |g| >= 5, got |{0}| = {1}")]
    ShortWord(Word, usize),
    #[error("family members sit at different stages")]
    StageMismatch,
    #[error("no admissible perturbation makes W' invertible for member {0}")]
    NoLambda(usize),
    #[error("no mixing parameter separates the kernel of member {0}")]
    NoSeparation(usize),
    #[error("top eigenvalue is repeated ({0} vs {1})")]
    Degenerate(f64, f64),
    #[error("no convergence after {iterations} iterations: value {value:.12e}, target {target:.12e}")]
    NonConvergence { iterations: usize, best: Vec<C64>, value: f64, target: f64 },
    #[error("stage ({stage}), {place}: {msg}")]
    Stage { stage: String, place: String, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("sigma schedule exhausted at stage rank {0}")]
    Budget(usize),
    #[error("vertex {vertex}: restriction energy {energy:.12} exceeds 1 + epsilon")]
    Restriction { vertex: String, energy: f64 },
    #[error("singular matrix")]
    Singular,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Extend(#[from] ExtendError),
    #[error(transparent)]
    Pd(#[from] PdError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

fn project(z: C64) -> C64 {
    let r = z.norm();
    if r > ZETA_MAX {
        z * (ZETA_MAX / r)
    } else {
        z
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
}

// ---------------------------------------------------------------- singularization

/// Lower bound `κ²θ²/(2 − 2|ζ|²)` for `𝔢(D_from^ζ, D_to^μ)`.
#[derive(Clone, Copy, Debug)]
pub struct SingularityCertificate {
    pub from: usize,
    pub to: usize,
    pub kappa: f64,
    pub theta: f64,
    /// `det(Â_to* Â_to + Â_from* Â_from)`.
    pub det: f64,
}

impl SingularityCertificate {
    pub fn bound(&self, zeta: C64) -> f64 {
        let k = self.kappa * self.theta;
        k * k / (2.0 - 2.0 * zeta.norm_sqr())
    }
}

#[derive(Clone, Debug)]
pub struct Singularized {
    pub functions: Vec<PdFunction>,
    pub certificates: Vec<SingularityCertificate>,
    pub kappa: f64,
    pub lambdas: Vec<[C64; 4]>,
    pub mix: Vec<f64>,
}

/// The four entries moved by the first perturbation:
/// `C(g₁⁻¹g)_{j,1}`, `C(g₂⁻¹g)_{j,1}`, `C(g₁⁻¹)_{k,1}`, `C(g₂⁻¹)_{k,1}`.
fn lambda_slots(g: &Word, j: usize, k: usize) -> [(Word, usize, usize); 4] {
    let g1 = g.prefix(1);
    let g2 = g.prefix(2);
    [(g1.ldiv(g), j, 0), (g2.ldiv(g), j, 0), (g1.inverse(), k, 0), (g2.inverse(), k, 0)]
}

fn w_prime_det(f: &PdFunction, slots: &[(Word, usize, usize); 4]) -> Result<C64, PdError> {
    let v: Vec<C64> = slots
        .iter()
        .map(|(w, a, b)| f.value(w, *a, *b).ok_or_else(|| PdError::Missing(w.canonical())))
        .collect::<Result<_, _>>()?;
    Ok(v[0] * v[3] - v[2] * v[1])
}

/// Uniform sample from the ℓ¹ ball of radius `rho` in `ℂ⁴`.
fn sample_l1_ball(rho: f64, rng: &mut ChaCha8Rng) -> [C64; 4] {
    // Radii follow Dirichlet(2,2,2,2,1); the last coordinate is slack.
    let mut g = [0.0f64; 5];
    for (i, x) in g.iter_mut().enumerate() {
        let shape = if i < 4 { 2 } else { 1 };
        *x = (0..shape).map(|_| -> f64 { Exp1.sample(rng) }).sum::<f64>();
    }
    let total: f64 = g.iter().sum();
    let mut out = [c(0.0, 0.0); 4];
    for i in 0..4 {
        out[i] = random_unit(rng) * (rho * g[i] / total);
    }
    out
}

fn orthonormal_kernel(a: &CMat) -> Result<CMat, SolverError> {
    let (p, n) = (a.nrows(), a.ncols());
    let ap = a.columns(0, p).into_owned();
    let rest = a.columns(p, n - p).into_owned();
    let x = ap.lu().solve(&rest).ok_or(SolverError::Singular)?;
    let mut nb = CMat::zeros(n, n - p);
    nb.view_mut((0, 0), (p, n - p)).copy_from(&(-x));
    for i in 0..n - p {
        nb[(p + i, i)] = c(1.0, 0.0);
    }
    Ok(nb.qr().q())
}

fn min_singular(m: &CMat) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}

struct CoreData {
    a: CMat,
    kernel: CMat,
    min_norm: f64,
}

fn core_data(f: &PdFunction) -> Result<CoreData, SolverError> {
    let space = build_partial_space(f)?;
    let (a, o) = core_coordinate_matrix(&space)?;
    let kernel = orthonormal_kernel(&a)?;
    let min_norm = o.norms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CoreData { a, kernel, min_norm })
}

/// `θ` for the ordered pair: smallest `‖Â_to α‖` over unit `α ∈ ker Â_from`.
fn separation(from: &CoreData, to: &CoreData) -> f64 {
    min_singular(&(&to.a * &from.kernel))
}

/// Perturb a family of stage functions by at most `η` in ℓ¹ each so that
/// every ordered pair carries a singularity certificate.
pub fn make_singular(family: &[PdFunction], eta: f64, seed: u64) -> Result<Singularized, SolverError> {
    if family.is_empty() {
        return Ok(Singularized { functions: Vec::new(), certificates: Vec::new(), kappa: f64::INFINITY, lambdas: Vec::new(), mix: Vec::new() });
    }
    let (g, j, k) = stage(&family[0])?;
    for f in family {
        if stage(f)? != (g.clone(), j, k) || f.d() != family[0].d() {
            return Err(SolverError::StageMismatch);
        }
    }
    if g.len() < 5 {
        return Err(SolverError::ShortWord(g.clone(), g.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = lambda_slots(&g, j, k);

    // First perturbation: make W' invertible.
    let mut primed = Vec::with_capacity(family.len());
    let mut lambdas = Vec::with_capacity(family.len());
    for (m, f) in family.iter().enumerate() {
        // Each moved entry also moves its mirror, so ℓ¹ cost is 2‖Λ‖₁.
        let mut rho = eta / 4.0;
        let mut found = None;
        for attempt in 0..LAMBDA_SAMPLES {
            if attempt > 0 && attempt % 100 == 0 {
                rho *= 0.5;
            }
            let lam = sample_l1_ball(rho, &mut rng);
            let mut cand = f.clone();
            for (slot, l) in slots.iter().zip(lam) {
                let (w, a, b) = slot;
                let v = f.value(w, *a, *b).ok_or_else(|| PdError::Missing(w.canonical()))?;
                cand.set_value(w, *a, *b, v + l)?;
            }
            if w_prime_det(&cand, &slots)?.norm() < 1e-6 * rho * rho {
                continue;
            }
            if check_pd(&cand, 0.0)?.verdict != Verdict::Strict {
                continue;
            }
            found = Some((cand, lam));
            break;
        }
        let (cand, lam) = found.ok_or(SolverError::NoLambda(m))?;
        primed.push(cand);
        lambdas.push(lam);
    }

    // Second perturbation: mix towards Δ until kernels are pairwise transversal.
    let mut out: Vec<PdFunction> = Vec::with_capacity(family.len());
    let mut cores: Vec<CoreData> = Vec::with_capacity(family.len());
    let mut mix = Vec::with_capacity(family.len());
    for (m, f) in primed.iter().enumerate() {
        let spread = l1_distance(f, &PdFunction::delta(f.d(), f.domain().clone()))?;
        let s_max = if spread > 0.0 { (eta / 2.0 / spread).min(1.0) } else { 1.0 };
        let mut chosen = None;
        for step in 1..=MIX_GRID {
            let s = s_max * step as f64 / MIX_GRID as f64;
            let cand = f.mix_delta(s);
            let cd = core_data(&cand)?;
            let ok = cores.iter().all(|other| separation(other, &cd) >= THETA_MIN && separation(&cd, other) >= THETA_MIN);
            if ok {
                chosen = Some((cand, cd, s));
                break;
            }
        }
        let (cand, cd, s) = chosen.ok_or(SolverError::NoSeparation(m))?;
        out.push(cand);
        cores.push(cd);
        mix.push(s);
    }

    let kappa = cores.iter().map(|cd| cd.min_norm).fold(f64::INFINITY, f64::min);
    let mut certificates = Vec::new();
    for from in 0..cores.len() {
        for to in 0..cores.len() {
            if from == to {
                continue;
            }
            let (af, at) = (&cores[from].a, &cores[to].a);
            let det = (at.adjoint() * at + af.adjoint() * af).determinant().re;
            certificates.push(SingularityCertificate { from, to, kappa, theta: separation(&cores[from], &cores[to]), det });
        }
    }
    Ok(Singularized { functions: out, certificates, kappa, lambdas, mix })
}

// ---------------------------------------------------------------- gradients

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Zeta,
    Mu,
}

/// Energy at `(ζ, μ)` with its complex derivatives: moving `ζ` to `ζ + tς`
/// changes the energy at rate `Re(ς·d_zeta)`, likewise for `μ`.
#[derive(Clone, Debug)]
pub struct GradientData {
    pub energy: f64,
    pub vector: CVec,
    pub d_zeta: C64,
    pub d_mu: C64,
}

pub fn gradient_data(pair: &StagePair, zeta: C64, mu: C64) -> Result<GradientData, SolverError> {
    let (gc, gd) = pair.grams(zeta, mu);
    let (vals, vecs) = gram_energy_all(&gc, &gd)?;
    let n = vals.len();
    let top = vals[n - 1];
    let vector = vecs.column(n - 1).into_owned();
    if top - vals[0] <= FLAT_REL * top {
        // The pencil is a multiple of the identity: energy 1, a global minimum.
        return Ok(GradientData { energy: top, vector, d_zeta: c(0.0, 0.0), d_mu: c(0.0, 0.0) });
    }
    if top - vals[n - 2] <= GAP_REL * top {
        return Err(SolverError::Degenerate(top, vals[n - 2]));
    }
    let (ig, ie) = (pair.sc.sets.ig(), pair.sc.sets.ie());
    let prod = vector[ig] * vector[ie].conj();
    let a_prod = prod * (pair.rc.n_g * pair.rc.n_e);
    let b_prod = a_prod * transport_ratio(pair);
    Ok(GradientData { energy: top, vector, d_zeta: a_prod * (-2.0 * top), d_mu: b_prod * 2.0 })
}

/// `ββ̄′ / αᾱ′`: the ratio of residual norm products of the two functions.
pub fn transport_ratio(pair: &StagePair) -> f64 {
    (pair.rd.n_g * pair.rd.n_e) / (pair.rc.n_g * pair.rc.n_e)
}

/// Directional derivative of `𝔢(C^ζ, D^μ)` along the unit complex `ς` on
/// the chosen side.
pub fn energy_gradient(c_fn: &PdFunction, d_fn: &PdFunction, zeta: SzegoParameter, mu: SzegoParameter, side: Side, dir: C64) -> Result<f64, SolverError> {
    let pair = StagePair::new(c_fn, d_fn)?;
    pair_gradient(&pair, zeta.value(), mu.value(), side, dir)
}

pub fn pair_gradient(pair: &StagePair, zeta: C64, mu: C64, side: Side, dir: C64) -> Result<f64, SolverError> {
    let gd = gradient_data(pair, zeta, mu)?;
    let d = match side {
        Side::Zeta => gd.d_zeta,
        Side::Mu => gd.d_mu,
    };
    Ok((dir * d).re)
}

/// Coefficients of the normalized residual directions `S, S′` (in the
/// source) and `T, T′` (in the target) of a maximizing vector, measured by
/// decomposing the vector against the residuals of `Θ(g)_j` and `Θ(e)_k`.
#[derive(Clone, Copy, Debug)]
pub struct ExtensionComponents {
    pub alpha: C64,
    pub alpha_prime: C64,
    pub beta: C64,
    pub beta_prime: C64,
}

fn residual_coefficients(space: &PartialHilbertSpace, gram: &CMat, a: &CVec) -> Result<(C64, C64), SolverError> {
    let n = space.sets.q.len();
    let p = space.sets.p.len();
    let k = gram.map(|z| z.conj());
    let residual = |x: usize| -> Result<CVec, SolverError> {
        let cf = projection_coefficients(space, x)?;
        let mut v = CVec::zeros(n);
        v[x] = c(1.0, 0.0);
        for i in 0..p {
            v[i] = -cf[i];
        }
        Ok(v)
    };
    let rg = residual(space.sets.ig())?;
    let re = residual(space.sets.ie())?;
    let ip = |x: &CVec, y: &CVec| y.dotc(&(&k * x));
    let m = CMat::from_row_slice(2, 2, &[ip(&rg, &rg), ip(&re, &rg), ip(&rg, &re), ip(&re, &re)]);
    let rhs = CVec::from_vec(vec![ip(a, &rg), ip(a, &re)]);
    let uv = m.lu().solve(&rhs).ok_or(SolverError::Singular)?;
    let n_g = ip(&rg, &rg).re.sqrt();
    let n_e = ip(&re, &re).re.sqrt();
    Ok((uv[0] * n_g, uv[1] * n_e))
}

pub fn extension_components(pair: &StagePair, zeta: C64, mu: C64) -> Result<(f64, ExtensionComponents), SolverError> {
    let (gc, gd) = pair.grams(zeta, mu);
    let (vals, vecs) = gram_energy_all(&gc, &gd)?;
    let n = vals.len();
    let a = vecs.column(n - 1).into_owned();
    let (alpha, alpha_prime) = residual_coefficients(&pair.sc, &gc, &a)?;
    let (beta, beta_prime) = residual_coefficients(&pair.sd, &gd, &a)?;
    Ok((vals[n - 1], ExtensionComponents { alpha, alpha_prime, beta, beta_prime }))
}

// ---------------------------------------------------------------- descent

struct Descent {
    x: Vec<C64>,
    fx: f64,
    iterations: usize,
    converged: bool,
}

type GradientFn<'a> = dyn FnMut(&[C64]) -> Result<Vec<C64>, SolverError> + 'a;

/// Projected gradient with Armijo backtracking on `𝔻^N`. `grad` returns
/// complex derivatives `d_i` with directional derivative `Re(Σ δ_i d_i)`.
fn projected_descent(
    x0: Vec<C64>,
    f: &dyn Fn(&[C64]) -> Result<f64, SolverError>,
    grad: &mut GradientFn,
    stop: &dyn Fn(f64, f64) -> bool,
    max_iter: usize,
) -> Result<Descent, SolverError> {
    let mut x: Vec<C64> = x0.into_iter().map(project).collect();
    let mut fx = f(&x)?;
    let mut step = ARMIJO_START;
    for it in 0..max_iter {
        let g = grad(&x)?;
        let gnorm = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if stop(fx, gnorm) {
            return Ok(Descent { x, fx, iterations: it, converged: true });
        }
        if gnorm == 0.0 {
            return Ok(Descent { x, fx, iterations: it, converged: false });
        }
        let mut t = (2.0 * step).clamp(ARMIJO_START, STEP_CAP);
        let mut accepted = None;
        while t > 1e-20 {
            let cand: Vec<C64> = x.iter().zip(&g).map(|(xi, gi)| project(xi - gi.conj() * t)).collect();
            let slope: f64 = cand.iter().zip(&x).zip(&g).map(|((ci, xi), gi)| ((ci - xi) * gi).re).sum();
            let fc = f(&cand)?;
            if slope < 0.0 && fc <= fx + ARMIJO_SLOPE * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= ARMIJO_SHRINK;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
                step = t;
            }
            None => return Ok(Descent { x, fx, iterations: it + 1, converged: false }),
        }
    }
    let converged = stop(fx, f64::INFINITY);
    Ok(Descent { x, fx, iterations: max_iter, converged })
}

/// Central differences in the two real directions of each coordinate.
fn fd_gradient(f: &dyn Fn(&[C64]) -> Result<f64, SolverError>, x: &[C64], h: f64) -> Result<Vec<C64>, SolverError> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut parts = [0.0; 2];
        for (slot, dir) in [c(1.0, 0.0), c(0.0, 1.0)].into_iter().enumerate() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] = project(xp[i] + dir * h);
            xm[i] = project(xm[i] - dir * h);
            let span = (xp[i] - xm[i]).norm();
            parts[slot] = if span > 0.0 { (f(&xp)? - f(&xm)?) / span } else { 0.0 };
        }
        out.push(c(parts[0], -parts[1]));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: TOL_EDGE, max_iter: ITER_CAP, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct EdgeSolution {
    pub zeta: C64,
    pub energy: f64,
    pub target: f64,
    pub iterations: usize,
    pub fd_fallbacks: usize,
}

/// Minimize `ζ ↦ 𝔢(C^ζ, D^μ)` until it is within `tol` of the stage energy.
pub fn solve_edge(c_fn: &PdFunction, d_fn: &PdFunction, mu: SzegoParameter, opts: &SolveOptions) -> Result<EdgeSolution, SolverError> {
    solve_edge_pair(&StagePair::new(c_fn, d_fn)?, mu.value(), opts)
}

pub fn solve_edge_pair(pair: &StagePair, mu: C64, opts: &SolveOptions) -> Result<EdgeSolution, SolverError> {
    let target = pair.partial()?.energy;
    let f = |x: &[C64]| -> Result<f64, SolverError> { Ok(pair.energy(x[0], mu)?) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut fallbacks = 0usize;
    let mut grad = |x: &[C64]| -> Result<Vec<C64>, SolverError> {
        for attempt in 0..=DEGENERATE_RETRIES {
            let z = if attempt == 0 { x[0] } else { project(x[0] + random_unit(&mut rng) * PERTURB) };
            match gradient_data(pair, z, mu) {
                Ok(gd) => return Ok(vec![gd.d_zeta]),
                Err(SolverError::Degenerate(..)) => continue,
                Err(e) => return Err(e),
            }
        }
        fallbacks += 1;
        fd_gradient(&f, x, PERTURB)
    };
    let start = {
        let z0 = c(0.0, 0.0);
        let zm = project(mu);
        if f(&[zm])? < f(&[z0])? {
            zm
        } else {
            z0
        }
    };
    let tol = opts.tol;
    // Keep descending past the tolerance until the point is stationary;
    // a stalled line search inside the tolerance also counts as done.
    let stop = |fx: f64, g: f64| fx <= target + tol && g <= STATIONARY;
    let out = projected_descent(vec![start], &f, &mut grad, &stop, opts.max_iter)?;
    if out.fx > target + tol {
        return Err(SolverError::NonConvergence { iterations: out.iterations, best: out.x, value: out.fx, target });
    }
    Ok(EdgeSolution { zeta: out.x[0], energy: out.fx, target, iterations: out.iterations, fd_fallbacks: fallbacks })
}

#[derive(Clone, Debug)]
pub struct CycleSolution {
    pub zetas: Vec<C64>,
    pub energies: Vec<f64>,
    pub base: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub fd_fallbacks: usize,
}

/// Joint minimization of `Σ (𝔢(D_n^{ζ_n}, D_{n+1}^{ζ_{n+1}}) − 𝔢_n)²` around
/// the cycle `D_1 → D_2 → … → D_N → D_1`. `base` defaults to the stage
/// energies of the consecutive pairs.
pub fn solve_cycle_params(family: &[PdFunction], base: Option<&[f64]>, opts: &SolveOptions) -> Result<CycleSolution, SolverError> {
    let n = family.len();
    let pairs: Vec<StagePair> = (0..n).map(|i| StagePair::new(&family[i], &family[(i + 1) % n])).collect::<Result<_, _>>()?;
    solve_cycle_pairs(&pairs, base, opts)
}

pub fn solve_cycle_pairs(pairs: &[StagePair], base: Option<&[f64]>, opts: &SolveOptions) -> Result<CycleSolution, SolverError> {
    let n = pairs.len();
    let base: Vec<f64> = match base {
        Some(b) => b.to_vec(),
        None => pairs.iter().map(|p| p.partial().map(|r| r.energy)).collect::<Result<_, _>>()?,
    };
    if n == 0 {
        return Ok(CycleSolution { zetas: Vec::new(), energies: Vec::new(), base, objective: 0.0, iterations: 0, fd_fallbacks: 0 });
    }
    let energies = |x: &[C64]| -> Result<Vec<f64>, SolverError> { (0..n).map(|i| Ok(pairs[i].energy(x[i], x[(i + 1) % n])?)).collect() };
    let f = |x: &[C64]| -> Result<f64, SolverError> { Ok(energies(x)?.iter().zip(&base).map(|(e, b)| (e - b) * (e - b)).sum()) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut fallbacks = 0usize;
    let mut grad = |x: &[C64]| -> Result<Vec<C64>, SolverError> {
        'attempt: for attempt in 0..=DEGENERATE_RETRIES {
            let z: Vec<C64> = if attempt == 0 { x.to_vec() } else { x.iter().map(|&zi| project(zi + random_unit(&mut rng) * PERTURB)).collect() };
            let mut g = vec![c(0.0, 0.0); n];
            for i in 0..n {
                let next = (i + 1) % n;
                match gradient_data(&pairs[i], z[i], z[next]) {
                    Ok(gd) => {
                        let w = 2.0 * (gd.energy - base[i]);
                        g[i] += gd.d_zeta * w;
                        g[next] += gd.d_mu * w;
                    }
                    Err(SolverError::Degenerate(..)) => continue 'attempt,
                    Err(e) => return Err(e),
                }
            }
            return Ok(g);
        }
        fallbacks += 1;
        fd_gradient(&f, x, PERTURB)
    };
    let goal = n as f64 * opts.tol * opts.tol;
    // The objective is quartic near its zeros, so the gradient floor shrinks
    // with the square of the tolerance (1e-8 at the default).
    let floor = CYCLE_GRAD * (opts.tol / TOL_EDGE).powi(2);
    let stop = |fx: f64, g: f64| fx <= goal || g <= floor;
    // Block sweeps: each edge solve drives one residual to zero with its
    // head fixed; going backwards around the cycle only disturbs the edge
    // into the first vertex, and repeating the sweep settles it.
    let mut x = vec![c(0.0, 0.0); n];
    let mut sweep_iter = 0usize;
    let edge_opts = SolveOptions { tol: opts.tol, max_iter: opts.max_iter, seed: opts.seed };
    // Sweep until every edge is within tolerance, which is stricter than
    // the objective goal.
    let within = |x: &[C64]| -> Result<bool, SolverError> { Ok(energies(x)?.iter().zip(&base).all(|(e, b)| e - b <= opts.tol)) };
    for _ in 0..CYCLE_SWEEPS {
        if within(&x)? {
            break;
        }
        for i in (0..n).rev() {
            match solve_edge_pair(&pairs[i], x[(i + 1) % n], &edge_opts) {
                Ok(sol) => {
                    x[i] = sol.zeta;
                    sweep_iter += sol.iterations;
                }
                Err(SolverError::NonConvergence { best, iterations, .. }) => {
                    x[i] = best[0];
                    sweep_iter += iterations;
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut out = projected_descent(x, &f, &mut grad, &stop, opts.max_iter)?;
    out.iterations += sweep_iter;
    let es = energies(&out.x)?;
    if !out.converged {
        let excess = es.iter().zip(&base).map(|(e, b)| e - b).fold(0.0, f64::max);
        return Err(SolverError::NonConvergence { iterations: out.iterations, best: out.x, value: excess, target: 0.0 });
    }
    Ok(CycleSolution { zetas: out.x, energies: es, base, objective: out.fx, iterations: out.iterations, fd_fallbacks: fallbacks })
}

// ---------------------------------------------------------------- configurations

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Every vertex but the root has exactly one outgoing edge, towards the root.
    Tree { root: String },
    Cycle,
}

#[derive(Clone, Debug)]
pub struct Configuration {
    pub shape: Shape,
    pub r: usize,
    pub d: usize,
    pub vertices: Vec<String>,
    pub edges: Vec<(String, String)>,
    /// Functions carry data on `Ball(2r)` so that `B_r` energies are defined.
    pub functions: BTreeMap<String, PdFunction>,
}

impl Configuration {
    pub fn new(shape: Shape, r: usize, d: usize, edges: Vec<(String, String)>, functions: BTreeMap<String, PdFunction>) -> Result<Self, SolverError> {
        let vertices: Vec<String> = functions.keys().cloned().collect();
        let cfg = Configuration { shape, r, d, vertices, edges, functions };
        cfg.validate()?;
        Ok(cfg)
    }

    fn index(&self, v: &str) -> Result<usize, SolverError> {
        self.vertices.iter().position(|x| x == v).ok_or_else(|| SolverError::Config(format!("unknown vertex {v}")))
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.vertices.is_empty() {
            return Err(SolverError::Config("no vertices".into()));
        }
        for (name, f) in &self.functions {
            if f.d() != self.d {
                return Err(SolverError::Config(format!("vertex {name}: dimension {} != {}", f.d(), self.d)));
            }
            if *f.domain() != Domain::Ball(2 * self.r) {
                return Err(SolverError::Config(format!("vertex {name}: need data on Ball({}), got {}", 2 * self.r, f.domain().describe())));
            }
            let rep = check_pd(f, 0.0)?;
            if rep.verdict != Verdict::Strict {
                return Err(SolverError::Config(format!("vertex {name}: not strictly positive (min eigenvalue {:e})", rep.min_eigenvalue)));
            }
        }
        let n = self.vertices.len();
        let mut out_deg = vec![0usize; n];
        let mut in_deg = vec![0usize; n];
        let mut seen = BTreeSet::new();
        for (a, b) in &self.edges {
            let (i, j) = (self.index(a)?, self.index(b)?);
            if !seen.insert((i, j)) {
                return Err(SolverError::Config(format!("duplicate edge {a} -> {b}")));
            }
            out_deg[i] += 1;
            in_deg[j] += 1;
        }
        match &self.shape {
            Shape::Tree { root } => {
                let ri = self.index(root)?;
                if self.edges.len() + 1 != n {
                    return Err(SolverError::Config("a tree on n vertices has n - 1 edges".into()));
                }
                for (i, &od) in out_deg.iter().enumerate() {
                    let want = usize::from(i != ri);
                    if od != want {
                        return Err(SolverError::Config(format!("vertex {} has out-degree {od}, expected {want}", self.vertices[i])));
                    }
                }
                if self.tree_order()?.len() != self.edges.len() {
                    return Err(SolverError::Config("tree is not connected to its root".into()));
                }
            }
            Shape::Cycle => {
                if self.edges.len() != n || out_deg.iter().chain(&in_deg).any(|&x| x != 1) {
                    return Err(SolverError::Config("a directed cycle needs in- and out-degree 1 everywhere".into()));
                }
                if self.cycle_order()?.len() != n {
                    return Err(SolverError::Config("edges form more than one cycle".into()));
                }
            }
        }
        Ok(())
    }

    /// Edge indices ordered outwards from the root, so each parent's
    /// parameter is known before its children are solved.
    pub fn tree_order(&self) -> Result<Vec<usize>, SolverError> {
        let root = match &self.shape {
            Shape::Tree { root } => root.clone(),
            Shape::Cycle => return Err(SolverError::Config("not a tree".into())),
        };
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root]);
        let mut visited = BTreeSet::new();
        while let Some(p) = queue.pop_front() {
            if !visited.insert(p.clone()) {
                continue;
            }
            for (e, (a, b)) in self.edges.iter().enumerate() {
                if *b == p && !visited.contains(a) {
                    order.push(e);
                    queue.push_back(a.clone());
                }
            }
        }
        Ok(order)
    }

    /// Vertex indices in cycle order starting from the first vertex.
    pub fn cycle_order(&self) -> Result<Vec<usize>, SolverError> {
        let n = self.vertices.len();
        let mut order = vec![0usize];
        loop {
            let cur = &self.vertices[*order.last().unwrap()];
            let next = self.edges.iter().find(|(a, _)| a == cur).map(|(_, b)| b.clone()).ok_or_else(|| SolverError::Config(format!("{cur} has no outgoing edge")))?;
            let ni = self.index(&next)?;
            if ni == order[0] || order.len() > n {
                break;
            }
            order.push(ni);
        }
        Ok(order)
    }
}

/// `σ_rank = ε/4 · 2^{−rank}`.
pub fn default_sigma_schedule(eps: f64, stages: usize) -> Vec<f64> {
    (0..stages).map(|i| eps / 4.0 * 0.5f64.powi(i as i32)).collect()
}

/// The stages `(g, j, k)` that take `Ball(from)` data to `Ball(to)` data.
pub fn stage_list(d: usize, from: usize, to: usize) -> Vec<(Word, usize, usize)> {
    let mut out = Vec::new();
    if to <= from {
        return out;
    }
    let mut g = ball_last(from).next_canonical();
    while g.len() <= to {
        for j in 0..d {
            for k in 0..d {
                out.push((g.clone(), j, k));
            }
        }
        g = g.next_canonical();
    }
    out
}

#[derive(Clone, Debug)]
pub struct StageEdge {
    pub from: String,
    pub to: String,
    pub partial: f64,
    pub achieved: f64,
    /// `𝔢(C_v, C_w) + Σ σ` consumed so far, including this stage.
    pub ledger_bound: f64,
    pub accepted_best: bool,
}

#[derive(Clone, Debug)]
pub struct StageRecord {
    pub g: Word,
    pub j: usize,
    pub k: usize,
    pub sigma: f64,
    pub eta: Option<f64>,
    pub edges: Vec<StageEdge>,
    pub iterations: usize,
    pub fd_fallbacks: usize,
    pub zetas: Vec<(String, C64)>,
    pub ledger_ok: bool,
}

#[derive(Clone, Debug)]
pub struct EdgeRecord {
    pub from: String,
    pub to: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug)]
pub struct VertexRecord {
    pub name: String,
    pub l1_drift: f64,
    /// `max(𝔢(Ĉ_v↾, C_v), 𝔢(C_v, Ĉ_v↾))` over the input domain.
    pub restriction_energy: f64,
}

#[derive(Clone, Debug)]
pub struct SolverReport {
    pub radius: usize,
    pub epsilon: f64,
    pub edges: Vec<EdgeRecord>,
    pub stages: Vec<StageRecord>,
    pub vertices: Vec<VertexRecord>,
    pub encost: f64,
    pub sigma_consumed: f64,
    pub iterations: usize,
}

/// `(after − 1)/(before − 1)` with `0/0 = 1` and `x/0 = ∞`.
pub fn encost_ratio(before: f64, after: f64) -> f64 {
    let (num, den) = (after - 1.0, before - 1.0);
    if den < 1e-10 {
        if num < 1e-10 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num.max(0.0) / den
    }
}

fn stage_name(g: &Word, j: usize, k: usize) -> String {
    format!("{g},{},{}", j + 1, k + 1)
}

/// Make-singular budget: keep each perturbation's transport norms below
/// `1 + x` with `(1 + x)⁴ 𝔢 ≤ 𝔢 + σ/2`.
fn singular_eta(states: &[PdFunction], sigma: f64, e_max: f64) -> Result<f64, SolverError> {
    let x = sigma / (16.0 * e_max.max(1.0));
    let mut worst: f64 = 0.0;
    for f in states {
        let space = build_partial_space(f)?;
        for idx in [space.sets.xg(), space.sets.xe()] {
            let kmat = space.restricted_gram(&idx).map(|z| z.conj());
            let lo = herm_eig(&kmat).0[0];
            worst = worst.max(1.0 / lo);
        }
    }
    let (g, _, _) = stage(&states[0])?;
    let kg = clique(&g).map_err(PdError::from)?.vertices.len();
    Ok(x / (2.0 * kg as f64 * worst))
}

/// Extend every vertex function from `Ball(2r)` to `Ball(R)` stage by stage.
pub fn solve_configuration(
    config: &Configuration,
    radius: usize,
    eps: f64,
    sigma: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(BTreeMap<String, PdFunction>, SolverReport), SolverError> {
    let from = 2 * config.r;
    let stages = stage_list(config.d, from, radius);
    let schedule: Vec<f64> = match sigma {
        Some(s) => s.to_vec(),
        None => default_sigma_schedule(eps, stages.len()),
    };
    let nv = config.vertices.len();
    let edge_idx: Vec<(usize, usize)> = config.edges.iter().map(|(a, b)| Ok((config.index(a)?, config.index(b)?))).collect::<Result<_, SolverError>>()?;
    let inputs: Vec<&PdFunction> = config.vertices.iter().map(|v| &config.functions[v]).collect();
    let base: Vec<f64> = edge_idx.iter().map(|&(a, b)| Ok(domain_energy(inputs[a], inputs[b])?.energy)).collect::<Result<_, SolverError>>()?;
    let e_max = base.iter().copied().fold(1.0, f64::max);

    let mut states: Vec<PdFunction> = inputs.iter().map(|f| to_stage(f)).collect::<Result<_, _>>()?;
    let tree = config.tree_order().ok();
    let cycle = if tree.is_none() { Some(config.cycle_order()?) } else { None };
    let mut records = Vec::with_capacity(stages.len());
    let mut consumed = 0.0;
    let mut total_iter = 0usize;

    for (rank, (g, j, k)) in stages.iter().enumerate() {
        let name = stage_name(g, *j, *k);
        let sig = *schedule.get(rank).ok_or(SolverError::Budget(rank))?;
        let fail = |place: String, e: SolverError| SolverError::Stage { stage: name.clone(), place, msg: e.to_string() };

        let mut eta = None;
        if g.len() >= 5 && nv >= 2 {
            let et = singular_eta(&states, sig, e_max).map_err(|e| fail("budget".into(), e))?;
            let out = make_singular(&states, et, opts.seed.wrapping_add(rank as u64)).map_err(|e| fail("make_singular".into(), e))?;
            states = out.functions;
            eta = Some(et);
        }

        let pairs: Vec<StagePair> = edge_idx
            .iter()
            .map(|&(a, b)| StagePair::new(&states[a], &states[b]).map_err(|e| fail(format!("edge {} -> {}", config.vertices[a], config.vertices[b]), e.into())))
            .collect::<Result<_, _>>()?;
        let partial: Vec<f64> = pairs.iter().map(|p| p.partial().map(|r| r.energy)).collect::<Result<_, _>>()?;
        let share = sig / 2.0;
        let mut zetas = vec![c(0.0, 0.0); nv];
        let mut achieved = vec![0.0; edge_idx.len()];
        let mut accepted_best = vec![false; edge_idx.len()];
        let mut iterations = 0usize;
        let mut fd = 0usize;
        let stage_opts = SolveOptions { seed: opts.seed.wrapping_add(rank as u64), ..*opts };

        if let Some(order) = &tree {
            for &e in order {
                let (a, b) = edge_idx[e];
                let place = format!("edge {} -> {}", config.vertices[a], config.vertices[b]);
                match solve_edge_pair(&pairs[e], zetas[b], &stage_opts) {
                    Ok(sol) => {
                        zetas[a] = sol.zeta;
                        achieved[e] = sol.energy;
                        iterations += sol.iterations;
                        fd += sol.fd_fallbacks;
                    }
                    Err(SolverError::NonConvergence { iterations: it, best, value, target }) if value <= target + share => {
                        zetas[a] = best[0];
                        achieved[e] = value;
                        accepted_best[e] = true;
                        iterations += it;
                    }
                    Err(err) => return Err(fail(place, err)),
                }
            }
        } else if let Some(cyc) = &cycle {
            // Edge n of the cycle goes from cyc[n] to cyc[n+1].
            let m = cyc.len();
            let cyc_edges: Vec<usize> = (0..m)
                .map(|n| edge_idx.iter().position(|&(a, b)| a == cyc[n] && b == cyc[(n + 1) % m]).expect("validated cycle"))
                .collect();
            let cyc_pairs: Vec<StagePair> = cyc_edges.iter().map(|&e| pairs[e].clone()).collect();
            let cyc_base: Vec<f64> = cyc_edges.iter().map(|&e| partial[e]).collect();
            let (xs, es, it, fb) = match solve_cycle_pairs(&cyc_pairs, Some(&cyc_base), &stage_opts) {
                Ok(sol) => (sol.zetas, sol.energies, sol.iterations, sol.fd_fallbacks),
                Err(SolverError::NonConvergence { iterations: it, best, .. }) => {
                    let es: Vec<f64> = (0..m).map(|n| cyc_pairs[n].energy(best[n], best[(n + 1) % m])).collect::<Result<_, _>>()?;
                    (best, es, it, 0)
                }
                Err(err) => return Err(fail("cycle".into(), err)),
            };
            iterations += it;
            fd += fb;
            for n in 0..m {
                zetas[cyc[n]] = xs[n];
                let e = cyc_edges[n];
                achieved[e] = es[n];
                if es[n] > partial[e] + opts.tol {
                    if es[n] > partial[e] + share {
                        let place = format!("edge {} -> {}", config.vertices[edge_idx[e].0], config.vertices[edge_idx[e].1]);
                        return Err(fail(place, SolverError::NonConvergence { iterations: it, best: xs.clone(), value: es[n], target: partial[e] }));
                    }
                    accepted_best[e] = true;
                }
            }
        }

        consumed += sig;
        let mut edges = Vec::with_capacity(edge_idx.len());
        let mut ledger_ok = true;
        for (e, &(a, b)) in edge_idx.iter().enumerate() {
            let bound = base[e] + consumed;
            ledger_ok &= achieved[e] <= bound + 1e-8;
            edges.push(StageEdge {
                from: config.vertices[a].clone(),
                to: config.vertices[b].clone(),
                partial: partial[e],
                achieved: achieved[e],
                ledger_bound: bound,
                accepted_best: accepted_best[e],
            });
        }
        for (v, st) in states.iter_mut().enumerate() {
            *st = extend_entry(st, SzegoParameter::clamp(zetas[v])).map_err(|e| fail(format!("vertex {}", config.vertices[v]), e.into()))?;
        }
        total_iter += iterations;
        records.push(StageRecord {
            g: g.clone(),
            j: *j,
            k: *k,
            sigma: sig,
            eta,
            edges,
            iterations,
            fd_fallbacks: fd,
            zetas: config.vertices.iter().cloned().zip(zetas).collect(),
            ledger_ok,
        });
    }

    let mut out = BTreeMap::new();
    for (v, st) in states.into_iter().enumerate() {
        let f = if stages.is_empty() {
            config.functions[&config.vertices[v]].restrict_ball(radius.min(from))?
        } else {
            from_stage(&st)?.restrict_prefix_domain(Domain::Ball(radius))?
        };
        out.insert(config.vertices[v].clone(), f);
    }
    let (edges, vertices, encost) = measure(config, &out)?;
    let report = SolverReport { radius, epsilon: eps, edges, stages: records, vertices, encost, sigma_consumed: consumed, iterations: total_iter };
    Ok((out, report))
}

type Measured = (Vec<EdgeRecord>, Vec<VertexRecord>, f64);

fn measure(config: &Configuration, ext: &BTreeMap<String, PdFunction>) -> Result<Measured, SolverError> {
    let mut edges = Vec::new();
    let mut m: f64 = 1.0;
    for (a, b) in &config.edges {
        let before = domain_energy(&config.functions[a], &config.functions[b])?.energy;
        let (fa, fb) = (get(ext, a)?, get(ext, b)?);
        let after = domain_energy(fa, fb)?.energy;
        m = m.max(encost_ratio(before, after));
        edges.push(EdgeRecord { from: a.clone(), to: b.clone(), before, after });
    }
    let mut vertices = Vec::new();
    for v in &config.vertices {
        let orig = &config.functions[v];
        let f = get(ext, v)?;
        let restricted = match f.domain() {
            Domain::Ball(rr) if *rr >= 2 * config.r => f.restrict_ball(2 * config.r)?,
            _ => f.clone(),
        };
        let (l1_drift, restriction_energy) = if restricted.domain() == orig.domain() {
            let fwd = domain_energy(&restricted, orig)?.energy;
            let bwd = domain_energy(orig, &restricted)?.energy;
            (l1_distance(&restricted, orig)?, fwd.max(bwd))
        } else {
            let common = restricted.domain().top().min(orig.domain().top());
            let (x, y) = (restricted.restrict_prefix_domain(Domain::Prefix(common.clone()))?, orig.restrict_prefix_domain(Domain::Prefix(common))?);
            (l1_distance(&x, &y)?, domain_energy(&x, &y)?.energy.max(domain_energy(&y, &x)?.energy))
        };
        vertices.push(VertexRecord { name: v.clone(), l1_drift, restriction_energy });
    }
    Ok((edges, vertices, m))
}

fn get<'a>(ext: &'a BTreeMap<String, PdFunction>, v: &str) -> Result<&'a PdFunction, SolverError> {
    ext.get(v).ok_or_else(|| SolverError::Config(format!("no extension for vertex {v}")))
}

#[derive(Clone, Debug)]
pub struct EncostReport {
    pub encost: f64,
    pub edges: Vec<EdgeRecord>,
    pub vertices: Vec<VertexRecord>,
}

/// `M = max_edges (𝔢(Ĉ_v,Ĉ_w) − 1)/(𝔢(C_v,C_w) − 1)`, after checking
/// that every extension restricts to within `1 + ε` of its input.
pub fn encost_report(config: &Configuration, extensions: &BTreeMap<String, PdFunction>, eps: f64) -> Result<EncostReport, SolverError> {
    let (edges, vertices, encost) = measure(config, extensions)?;
    for v in &vertices {
        if v.restriction_energy > 1.0 + eps {
            return Err(SolverError::Restriction { vertex: v.name.clone(), energy: v.restriction_energy });
        }
    }
    Ok(EncostReport { encost, edges, vertices })
}

/// A path `v0 → v1 → … → v_{n−1}` (root `v_{n−1}`) or a directed cycle on
/// `n` vertices, with functions `(1 − t)·C_base + t·C_v` on `Ball(2r)` and
/// `t` as large as keeps every pairwise energy at most `max_energy`.
pub fn random_configuration(cycle: bool, n: usize, r: usize, d: usize, seed: u64, max_energy: f64) -> Result<Configuration, SolverError> {
    let base = crate::pdcore::random_nspd(2 * r, d, seed, 0.3);
    let raw: Vec<PdFunction> = (0..n).map(|v| crate::pdcore::random_nspd(2 * r, d, seed.wrapping_add(1 + v as u64).wrapping_mul(7919), 0.3)).collect();
    let build = |t: f64| -> Result<Vec<PdFunction>, SolverError> { raw.iter().map(|f| Ok(base.convex(f, t)?)).collect() };
    let worst = |fs: &[PdFunction]| -> Result<f64, SolverError> {
        let mut w: f64 = 1.0;
        for a in fs {
            for b in fs {
                w = w.max(domain_energy(a, b)?.energy);
            }
        }
        Ok(w)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if worst(&build(1.0)?)? <= max_energy {
        lo = 1.0;
    } else {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if worst(&build(mid)?)? <= max_energy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let fs = build(lo)?;
    let names: Vec<String> = (0..n).map(|v| format!("v{v}")).collect();
    let mut edges: Vec<(String, String)> = (0..n.saturating_sub(1)).map(|v| (names[v].clone(), names[v + 1].clone())).collect();
    let shape = if cycle {
        if n > 1 {
            edges.push((names[n - 1].clone(), names[0].clone()));
        } else {
            edges.push((names[0].clone(), names[0].clone()));
        }
        Shape::Cycle
    } else {
        Shape::Tree { root: names[n - 1].clone() }
    };
    let functions = names.into_iter().zip(fs).collect();
    Configuration::new(shape, r, d, edges, functions)
}

/// Stage partial energy of two functions; re-exported for reporting.
pub fn stage_energy(c_fn: &PdFunction, d_fn: &PdFunction) -> Result<f64, SolverError> {
    Ok(partial_relative_energy(c_fn, d_fn)?.energy)
}
