//! Transport operators and relative energies.
//!
//! For a Gram matrix `G` over an index list the quadratic form of the
//! coordinate vector `α` is `‖Σ α_i Θ_i‖² = α* conj(G) α`. The energy of
//! `(C, D)` is the largest `λ` with `conj(G_D) α = λ conj(G_C) α`, i.e. the
//! squared operator norm of `Θ_C(i) ↦ Θ_D(i)`.

use thiserror::Error;

use crate::extend::{entry_for, ExtendError};
use crate::hilbert::{build_partial_space, residual_data, HilbertError, PartialHilbertSpace, ResidualData};
use crate::linalg::{gen_eig, gen_eig_spectral, herm_eig, l1_norm, op_norm, rayleigh, submatrix, CMat, CVec, C64};
use crate::pdcore::{block_indices, canonical_upto, gram, Domain, Idx, PdError, PdFunction};
use crate::words::{ball, clique, Word};

/// Whitening switches to the spectral route above this condition number.
pub const COND_SWITCH: f64 = 1e8;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("Gram matrix of the source is not strictly positive (min eigenvalue {0:e})")]
    NotStrict(f64),
    #[error("energy on B_{r} needs data on B_{need}, have {have}")]
    RadiusTooLarge { r: usize, need: usize, have: String },
    #[error("functions live on different domains: {0} vs {1}")]
    DomainMismatch(String, String),
    #[error("singular matrix")]
    Singular,
    #[error(transparent)]
    Pd(#[from] PdError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Extend(#[from] ExtendError),
}

/// Which index set an energy was computed on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Restriction {
    Full,
    Xg,
    Xe,
    Ball(usize),
    Clique(Word),
}

#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub energy: f64,
    /// Coordinates `α` of a maximizing vector, normalized to `α* conj(G_C) α = 1`.
    pub vector: CVec,
    pub index: Vec<Idx>,
    pub restriction: Restriction,
}

/// Largest generalized eigenvalue of `(conj(G_D), conj(G_C))` and its vector.
pub fn gram_energy(gc: &CMat, gd: &CMat) -> Result<(f64, CVec), TransportError> {
    gram_energy_all(gc, gd).map(|(vals, vecs)| {
        let n = vals.len();
        if n == 0 {
            (1.0, CVec::zeros(0))
        } else {
            (vals[n - 1], vecs.column(n - 1).into_owned())
        }
    })
}

/// All generalized eigenvalues, ascending, with vectors.
pub fn gram_energy_all(gc: &CMat, gd: &CMat) -> Result<(Vec<f64>, CMat), TransportError> {
    let kc = gc.map(|z| z.conj());
    let kd = gd.map(|z| z.conj());
    let (ev, _) = herm_eig(&kc);
    let (lo, hi) = match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Ok((Vec::new(), CMat::zeros(0, 0))),
    };
    if lo <= 0.0 {
        return Err(TransportError::NotStrict(lo));
    }
    let out = if hi / lo > COND_SWITCH { gen_eig_spectral(&kd, &kc) } else { gen_eig(&kd, &kc) };
    out.ok_or(TransportError::NotStrict(lo))
}

/// Independent second route (spectral whitening), for cross-checks.
pub fn gram_energy_spectral(gc: &CMat, gd: &CMat) -> Result<f64, TransportError> {
    let kc = gc.map(|z| z.conj());
    let kd = gd.map(|z| z.conj());
    let (vals, _) = gen_eig_spectral(&kd, &kc).ok_or(TransportError::NotStrict(0.0))?;
    Ok(vals.last().copied().unwrap_or(1.0))
}

fn report(gc: &CMat, gd: &CMat, index: Vec<Idx>, restriction: Restriction) -> Result<EnergyReport, TransportError> {
    let (energy, vector) = gram_energy(gc, gd)?;
    Ok(EnergyReport { energy, vector, index, restriction })
}

/// Rayleigh quotient of coordinates `α` for the pair of Grams.
pub fn rayleigh_quotient(gc: &CMat, gd: &CMat, alpha: &CVec) -> f64 {
    rayleigh(&gd.map(|z| z.conj()), &gc.map(|z| z.conj()), alpha)
}

fn same_shape(a: &PdFunction, b: &PdFunction) -> Result<(), TransportError> {
    if a.d() != b.d() || a.domain() != b.domain() {
        return Err(TransportError::DomainMismatch(a.domain().describe(), b.domain().describe()));
    }
    Ok(())
}

/// `𝔢(C↾B_r, D↾B_r)` over the index set `B_r × [d]`; needs `Ball(R)` data
/// with `R ≥ 2r`.
pub fn relative_energy(c: &PdFunction, d: &PdFunction, r: usize) -> Result<EnergyReport, TransportError> {
    same_shape(c, d)?;
    let have = match c.domain() {
        Domain::Ball(rr) => *rr,
        other => {
            return Err(TransportError::RadiusTooLarge { r, need: 2 * r, have: other.describe() });
        }
    };
    if have < 2 * r {
        return Err(TransportError::RadiusTooLarge { r, need: 2 * r, have: c.domain().describe() });
    }
    let e = ball(r);
    let gc = gram(c, &e)?;
    let gd = gram(d, &e)?;
    report(&gc, &gd, block_indices(&e, c.d()), Restriction::Ball(r))
}

/// Energy on the largest ball the data supports.
pub fn relative_energy_ball(c: &PdFunction, d: &PdFunction) -> Result<EnergyReport, TransportError> {
    match c.domain() {
        Domain::Ball(r) => relative_energy(c, d, r / 2),
        other => Err(TransportError::RadiusTooLarge { r: 0, need: 0, have: other.describe() }),
    }
}

/// Energies at a list of radii, each needing data on twice the radius.
pub fn energy_schedule(c: &PdFunction, d: &PdFunction, radii: &[usize]) -> Result<Vec<EnergyReport>, TransportError> {
    radii.iter().map(|&r| relative_energy(c, d, r)).collect()
}

/// Energy over everything a ball or prefix function specifies: the maximum
/// over the cliques `K_h`, `h ⪯ top`, which cover every clique of the
/// Cayley graph up to translation.
pub fn domain_energy(c: &PdFunction, d: &PdFunction) -> Result<EnergyReport, TransportError> {
    same_shape(c, d)?;
    let top = c.domain().top();
    let mut best: Option<EnergyReport> = None;
    let hs = canonical_upto(&top);
    if hs.len() == 1 {
        let e = [Word::identity()];
        return report(&gram(c, &e)?, &gram(d, &e)?, block_indices(&e, c.d()), Restriction::Clique(Word::identity()));
    }
    for h in hs.into_iter().skip(1) {
        let k = clique(&h).map_err(PdError::from)?.vertices;
        let rep = report(&gram(c, &k)?, &gram(d, &k)?, block_indices(&k, c.d()), Restriction::Clique(h))?;
        if best.as_ref().is_none_or(|b| rep.energy > b.energy) {
            best = Some(rep);
        }
    }
    Ok(best.expect("at least one clique"))
}

/// Restricted energies of two stages over the same index sets.
fn restricted(sc: &PartialHilbertSpace, sd: &PartialHilbertSpace, idx: &[usize], which: Restriction) -> Result<EnergyReport, TransportError> {
    let gc = submatrix(&sc.gram, idx);
    let gd = submatrix(&sd.gram, idx);
    let index = idx.iter().map(|&i| sc.sets.q[i].clone()).collect();
    report(&gc, &gd, index, which)
}

/// The stage energy: max of the energies restricted to `X_g` and `X_e`.
pub fn partial_relative_energy(c: &PdFunction, d: &PdFunction) -> Result<EnergyReport, TransportError> {
    same_shape(c, d)?;
    let sc = build_partial_space(c)?;
    let sd = build_partial_space(d)?;
    partial_energy_spaces(&sc, &sd)
}

pub fn partial_energy_spaces(sc: &PartialHilbertSpace, sd: &PartialHilbertSpace) -> Result<EnergyReport, TransportError> {
    let g = restricted(sc, sd, &sc.sets.xg(), Restriction::Xg)?;
    let e = restricted(sc, sd, &sc.sets.xe(), Restriction::Xe)?;
    Ok(if g.energy >= e.energy { g } else { e })
}

/// A stage pair prepared for repeated evaluation at different parameters.
#[derive(Clone, Debug)]
pub struct StagePair {
    pub sc: PartialHilbertSpace,
    pub sd: PartialHilbertSpace,
    pub rc: ResidualData,
    pub rd: ResidualData,
}

impl StagePair {
    pub fn new(c: &PdFunction, d: &PdFunction) -> Result<Self, TransportError> {
        same_shape(c, d)?;
        let sc = build_partial_space(c)?;
        let sd = build_partial_space(d)?;
        let rc = residual_data(&sc)?;
        let rd = residual_data(&sd)?;
        Ok(StagePair { sc, sd, rc, rd })
    }

    pub fn grams(&self, zeta: C64, mu: C64) -> (CMat, CMat) {
        (self.sc.completed_gram(entry_for(&self.rc, zeta)), self.sd.completed_gram(entry_for(&self.rd, mu)))
    }

    /// `𝔢(C^ζ, D^μ)` over the whole of `Q`.
    pub fn energy(&self, zeta: C64, mu: C64) -> Result<f64, TransportError> {
        let (gc, gd) = self.grams(zeta, mu);
        Ok(gram_energy(&gc, &gd)?.0)
    }

    pub fn report(&self, zeta: C64, mu: C64) -> Result<EnergyReport, TransportError> {
        let (gc, gd) = self.grams(zeta, mu);
        report(&gc, &gd, self.sc.sets.q.clone(), Restriction::Full)
    }

    pub fn partial(&self) -> Result<EnergyReport, TransportError> {
        partial_energy_spaces(&self.sc, &self.sd)
    }
}

/// `𝔢(C^ζ, D^μ)` for two stage functions extended by `ζ` and `μ`.
pub fn extended_energy(c: &PdFunction, d: &PdFunction, zeta: C64, mu: C64) -> Result<EnergyReport, TransportError> {
    StagePair::new(c, d)?.report(zeta, mu)
}

/// Outcome of checking the operator-norm bound for `t[L,M] = M L⁻¹`.
#[derive(Clone, Copy, Debug)]
pub struct PerturbationCheck {
    pub eta: f64,
    pub gram_l1: f64,
    pub premise: bool,
    pub norm_lm: f64,
    pub norm_ml: f64,
    pub holds: bool,
}

/// `η = σ / (2‖L⁻¹‖²)`.
pub fn perturbation_eta(l: &CMat, sigma: f64) -> Result<f64, TransportError> {
    let linv = l.clone().try_inverse().ok_or(TransportError::Singular)?;
    Ok(sigma / (2.0 * op_norm(&linv).powi(2)))
}

/// If `‖L*L − M*M‖₁ ≤ η` then both `‖ML⁻¹‖` and `‖LM⁻¹‖` should be at most
/// `1 + σ`; `holds` is false only when the premise holds and a norm fails.
pub fn perturbation_bound_check(l: &CMat, m: &CMat, sigma: f64) -> Result<PerturbationCheck, TransportError> {
    let eta = perturbation_eta(l, sigma)?;
    let linv = l.clone().try_inverse().ok_or(TransportError::Singular)?;
    let gram_l1 = l1_norm(&(l.adjoint() * l - m.adjoint() * m));
    let premise = gram_l1 <= eta;
    let norm_lm = op_norm(&(m * &linv));
    let norm_ml = match m.clone().try_inverse() {
        Some(minv) => op_norm(&(l * minv)),
        None => f64::INFINITY,
    };
    let holds = !premise || (norm_lm <= 1.0 + sigma && norm_ml <= 1.0 + sigma);
    Ok(PerturbationCheck { eta, gram_l1, premise, norm_lm, norm_ml, holds })
}
