//! Entry-by-entry extension driven by Szegő parameters, the legal disk, the
//! ball recursion and the classical Toeplitz step.

use std::fmt;

use thiserror::Error;

use crate::hilbert::{build_partial_space, residual_data, HilbertError, ResidualData};
use crate::linalg::{c, herm_eig, CMat, CVec, C64};
use crate::pdcore::{check_pd, Domain, PdError, PdFunction, Verdict};
use crate::words::{ball_last, Word};

/// Parameters are kept at least this far inside the unit disk.
pub const DELTA_MIN: f64 = 1e-6;
pub const ZETA_MAX: f64 = 1.0 - DELTA_MIN;

#[derive(Debug, Error)]
pub enum ExtendError {
    #[error("Szegő parameter |ζ| = {0} exceeds 1 - 1e-6")]
    OutOfDisk(f64),
    #[error("policy failed at stage {stage}: {msg}")]
    Policy { stage: String, msg: String },
    #[error("extension lost strictness at {0}")]
    LostStrictness(String),
    #[error("Toeplitz matrix is not strictly positive definite (min eigenvalue {0:e})")]
    NotStrictToeplitz(f64),
    #[error("cannot extend: {0}")]
    Invalid(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Pd(#[from] PdError),
}

/// A point of the closed disk of radius `1 − 1e-6`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SzegoParameter(C64);

impl SzegoParameter {
    pub fn new(z: C64) -> Result<Self, ExtendError> {
        if z.norm().is_nan() || z.norm() > ZETA_MAX + 1e-15 {
            return Err(ExtendError::OutOfDisk(z.norm()));
        }
        Ok(SzegoParameter(z))
    }

    pub fn zero() -> Self {
        SzegoParameter(c(0.0, 0.0))
    }

    pub fn value(&self) -> C64 {
        self.0
    }

    /// Radial projection onto the admissible disk.
    pub fn clamp(z: C64) -> Self {
        let r = z.norm();
        if r > ZETA_MAX {
            SzegoParameter(z * (ZETA_MAX / r))
        } else {
            SzegoParameter(z)
        }
    }
}

impl fmt::Display for SzegoParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}i", self.0.re, self.0.im)
    }
}

/// Current stage `(g, j, k)` of a partial function.
pub fn stage(c: &PdFunction) -> Result<(Word, usize, usize), ExtendError> {
    match c.domain() {
        Domain::Partial { g, j, k } => Ok((g.clone(), *j, *k)),
        other => Err(ExtendError::Invalid(format!("expected a partial stage, got {}", other.describe()))),
    }
}

pub fn residuals(c: &PdFunction) -> Result<ResidualData, ExtendError> {
    Ok(residual_data(&build_partial_space(c)?)?)
}

/// Center and radius of the disk of admissible new entries.
pub fn legal_disk(c: &PdFunction) -> Result<(C64, f64), ExtendError> {
    let r = residuals(c)?;
    Ok((r.cross, r.n_g * r.n_e))
}

/// The entry that parameter `ζ` selects.
pub fn entry_for(r: &ResidualData, zeta: C64) -> C64 {
    zeta * (r.n_g * r.n_e) + r.cross
}

/// Inverse of [`entry_for`].
pub fn zeta_for(r: &ResidualData, value: C64) -> C64 {
    (value - r.cross) / (r.n_g * r.n_e)
}

/// Set `C(g)_{j,k}` to an explicit value and advance to the next stage.
/// No positivity check is made; see [`extend_entry`].
pub fn set_entry(c: &PdFunction, value: C64) -> Result<PdFunction, ExtendError> {
    let (g, j, k) = stage(c)?;
    let d = c.d();
    let (_, _, mut entries, mut partial) = c.clone().into_parts();
    partial.push(value);
    if (j, k) != (d - 1, d - 1) {
        let (nj, nk) = if k + 1 < d { (j, k + 1) } else { (j + 1, 0) };
        return Ok(PdFunction::from_parts_unchecked(d, Domain::Partial { g, j: nj, k: nk }, entries, partial));
    }
    let m = CMat::from_row_slice(d, d, &partial);
    entries.insert(g.clone(), m);
    let next = g.next_canonical();
    Ok(PdFunction::from_parts_unchecked(d, Domain::Partial { g: next, j: 0, k: 0 }, entries, Vec::new()))
}

/// `C(g)_{j,k} = ζ·n_g·n_e + cross`, then advance; at `(d,d)` the matrix
/// `C(g)` is completed (and `C(g⁻¹) = C(g)*` with it) and the next stage
/// is `(g↓, 1, 1)` with `g↓` the next canonical word.
pub fn extend_entry(c: &PdFunction, zeta: SzegoParameter) -> Result<PdFunction, ExtendError> {
    let r = residuals(c)?;
    set_entry(c, entry_for(&r, zeta.value()))
}

/// The first stage above a ball or prefix function.
pub fn to_stage(c: &PdFunction) -> Result<PdFunction, ExtendError> {
    let top = match c.domain() {
        Domain::Ball(_) | Domain::Prefix(_) => c.domain().top(),
        Domain::Partial { .. } => return Ok(c.clone()),
    };
    let (d, _, entries, _) = c.clone().into_parts();
    let g = top.next_canonical();
    Ok(PdFunction::from_parts_unchecked(d, Domain::Partial { g, j: 0, k: 0 }, entries, Vec::new()))
}

/// View a stage at `(g, 1, 1)` as the prefix function on `I_{g↑}`.
pub fn from_stage(c: &PdFunction) -> Result<PdFunction, ExtendError> {
    let (g, j, k) = stage(c)?;
    if (j, k) != (0, 0) {
        return Err(ExtendError::Invalid(format!("stage ({g},{},{}) is mid-matrix", j + 1, k + 1)));
    }
    let (d, _, entries, _) = c.clone().into_parts();
    let top = g.predecessor().unwrap_or_default();
    Ok(PdFunction::from_parts_unchecked(d, Domain::Prefix(top), entries, Vec::new()))
}

/// Chooses the Szegő parameter at each stage.
pub trait ParameterPolicy {
    fn zeta(&mut self, stage: &PdFunction) -> Result<SzegoParameter, String>;
}

impl<F> ParameterPolicy for F
where
    F: FnMut(&PdFunction) -> Result<SzegoParameter, String>,
{
    fn zeta(&mut self, stage: &PdFunction) -> Result<SzegoParameter, String> {
        self(stage)
    }
}

/// `ζ ≡ 0`.
pub struct Central;

impl ParameterPolicy for Central {
    fn zeta(&mut self, _stage: &PdFunction) -> Result<SzegoParameter, String> {
        Ok(SzegoParameter::zero())
    }
}

/// Run stages until the stage word passes `target`; returns the function
/// on `I_target` as a prefix function.
pub fn extend_prefix(c: &PdFunction, target: &Word, policy: &mut dyn ParameterPolicy) -> Result<PdFunction, ExtendError> {
    let mut cur = to_stage(c)?;
    loop {
        let (g, j, k) = stage(&cur)?;
        if (j, k) == (0, 0) && g > *target {
            break;
        }
        let z = policy.zeta(&cur).map_err(|msg| ExtendError::Policy { stage: cur.domain().describe(), msg })?;
        cur = extend_entry(&cur, z)?;
    }
    let out = from_stage(&cur)?;
    let (d, _, entries, _) = out.into_parts();
    Ok(PdFunction::from_parts_unchecked(d, Domain::Prefix(target.clone()), entries, Vec::new()))
}

/// Extend a ball function to `Ball(R)` stage by stage in shortlex × lex
/// order, taking each `ζ` from `policy`.
pub fn extend_ball(c: &PdFunction, radius: usize, policy: &mut dyn ParameterPolicy) -> Result<PdFunction, ExtendError> {
    let r0 = match c.domain() {
        Domain::Ball(r) => *r,
        other => return Err(ExtendError::Invalid(format!("expected a ball, got {}", other.describe()))),
    };
    if radius < r0 {
        return Err(ExtendError::Invalid(format!("target radius {radius} is below the input radius {r0}")));
    }
    let out = extend_prefix(c, &ball_last(radius), policy)?;
    let (d, _, entries, _) = out.into_parts();
    Ok(PdFunction::from_parts_unchecked(d, Domain::Ball(radius), entries, Vec::new()))
}

pub fn central_extension(c: &PdFunction, radius: usize) -> Result<PdFunction, ExtendError> {
    extend_ball(c, radius, &mut Central)
}

/// Like [`extend_ball`], verifying strictness each time a matrix `C(g)` is
/// completed.
pub fn extend_ball_checked(c: &PdFunction, radius: usize, policy: &mut dyn ParameterPolicy, tol: f64) -> Result<PdFunction, ExtendError> {
    let mut checking = |st: &PdFunction| -> Result<SzegoParameter, String> {
        if let Domain::Partial { j: 0, k: 0, .. } = st.domain() {
            let pre = from_stage(st).map_err(|e| e.to_string())?;
            let rep = check_pd(&pre, tol).map_err(|e| e.to_string())?;
            if rep.verdict != Verdict::Strict {
                return Err(format!("completed prefix is {}", rep.verdict.as_str()));
            }
        }
        policy.zeta(st)
    };
    let out = extend_ball(c, radius, &mut checking)?;
    let rep = check_pd(&out, tol)?;
    if rep.verdict != Verdict::Strict {
        return Err(ExtendError::LostStrictness(out.domain().describe()));
    }
    Ok(out)
}

/// One classical Schur/Szegő step on a Toeplitz sequence `c(0..=N)` with
/// `c(0) = 1`, for vectors `Φ_0..Φ_{N+1}` with `⟨Φ_m, Φ_n⟩ = c(m − n)`.
pub fn toeplitz_step(seq: &[C64], zeta: SzegoParameter) -> Result<C64, ExtendError> {
    let n = seq.len();
    if n == 0 || (seq[0] - c(1.0, 0.0)).norm() > 1e-12 {
        return Err(ExtendError::Invalid("sequence must start with c(0) = 1".into()));
    }
    let at = |t: i64| -> C64 {
        if t >= 0 {
            seq[t as usize]
        } else {
            seq[(-t) as usize].conj()
        }
    };
    let full = CMat::from_fn(n, n, |a, b| at(a as i64 - b as i64));
    let min = herm_eig(&full).0[0];
    if min <= 1e-12 {
        return Err(ExtendError::NotStrictToeplitz(min));
    }
    let big_n = n - 1;
    // Core: Φ_1..Φ_N.
    let (cross, ng2, ne2) = if big_n == 0 {
        (c(0.0, 0.0), 1.0, 1.0)
    } else {
        // Coordinates: ‖Σ α Φ‖² = α* K α with K[m,n] = ⟨Φ_n, Φ_m⟩.
        let k = CMat::from_fn(big_n, big_n, |a, b| at(b as i64 - a as i64));
        let bg = CVec::from_fn(big_n, |q, _| at(big_n as i64 + 1 - (q as i64 + 1)));
        let be = CVec::from_fn(big_n, |q, _| at(-(q as i64 + 1)));
        let lu = k.clone().lu();
        let cg = lu.solve(&bg).ok_or(ExtendError::NotStrictToeplitz(min))?;
        let ce = lu.solve(&be).ok_or(ExtendError::NotStrictToeplitz(min))?;
        let pg = cg.dotc(&(&k * &cg)).re;
        let pe = ce.dotc(&(&k * &ce)).re;
        (ce.dotc(&(&k * &cg)), 1.0 - pg, 1.0 - pe)
    };
    Ok(zeta.value() * (ng2.max(0.0).sqrt() * ne2.max(0.0).sqrt()) + cross)
}

/// The `d = 1` function on `Ball(n)` carrying `seq` on powers of `a` and
/// vanishing elsewhere.
pub fn embed_toeplitz(seq: &[C64]) -> PdFunction {
    let n = seq.len() - 1;
    let mut f = PdFunction::delta(1, Domain::Ball(n));
    let mut w = Word::identity();
    let a = Word::parse("a").expect("literal");
    for &v in &seq[1..] {
        w = w.mul(&a);
        f.set(&w, CMat::from_element(1, 1, v)).expect("power of a lies in the ball");
    }
    f
}
