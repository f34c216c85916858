//! Normalized matrix-valued positive definite functions on balls, prefix
//! sets `I_g` and partial-matrix stages: storage, Gram matrices, checking,
//! realization and random generation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{c, herm_eig, max_abs, CMat, CVec, C64};
use crate::words::{self, ball, ball_last, clique, maximal_cliques_containing, Word, WordError};

/// A basis index `(h, m)`: group element and coordinate in `0..d`.
pub type Idx = (Word, usize);

#[derive(Debug, Error)]
pub enum PdError {
    #[error("entry {0} is not specified")]
    Missing(Word),
    #[error("domains differ: {0} vs {1}")]
    DomainMismatch(String, String),
    #[error("not positive semidefinite: eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("invalid function: {0}")]
    Invalid(String),
    #[error(transparent)]
    Word(#[from] WordError),
}

/// Where a function is specified. Stage indices `j`, `k` are zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Domain {
    Ball(usize),
    Prefix(Word),
    Partial { g: Word, j: usize, k: usize },
}

impl Domain {
    /// The word `t` such that all matrices on `I_t` are fully specified.
    pub fn top(&self) -> Word {
        match self {
            Domain::Ball(r) => ball_last(*r),
            Domain::Prefix(g) => g.clone(),
            Domain::Partial { g, .. } => g.predecessor().unwrap_or_default(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Domain::Ball(r) => format!("ball({r})"),
            Domain::Prefix(g) => format!("prefix({g})"),
            Domain::Partial { g, j, k } => format!("partial({g},{},{})", j + 1, k + 1),
        }
    }
}

/// Canonical words `h ⪯ t`, i.e. the stored representatives of `I_t`.
pub fn canonical_upto(t: &Word) -> Vec<Word> {
    words::words_upto(t).into_iter().filter(|h| h.is_canonical()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdFunction {
    d: usize,
    domain: Domain,
    entries: BTreeMap<Word, CMat>,
    /// Specified entries of `C(g)` at a partial stage, lexicographic in `(l, m)`.
    partial: Vec<C64>,
}

impl PdFunction {
    /// Build from canonical representatives. Missing words are an error;
    /// `C(e)` must be the identity.
    pub fn new(d: usize, domain: Domain, entries: BTreeMap<Word, CMat>, partial: Vec<C64>) -> Result<Self, PdError> {
        if d == 0 {
            return Err(PdError::Invalid("dimension must be positive".into()));
        }
        let f = PdFunction { d, domain, entries, partial };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<(), PdError> {
        let d = self.d;
        let want = canonical_upto(&self.domain.top());
        for w in &want {
            let m = self.entries.get(w).ok_or_else(|| PdError::Missing(w.clone()))?;
            if m.nrows() != d || m.ncols() != d {
                return Err(PdError::Invalid(format!("entry {w} is not {d}x{d}")));
            }
        }
        if self.entries.len() != want.len() {
            let extra = self.entries.keys().find(|w| !want.contains(w)).cloned().unwrap_or_default();
            return Err(PdError::Invalid(format!("entry {extra} is outside the domain")));
        }
        if max_abs(&(&self.entries[&Word::identity()] - CMat::identity(d, d))) > 1e-12 {
            return Err(PdError::Invalid("C(e) is not the identity".into()));
        }
        if let Domain::Partial { g, j, k } = &self.domain {
            if g.is_identity() || !g.is_canonical() {
                return Err(PdError::Invalid(format!("stage word {g} is not a canonical non-identity word")));
            }
            if *j >= d || *k >= d {
                return Err(PdError::Invalid("stage index out of range".into()));
            }
            if self.partial.len() != j * d + k {
                return Err(PdError::Invalid(format!("partial row has {} entries, expected {}", self.partial.len(), j * d + k)));
            }
        } else if !self.partial.is_empty() {
            return Err(PdError::Invalid("partial entries outside a partial stage".into()));
        }
        Ok(())
    }

    /// The function `Δ`: identity at `e`, zero elsewhere.
    pub fn delta(d: usize, domain: Domain) -> PdFunction {
        let mut entries = BTreeMap::new();
        for w in canonical_upto(&domain.top()) {
            let m = if w.is_identity() { CMat::identity(d, d) } else { CMat::zeros(d, d) };
            entries.insert(w, m);
        }
        let partial = match &domain {
            Domain::Partial { j, k, .. } => vec![c(0.0, 0.0); j * d + k],
            _ => Vec::new(),
        };
        PdFunction { d, domain, entries, partial }
    }

    /// Build a `d = 1` function from scalar values on canonical words.
    pub fn scalar(domain: Domain, values: &[(&str, C64)]) -> Result<PdFunction, PdError> {
        let mut f = PdFunction::delta(1, domain);
        for (s, v) in values {
            let w = Word::parse(s)?;
            f.set(&w, CMat::from_element(1, 1, *v))?;
        }
        Ok(f)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn entries(&self) -> &BTreeMap<Word, CMat> {
        &self.entries
    }

    pub fn partial_entries(&self) -> &[C64] {
        &self.partial
    }

    /// Whether `C(w)` is fully specified.
    pub fn has_matrix(&self, w: &Word) -> bool {
        self.entries.contains_key(&w.canonical())
    }

    /// `C(w)`, mirroring `C(w⁻¹)*` for non-canonical words.
    pub fn matrix(&self, w: &Word) -> Option<CMat> {
        if w.is_canonical() {
            self.entries.get(w).cloned()
        } else {
            self.entries.get(&w.inverse()).map(|m| m.adjoint())
        }
    }

    /// `C(w)_{j,k}`, including partially specified stage entries.
    pub fn value(&self, w: &Word, j: usize, k: usize) -> Option<C64> {
        if w.is_canonical() {
            if let Some(m) = self.entries.get(w) {
                return Some(m[(j, k)]);
            }
        } else if let Some(m) = self.entries.get(&w.inverse()) {
            return Some(m[(k, j)].conj());
        }
        if let Domain::Partial { g, .. } = &self.domain {
            let d = self.d;
            if w == g {
                return self.partial.get(j * d + k).copied();
            }
            if *w == g.inverse() {
                return self.partial.get(k * d + j).map(|z| z.conj());
            }
        }
        None
    }

    /// Overwrite `C(w)` (and implicitly `C(w⁻¹)`).
    pub fn set(&mut self, w: &Word, m: CMat) -> Result<(), PdError> {
        if w.is_identity() {
            return Err(PdError::Invalid("C(e) is fixed to the identity".into()));
        }
        let (key, m) = if w.is_canonical() { (w.clone(), m) } else { (w.inverse(), m.adjoint()) };
        match self.entries.get_mut(&key) {
            Some(slot) => {
                *slot = m;
                Ok(())
            }
            None => Err(PdError::Missing(key)),
        }
    }

    /// Overwrite the single entry `C(w)_{j,k}` inside the full domain.
    pub fn set_value(&mut self, w: &Word, j: usize, k: usize, v: C64) -> Result<(), PdError> {
        let mut m = self.matrix(w).ok_or_else(|| PdError::Missing(w.clone()))?;
        m[(j, k)] = v;
        self.set(w, m)
    }

    pub(crate) fn from_parts_unchecked(d: usize, domain: Domain, entries: BTreeMap<Word, CMat>, partial: Vec<C64>) -> PdFunction {
        PdFunction { d, domain, entries, partial }
    }

    pub(crate) fn into_parts(self) -> (usize, Domain, BTreeMap<Word, CMat>, Vec<C64>) {
        (self.d, self.domain, self.entries, self.partial)
    }

    /// `(1 − s)·self + s·other` entrywise; domains must agree.
    pub fn convex(&self, other: &PdFunction, s: f64) -> Result<PdFunction, PdError> {
        self.same_domain(other)?;
        let mut out = self.clone();
        for (w, m) in out.entries.iter_mut() {
            *m = &*m * c(1.0 - s, 0.0) + &other.entries[w] * c(s, 0.0);
        }
        for (p, q) in out.partial.iter_mut().zip(&other.partial) {
            *p = *p * (1.0 - s) + *q * s;
        }
        Ok(out)
    }

    /// `(1 − s)·self + s·Δ`.
    pub fn mix_delta(&self, s: f64) -> PdFunction {
        let delta = PdFunction::delta(self.d, self.domain.clone());
        self.convex(&delta, s).expect("same domain")
    }

    fn same_domain(&self, other: &PdFunction) -> Result<(), PdError> {
        if self.d != other.d || self.domain != other.domain {
            return Err(PdError::DomainMismatch(
                format!("d={} {}", self.d, self.domain.describe()),
                format!("d={} {}", other.d, other.domain.describe()),
            ));
        }
        Ok(())
    }

    /// Restrict a ball or prefix function to `Ball(r)`.
    pub fn restrict_ball(&self, r: usize) -> Result<PdFunction, PdError> {
        self.restrict_prefix_domain(Domain::Ball(r))
    }

    /// Restrict to a smaller ball or prefix domain.
    pub fn restrict_prefix_domain(&self, domain: Domain) -> Result<PdFunction, PdError> {
        if matches!(domain, Domain::Partial { .. }) {
            return Err(PdError::Invalid("cannot restrict to a partial stage".into()));
        }
        let mut entries = BTreeMap::new();
        for w in canonical_upto(&domain.top()) {
            let m = self.matrix(&w).ok_or_else(|| PdError::Missing(w.clone()))?;
            entries.insert(w, m);
        }
        Ok(PdFunction { d: self.d, domain, entries, partial: Vec::new() })
    }
}

/// Gram matrix over an index list: `G[(h,j),(ℓ,k)] = C(ℓ⁻¹h)_{j,k}`.
pub fn gram_indices(c: &PdFunction, idx: &[Idx]) -> Result<CMat, PdError> {
    let n = idx.len();
    let mut g = CMat::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let (h, j) = &idx[a];
            let (l, k) = &idx[b];
            let w = l.ldiv(h);
            let v = c.value(&w, *j, *k).ok_or_else(|| PdError::Missing(w.canonical()))?;
            g[(a, b)] = v;
            g[(b, a)] = v.conj();
        }
    }
    Ok(g)
}

pub fn block_indices(e: &[Word], d: usize) -> Vec<Idx> {
    e.iter().flat_map(|h| (0..d).map(move |m| (h.clone(), m))).collect()
}

/// Gram matrix over `E × [d]`.
pub fn gram(c: &PdFunction, e: &[Word]) -> Result<CMat, PdError> {
    gram_indices(c, &block_indices(e, c.d()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Strict,
    Semidefinite,
    NotPd,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Strict => "strict",
            Verdict::Semidefinite => "semidefinite",
            Verdict::NotPd => "not_pd",
        }
    }
}

/// Outcome of a positive definiteness check. `witness` holds the index set
/// with the smallest eigenvalue and a unit vector `v` with `v* G v` equal to
/// that eigenvalue (negative for `NotPd`).
#[derive(Clone, Debug)]
pub struct PdReport {
    pub verdict: Verdict,
    pub min_eigenvalue: f64,
    pub checked: usize,
    pub witness: Option<(Vec<Idx>, CVec)>,
}

fn verdict_of(min: f64, tol: f64) -> Verdict {
    if min > tol {
        Verdict::Strict
    } else if min >= -tol {
        Verdict::Semidefinite
    } else {
        Verdict::NotPd
    }
}

struct Tracker {
    min: f64,
    checked: usize,
    witness: Option<(Vec<Idx>, CVec)>,
}

impl Tracker {
    fn new() -> Self {
        Tracker { min: f64::INFINITY, checked: 0, witness: None }
    }

    fn check(&mut self, c: &PdFunction, idx: Vec<Idx>) -> Result<(), PdError> {
        let g = gram_indices(c, &idx)?;
        let (vals, vecs) = herm_eig(&g);
        self.checked += 1;
        if let Some(&v) = vals.first() {
            if v < self.min {
                self.min = v;
                self.witness = Some((idx, vecs.column(0).into_owned()));
            }
        }
        Ok(())
    }

    fn finish(self, tol: f64) -> PdReport {
        PdReport { verdict: verdict_of(self.min, tol), min_eigenvalue: self.min, checked: self.checked, witness: self.witness }
    }
}

/// The index sets of a partial stage: the core `P` and
/// `Q = P ++ [(e,k), (g,j)]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageIndexSets {
    pub g: Word,
    pub j: usize,
    pub k: usize,
    pub d: usize,
    pub p: Vec<Idx>,
    pub q: Vec<Idx>,
}

impl StageIndexSets {
    pub fn new(g: &Word, d: usize, j: usize, k: usize) -> Result<Self, PdError> {
        let kg = clique(g)?.vertices;
        let e = Word::identity();
        let mut p: Vec<Idx> = Vec::new();
        for h in kg.iter().filter(|h| !h.is_identity() && *h != g) {
            for m in 0..d {
                p.push((h.clone(), m));
            }
        }
        for m in 0..j {
            p.push((g.clone(), m));
        }
        for m in 0..k {
            p.push((e.clone(), m));
        }
        let mut q = p.clone();
        q.push((e, k));
        q.push((g.clone(), j));
        Ok(StageIndexSets { g: g.clone(), j, k, d, p, q })
    }

    /// Position of `(e,k)` in `Q`.
    pub fn ie(&self) -> usize {
        self.q.len() - 2
    }

    /// Position of `(g,j)` in `Q`.
    pub fn ig(&self) -> usize {
        self.q.len() - 1
    }

    /// Positions in `Q` spanning `X_g` (everything but `(e,k)`).
    pub fn xg(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.p.len()).collect();
        v.push(self.ig());
        v
    }

    /// Positions in `Q` spanning `X_e` (everything but `(g,j)`).
    pub fn xe(&self) -> Vec<usize> {
        (0..=self.ie()).collect()
    }

    /// Core plus `(g,m)` for `m < j` plus every `(e,m)`: the other maximal
    /// fully specified block of the stage.
    pub fn wide_e(&self) -> Vec<Idx> {
        let mut v: Vec<Idx> = self.p.iter().filter(|(h, _)| !h.is_identity()).cloned().collect();
        for m in 0..self.d {
            v.push((Word::identity(), m));
        }
        v
    }
}

/// Clique-mode check: Gram matrices of `K_h` for canonical `h ⪯ top`, plus
/// for a partial stage the two maximal fully specified blocks over `K_g`.
pub fn check_pd(c: &PdFunction, tol: f64) -> Result<PdReport, PdError> {
    let mut t = Tracker::new();
    let d = c.d();
    let top = c.domain().top();
    if top.is_identity() {
        t.check(c, block_indices(&[Word::identity()], d))?;
    }
    for h in canonical_upto(&top).into_iter().skip(1) {
        let k = clique(&h)?.vertices;
        t.check(c, block_indices(&k, d))?;
    }
    if let Domain::Partial { g, j, k } = c.domain() {
        let s = StageIndexSets::new(g, d, *j, *k)?;
        let xg: Vec<Idx> = s.xg().into_iter().map(|i| s.q[i].clone()).collect();
        t.check(c, xg)?;
        t.check(c, s.wide_e())?;
    }
    Ok(t.finish(tol))
}

/// Brute-force check: every maximal clique through `e` of the Cayley graph
/// at the domain's level, found by Bron–Kerbosch without using `K_h`; for a
/// partial stage, additionally every fully specified subset of `K_g × [d]`.
pub fn check_pd_brute(c: &PdFunction, tol: f64) -> Result<PdReport, PdError> {
    let mut t = Tracker::new();
    let d = c.d();
    let top = c.domain().top();
    let domain: Vec<Word> = words::index_set(&top).members.into_iter().collect();
    for cl in maximal_cliques_containing(&top, &domain, &[Word::identity()]) {
        t.check(c, block_indices(&cl, d))?;
    }
    if let Domain::Partial { g, .. } = c.domain() {
        let kg = clique(g)?.vertices;
        let all = block_indices(&kg, d);
        let n = all.len();
        if n > 20 {
            return Err(PdError::Invalid(format!("brute-force stage check over {n} indices is too large")));
        }
        for mask in 1u32..(1u32 << n) {
            let idx: Vec<Idx> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| all[i].clone()).collect();
            match gram_indices(c, &idx) {
                Ok(_) => t.check(c, idx)?,
                Err(PdError::Missing(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(t.finish(tol))
}

/// An explicit realization: vectors `Φ(h)_j` as columns of `factors`, with
/// `⟨u, v⟩ = v* u`, so that `⟨Φ(h)_j, Φ(ℓ)_k⟩ = C(ℓ⁻¹h)_{j,k}`.
#[derive(Clone, Debug)]
pub struct Realization {
    pub index: Vec<Idx>,
    pub gram: CMat,
    pub factors: CMat,
}

impl Realization {
    pub fn inner(&self, a: usize, b: usize) -> C64 {
        self.factors.column(b).dotc(&self.factors.column(a))
    }

    /// `max |⟨Φ_a, Φ_b⟩ − G[a,b]|`.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.index.len();
        let mut err: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                err = err.max((self.inner(a, b) - self.gram[(a, b)]).norm());
            }
        }
        err
    }
}

/// Factor the Gram matrix of `E × [d]`. Eigenvalues in `[−tol, 0)` are
/// clipped to zero; anything more negative is an error.
pub fn realize(c: &PdFunction, e: &[Word], tol: f64) -> Result<Realization, PdError> {
    let index = block_indices(e, c.d());
    let gram = gram_indices(c, &index)?;
    // ⟨Φ_a, Φ_b⟩ = (F* F)[b, a], so we need F* F = Gᵀ = conj(G).
    let target = gram.map(|z| z.conj());
    let (vals, vecs) = herm_eig(&target);
    if let Some(&v) = vals.first() {
        if v < -tol {
            return Err(PdError::NotPositive(v));
        }
    }
    let n = vals.len();
    let mut factors = vecs.adjoint();
    for i in 0..n {
        let s = vals[i].max(0.0).sqrt();
        for j in 0..n {
            factors[(i, j)] *= s;
        }
    }
    Ok(Realization { index, gram, factors })
}

/// Realize a `Ball(2r)` function over `B_r × [d]`.
pub fn realize_ball(c: &PdFunction, tol: f64) -> Result<Realization, PdError> {
    match c.domain() {
        Domain::Ball(r2) => realize(c, &ball(r2 / 2), tol),
        other => Err(PdError::Invalid(format!("realize_ball needs a ball domain, got {}", other.describe()))),
    }
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let z = CMat::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// A random strict function on `Ball(r)`: `(1 − margin)·C₀ + margin·Δ` with
/// `C₀(g)_{j,k} = ξ_k* U_g ξ_j` for a random unitary representation `U` of
/// dimension `d + 2` and a random orthonormal frame `ξ`. Every Gram matrix
/// is `(1 − margin)·(PSD) + margin·I`.
pub fn random_nspd(r: usize, d: usize, seed: u64, margin: f64) -> PdFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d + 2;
    let ua = random_unitary(n, &mut rng);
    let ub = random_unitary(n, &mut rng);
    let frame = random_unitary(n, &mut rng).columns(0, d).into_owned();
    let mut entries = BTreeMap::new();
    for w in ball(r).into_iter().filter(|w| w.is_canonical()) {
        let mut u = CMat::identity(n, n);
        for x in w.letters() {
            let gmat = match x {
                words::Gen::A => ua.clone(),
                words::Gen::B => ub.clone(),
                words::Gen::AInv => ua.adjoint(),
                words::Gen::BInv => ub.adjoint(),
            };
            u *= gmat;
        }
        let m = if w.is_identity() {
            CMat::identity(d, d)
        } else {
            // (ξ* U ξ)ᵀ has entry (j,k) = ξ_k* U ξ_j.
            (frame.adjoint() * &u * &frame).transpose() * c(1.0 - margin, 0.0)
        };
        entries.insert(w, m);
    }
    PdFunction { d, domain: Domain::Ball(r), entries, partial: Vec::new() }
}

/// `‖C − D‖₁` over the full symmetric domain: both `g` and `g⁻¹` count for
/// fully specified matrices, partial stage entries count once.
pub fn l1_distance(a: &PdFunction, b: &PdFunction) -> Result<f64, PdError> {
    a.same_domain(b)?;
    let mut s = 0.0;
    for (w, m) in &a.entries {
        let diff: f64 = (m - &b.entries[w]).iter().map(|z| z.norm()).sum();
        s += if w.is_identity() { diff } else { 2.0 * diff };
    }
    for (p, q) in a.partial.iter().zip(&b.partial) {
        s += (p - q).norm();
    }
    Ok(s)
}

/// A `d × d` matrix from row-major complex values.
pub fn cmat(d: usize, vals: &[C64]) -> CMat {
    DMatrix::from_row_slice(d, d, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        Word::parse(s).unwrap()
    }

    #[test]
    fn gram_examples() {
        let delta = PdFunction::delta(2, Domain::Ball(2));
        let g = gram(&delta, &clique(&w("aa")).unwrap().vertices).unwrap();
        assert_eq!(g, CMat::identity(6, 6));

        let cf = PdFunction::scalar(Domain::Ball(1), &[("a", c(0.3, 0.4))]).unwrap();
        let e = [Word::identity(), w("a")];
        let g = gram(&cf, &e).unwrap();
        assert_eq!(g[(0, 1)], c(0.3, -0.4));
        assert_eq!(g[(1, 0)], c(0.3, 0.4));
        match gram(&cf, &clique(&w("aa")).unwrap().vertices) {
            Err(PdError::Missing(m)) => assert_eq!(m, w("aa")),
            other => panic!("expected missing aa, got {other:?}"),
        }
    }

    #[test]
    fn check_examples() {
        let delta = PdFunction::delta(1, Domain::Ball(2));
        assert_eq!(check_pd(&delta, 1e-10).unwrap().verdict, Verdict::Strict);

        let ones = PdFunction::scalar(Domain::Ball(1), &[("a", c(1.0, 0.0)), ("b", c(1.0, 0.0))]).unwrap();
        assert_eq!(check_pd(&ones, 1e-10).unwrap().verdict, Verdict::Semidefinite);

        let bad = PdFunction::scalar(Domain::Ball(1), &[("a", c(2.0, 0.0))]).unwrap();
        let rep = check_pd(&bad, 1e-10).unwrap();
        assert_eq!(rep.verdict, Verdict::NotPd);
        assert!((rep.min_eigenvalue + 1.0).abs() < 1e-12);
        let (idx, v) = rep.witness.unwrap();
        let words: Vec<Word> = idx.iter().map(|x| x.0.clone()).collect();
        assert_eq!(words, vec![Word::identity(), w("a")]);
        let g = gram_indices(&bad, &idx).unwrap();
        assert!(v.dotc(&(&g * &v)).re < 0.0);
    }

    #[test]
    fn realize_examples() {
        let delta = PdFunction::delta(1, Domain::Ball(2));
        let r = realize_ball(&delta, 1e-10).unwrap();
        assert!(r.reconstruction_error() < 1e-12);
        let mut ones = PdFunction::delta(1, Domain::Ball(2));
        for g in ball(2).into_iter().skip(1) {
            ones.set(&g, CMat::from_element(1, 1, c(1.0, 0.0))).unwrap();
        }
        let r = realize_ball(&ones, 1e-10).unwrap();
        assert!(r.reconstruction_error() < 1e-10);
        let a = r.factors.column(0).into_owned();
        for j in 1..r.index.len() {
            assert!((r.factors.column(j) - &a).norm() < 1e-7);
        }
        let bad = PdFunction::scalar(Domain::Ball(1), &[("a", c(2.0, 0.0))]).unwrap();
        assert!(realize(&bad, &[Word::identity(), w("a")], 1e-10).is_err());
    }

    #[test]
    fn random_examples() {
        let m1 = random_nspd(2, 2, 7, 1.0);
        assert_eq!(m1, PdFunction::delta(2, Domain::Ball(2)));
        let a = random_nspd(2, 2, 11, 0.3);
        let b = random_nspd(2, 2, 11, 0.3);
        assert_eq!(a, b);
        assert_ne!(a, random_nspd(2, 2, 12, 0.3));
        let rep = check_pd(&a, 1e-10).unwrap();
        assert_eq!(rep.verdict, Verdict::Strict);
        assert!(rep.min_eigenvalue >= 0.15);
    }

    #[test]
    fn l1_examples() {
        let a = random_nspd(1, 2, 3, 0.2);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        let x = PdFunction::delta(1, Domain::Ball(0));
        assert_eq!(l1_distance(&x, &x.clone()).unwrap(), 0.0);
        let p = PdFunction::scalar(Domain::Ball(1), &[("a", c(0.1, 0.0))]).unwrap();
        let q = PdFunction::scalar(Domain::Ball(1), &[("a", c(0.2, 0.0))]).unwrap();
        assert!((l1_distance(&p, &q).unwrap() - 0.2).abs() < 1e-15);
        assert!(l1_distance(&p, &a).is_err());
    }

    #[test]
    fn hermitian_mirror() {
        let a = random_nspd(2, 2, 5, 0.2);
        for g in ball(2) {
            let m = a.matrix(&g).unwrap();
            let mi = a.matrix(&g.inverse()).unwrap();
            assert!(max_abs(&(m.adjoint() - mi)) < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn realize_round_trip(seed in 0u64..1000, shape in 0usize..3) {
            let (r, d) = [(1, 1), (1, 2), (2, 1)][shape];
            let f = random_nspd(2 * r, d, seed, 0.1);
            let re = realize_ball(&f, 1e-10).unwrap();
            let scale = max_abs(&re.gram);
            prop_assert!(re.reconstruction_error() <= 1e-10 * scale);
        }

        #[test]
        fn mixing_never_degrades(seed in 0u64..1000, s in 0.01f64..1.0) {
            let f = random_nspd(2, 1, seed, 0.05);
            let before = check_pd(&f, 1e-10).unwrap();
            let after = check_pd(&f.mix_delta(s), 1e-10).unwrap();
            prop_assert_eq!(after.verdict, Verdict::Strict);
            prop_assert!(after.min_eigenvalue >= before.min_eigenvalue - 1e-12);
        }

        #[test]
        fn clique_mode_matches_brute(seed in 0u64..1000, r in 1usize..3, d in 1usize..3, t in -0.5f64..0.3) {
            // Push some instances past the boundary so all verdicts occur.
            let f = random_nspd(r, d, seed, 0.0);
            let f = f.mix_delta(t);
            let a = check_pd(&f, 1e-10).unwrap();
            let b = check_pd_brute(&f, 1e-10).unwrap();
            prop_assert_eq!(a.verdict, b.verdict);
            prop_assert!((a.min_eigenvalue - b.min_eigenvalue).abs() < 1e-9);
        }
    }
}
