//! Partial Hilbert spaces of a stage, Gram–Schmidt coordinate matrices and
//! the residual data that determines the new entry.

use thiserror::Error;

use crate::linalg::{c, CMat, CVec, C64};
use crate::pdcore::{Domain, PdError, PdFunction, StageIndexSets};

/// Residual norms below this are treated as a loss of strictness.
pub const DEGENERACY: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HilbertError {
    #[error("Gram matrix is not strictly positive: squared norm {0:e} at vector {1}")]
    NotStrict(f64, usize),
    #[error("degenerate residual: n_g = {0:e}, n_e = {1:e}")]
    Degenerate(f64, f64),
    #[error("not a partial-stage function: {0}")]
    NotPartial(String),
    #[error(transparent)]
    Pd(#[from] PdError),
}

/// Gram–Schmidt data for a Gram matrix `M` with `M[j,k] = ⟨y_j, y_k⟩`.
///
/// `z` holds the orthogonal vectors as columns in `y`-coordinates (unit
/// upper triangular). `g = z⁻¹` sends `y`-coordinates of a vector to its
/// `z`-coordinates, and `n = diag(‖z_i‖)·g` to orthonormal coordinates.
#[derive(Clone, Debug)]
pub struct Ortho {
    pub z: CMat,
    pub norms: Vec<f64>,
    pub g: CMat,
    pub n: CMat,
}

/// `⟨u, v⟩` for coefficient vectors in `y`-coordinates.
fn inner(m: &CMat, u: &CVec, v: &CVec) -> C64 {
    // Σ_{a,b} u_a conj(v_b) M[a,b]
    let mu = m.transpose() * u;
    v.dotc(&mu)
}

/// Modified Gram–Schmidt, re-orthogonalized once, in input order.
pub fn ortho_matrices(m: &CMat, tol: f64) -> Result<Ortho, HilbertError> {
    let n = m.nrows();
    let mut z = CMat::zeros(n, n);
    let mut cols: Vec<CVec> = Vec::with_capacity(n);
    let mut norms2: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = CVec::zeros(n);
        v[i] = c(1.0, 0.0);
        for _pass in 0..2 {
            for (l, zl) in cols.iter().enumerate() {
                let coef = inner(m, &v, zl) / norms2[l];
                v -= zl * coef;
            }
        }
        // Keep the structure exact: z_i has unit coefficient on y_i and
        // none on later vectors.
        v[i] = c(1.0, 0.0);
        for t in i + 1..n {
            v[t] = c(0.0, 0.0);
        }
        let nn = inner(m, &v, &v).re;
        if nn <= tol * tol {
            return Err(HilbertError::NotStrict(nn, i));
        }
        z.set_column(i, &v);
        cols.push(v);
        norms2.push(nn);
    }
    let g = z
        .clone()
        .solve_upper_triangular(&CMat::identity(n, n))
        .ok_or(HilbertError::NotStrict(0.0, 0))?;
    let norms: Vec<f64> = norms2.iter().map(|x| x.sqrt()).collect();
    let mut nmat = g.clone();
    for i in 0..n {
        for j in 0..n {
            nmat[(i, j)] *= norms[i];
        }
    }
    Ok(Ortho { z, norms, g, n: nmat })
}

/// The Gram structure of a stage over `Q`, with the `((g,j),(e,k))` pair
/// left undefined (stored as zero).
#[derive(Clone, Debug)]
pub struct PartialHilbertSpace {
    pub sets: StageIndexSets,
    pub gram: CMat,
}

impl PartialHilbertSpace {
    pub fn core_gram(&self) -> CMat {
        let p = self.sets.p.len();
        self.gram.view((0, 0), (p, p)).into_owned()
    }

    pub fn restricted_gram(&self, idx: &[usize]) -> CMat {
        crate::linalg::submatrix(&self.gram, idx)
    }

    /// `G[x, p]` for the given `Q` position `x` and every core index `p`.
    fn core_row(&self, x: usize) -> CVec {
        let p = self.sets.p.len();
        CVec::from_fn(p, |i, _| self.gram[(x, i)])
    }

    /// The full `Q` Gram after fixing the missing entry
    /// `⟨Θ(g)_j, Θ(e)_k⟩ = value`.
    pub fn completed_gram(&self, value: C64) -> CMat {
        let mut g = self.gram.clone();
        let (ig, ie) = (self.sets.ig(), self.sets.ie());
        g[(ig, ie)] = value;
        g[(ie, ig)] = value.conj();
        g
    }
}

fn stage_of(c: &PdFunction) -> Result<(crate::words::Word, usize, usize), HilbertError> {
    match c.domain() {
        Domain::Partial { g, j, k } => Ok((g.clone(), *j, *k)),
        other => Err(HilbertError::NotPartial(other.describe())),
    }
}

pub fn build_partial_space(c: &PdFunction) -> Result<PartialHilbertSpace, HilbertError> {
    let (g, j, k) = stage_of(c)?;
    let sets = StageIndexSets::new(&g, c.d(), j, k)?;
    build_with_sets(c, sets)
}

/// Assemble the Gram over an explicitly ordered `Q` (the last two entries
/// must be `(e,k)` then `(g,j)`).
pub fn build_with_sets(c: &PdFunction, sets: StageIndexSets) -> Result<PartialHilbertSpace, HilbertError> {
    let q = &sets.q;
    let n = q.len();
    let (ie, ig) = (sets.ie(), sets.ig());
    let mut gram = CMat::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            if (a, b) == (ie, ig) {
                continue;
            }
            let (h, jj) = &q[a];
            let (l, kk) = &q[b];
            let w = l.ldiv(h);
            let v = c.value(&w, *jj, *kk).ok_or_else(|| PdError::Missing(w.canonical()))?;
            gram[(a, b)] = v;
            gram[(b, a)] = v.conj();
        }
    }
    Ok(PartialHilbertSpace { sets, gram })
}

/// `n_g = ‖(I−p)Θ(g)_j‖`, `n_e = ‖(I−p)Θ(e)_k‖`, `cross = ⟨pΘ(g)_j, pΘ(e)_k⟩`
/// where `p` projects onto the core.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualData {
    pub n_g: f64,
    pub n_e: f64,
    pub cross: C64,
}

/// Projection of the two distinguished vectors onto the core, through an
/// orthonormal basis of the core built by Gram–Schmidt.
pub fn residual_data(space: &PartialHilbertSpace) -> Result<ResidualData, HilbertError> {
    let p = space.sets.p.len();
    let (bg, be) = (space.core_row(space.sets.ig()), space.core_row(space.sets.ie()));
    let (pg2, pe2, cross) = if p == 0 {
        (0.0, 0.0, c(0.0, 0.0))
    } else {
        let o = ortho_matrices(&space.core_gram(), DEGENERACY)?;
        // Orthonormal u_i has y-coordinates z_i / ‖z_i‖; ⟨x, u_i⟩ = Σ_k conj(U[k,i]) ⟨x, y_k⟩.
        let mut u = o.z.clone();
        for i in 0..p {
            for k in 0..p {
                u[(k, i)] /= c(o.norms[i], 0.0);
            }
        }
        let cg = u.adjoint() * &bg;
        let ce = u.adjoint() * &be;
        let cross: C64 = cg.iter().zip(ce.iter()).map(|(x, y)| x * y.conj()).sum();
        (cg.norm_squared(), ce.norm_squared(), cross)
    };
    let n_g = (1.0 - pg2).max(0.0).sqrt();
    let n_e = (1.0 - pe2).max(0.0).sqrt();
    if n_g <= DEGENERACY || n_e <= DEGENERACY {
        return Err(HilbertError::Degenerate(n_g, n_e));
    }
    Ok(ResidualData { n_g, n_e, cross })
}

/// `y`-coordinates over the core of `p x` for the `Q` position `x`: solves
/// `Kc = b` with `K = Gᵀ` on the core and `b_q = G[x, q]`.
pub fn projection_coefficients(space: &PartialHilbertSpace, x: usize) -> Result<CVec, HilbertError> {
    let p = space.sets.p.len();
    if p == 0 {
        return Ok(CVec::zeros(0));
    }
    let k = space.core_gram().transpose();
    let b = space.core_row(x);
    let chol = k.cholesky().ok_or(HilbertError::NotStrict(0.0, 0))?;
    Ok(chol.solve(&b))
}

/// The core rows of the Gram–Schmidt coordinate map over `Q`, with the core
/// orthogonalized first: row `i` sends `α` to the coefficient of `z_i` in
/// `Σ α_q Θ_q`. Needs no value of the undefined pair.
pub fn core_coordinate_matrix(space: &PartialHilbertSpace) -> Result<(CMat, Ortho), HilbertError> {
    let p = space.sets.p.len();
    let n = space.sets.q.len();
    let o = ortho_matrices(&space.core_gram(), DEGENERACY)?;
    let mut a = CMat::zeros(p, n);
    for i in 0..p {
        let nn = o.norms[i] * o.norms[i];
        for q in 0..n {
            // ⟨y_q, z_i⟩ = Σ_k conj(Z[k,i]) G[q,k]
            let mut s = c(0.0, 0.0);
            for k in 0..p {
                s += o.z[(k, i)].conj() * space.gram[(q, k)];
            }
            a[(i, q)] = s / nn;
        }
    }
    Ok((a, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs};
    use crate::pdcore::{check_pd, random_nspd, Idx, PdFunction, Verdict};
    use crate::words::Word;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(s: &str) -> Word {
        Word::parse(s).unwrap()
    }

    fn random_strict(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = CMat::from_fn(n + 1, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let mut m = f.adjoint() * f;
        for i in 0..n {
            m[(i, i)] += c(0.1, 0.0);
        }
        // Rescale to unit diagonal.
        let d: Vec<f64> = (0..n).map(|i| m[(i, i)].re.sqrt()).collect();
        CMat::from_fn(n, n, |i, j| m[(i, j)] / (d[i] * d[j]))
    }

    fn random_real_strict(n: usize, seed: u64) -> CMat {
        random_strict(n, seed).map(|z| c(z.re, 0.0))
    }

    /// A stage function: a random ball function cut down to `(g, j, k)`.
    pub(crate) fn stage_from_ball(f: &PdFunction, g: &Word, j: usize, k: usize) -> PdFunction {
        let d = f.d();
        let base = f.restrict_prefix_domain(Domain::Prefix(g.predecessor().unwrap())).unwrap();
        let gm = f.matrix(g).unwrap();
        let mut partial = Vec::new();
        for l in 0..d {
            for m in 0..d {
                if (l, m) < (j, k) {
                    partial.push(gm[(l, m)]);
                }
            }
        }
        let (_, _, entries, _) = base.into_parts();
        PdFunction::new(d, Domain::Partial { g: g.clone(), j, k }, entries, partial).unwrap()
    }

    #[test]
    fn identity_gram() {
        let o = ortho_matrices(&CMat::identity(4, 4), 1e-12).unwrap();
        assert_eq!(o.g, CMat::identity(4, 4));
        assert_eq!(o.n, CMat::identity(4, 4));
    }

    #[test]
    fn two_by_two_by_hand() {
        let cc = c(0.3, 0.4);
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), cc, cc.conj(), c(1.0, 0.0)]);
        let o = ortho_matrices(&m, 1e-12).unwrap();
        // z_2 = y_2 − c̄ y_1
        assert!((o.z[(0, 1)] - (-cc.conj())).norm() < 1e-15);
        assert!((o.norms[1].powi(2) - (1.0 - cc.norm_sqr())).abs() < 1e-15);
    }

    #[test]
    fn not_strict_rejected() {
        let m = CMat::from_element(2, 2, c(1.0, 0.0));
        assert!(matches!(ortho_matrices(&m, 1e-8), Err(HilbertError::NotStrict(_, 1))));
    }

    #[test]
    fn determinant_formulas() {
        for seed in 0..20u64 {
            for n1 in 2..=5usize {
                let m = random_real_strict(n1, seed * 7 + n1 as u64);
                let n = n1 - 1;
                let o = ortho_matrices(&m, 1e-12).unwrap();
                let mb = m.view((0, 0), (n, n)).into_owned();
                let x: Vec<C64> = (0..n).map(|i| m[(i, n)]).collect();
                let det_b = mb.determinant().re;
                let det_m = m.determinant().re;
                for kk in 0..n {
                    // (M•(ǩ) | x): drop column kk, append x.
                    let mut cols: Vec<usize> = (0..n).filter(|&t| t != kk).collect();
                    cols.push(usize::MAX);
                    let aug = CMat::from_fn(n, n, |i, t| if cols[t] == usize::MAX { x[i] } else { mb[(i, cols[t])] });
                    let sign = if (kk + 1 + n) % 2 == 0 { 1.0 } else { -1.0 };
                    let q = sign * aug.determinant().re / det_b;
                    let r = sign * aug.determinant().re / (det_b * det_m).sqrt();
                    // z_{n+1} = y_{n+1} − Σ q_k y_k, so the last column of z is (−q, 1).
                    assert!((o.z[(kk, n)].re + q).abs() < 1e-8, "q seed {seed} n {n1}");
                    // Orthonormal last vector z/‖z‖ has coordinates −r_k.
                    let u = o.z[(kk, n)].re / o.norms[n];
                    assert!((u + r).abs() < 1e-8, "r seed {seed} n {n1}");
                }
                assert!((o.norms[n].powi(2) - det_m / det_b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn complex_projection_coefficients() {
        // Complex case: z_{n+1} = y_{n+1} − Σ conj(q_k) y_k with q = M•⁻¹ x.
        for seed in 0..10u64 {
            let m = random_strict(4, seed);
            let n = 3;
            let o = ortho_matrices(&m, 1e-12).unwrap();
            let mb = m.view((0, 0), (n, n)).into_owned();
            let x = m.view((0, n), (n, 1)).into_owned();
            let q = mb.lu().solve(&x).unwrap();
            for kk in 0..n {
                assert!((o.z[(kk, n)] + q[kk].conj()).norm() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn orthonormal_coordinates(seed in 0u64..10_000, n in 1usize..7) {
            let m = random_strict(n, seed);
            let o = ortho_matrices(&m, 1e-12).unwrap();
            // ‖Σ α y‖² = α* conj(M) α must equal ‖N α‖².
            let k = m.map(|z| z.conj());
            prop_assert!(max_abs(&(o.n.adjoint() * &o.n - &k)) < 1e-10);
            prop_assert!(max_abs(&(&o.g * &o.z - CMat::identity(n, n))) < 1e-10);
            for i in 0..n {
                prop_assert_eq!(o.z[(i, i)], c(1.0, 0.0));
                for j in 0..i {
                    prop_assert_eq!(o.z[(i, j)], c(0.0, 0.0));
                }
            }
        }

        #[test]
        fn residuals_basis_independent(seed in 0u64..10_000, gi in 0usize..4, d in 1usize..3, jk in 0usize..4) {
            let g = [w("aa"), w("ab"), w("aB"), w("bA").canonical()][gi].clone();
            let (j, k) = (jk / 2 % d, jk % d);
            let f = random_nspd(2, d, seed, 0.2);
            let st = stage_from_ball(&f, &g, j, k);
            let sp = build_partial_space(&st).unwrap();
            let r1 = residual_data(&sp).unwrap();
            let mut sets = sp.sets.clone();
            sets.p.reverse();
            let mut q: Vec<Idx> = sets.p.clone();
            q.extend(sp.sets.q[sp.sets.p.len()..].iter().cloned());
            sets.q = q;
            let r2 = residual_data(&build_with_sets(&st, sets).unwrap()).unwrap();
            prop_assert!((r1.n_g - r2.n_g).abs() < 1e-10);
            prop_assert!((r1.n_e - r2.n_e).abs() < 1e-10);
            prop_assert!((r1.cross - r2.cross).norm() < 1e-10);
            // Same numbers from the normal equations.
            let cg = projection_coefficients(&sp, sp.sets.ig()).unwrap();
            let ce = projection_coefficients(&sp, sp.sets.ie()).unwrap();
            let kc = sp.core_gram().transpose();
            let cross = ce.dotc(&(&kc * &cg));
            prop_assert!((cross - r1.cross).norm() < 1e-10);
            // Restrictions to X_g and X_e are positive.
            prop_assert!(crate::linalg::min_eig(&sp.restricted_gram(&sp.sets.xg())) > 0.0);
            prop_assert!(crate::linalg::min_eig(&sp.restricted_gram(&sp.sets.xe())) > 0.0);
        }

        #[test]
        fn residuals_continuous(seed in 0u64..10_000) {
            let f = random_nspd(2, 1, seed, 0.1);
            let g = w("ab");
            let st = stage_from_ball(&f, &g, 0, 0);
            let r1 = residual_data(&build_partial_space(&st).unwrap()).unwrap();
            let mut st2 = st.clone();
            let a = w("a");
            let v = st2.value(&a, 0, 0).unwrap();
            st2.set_value(&a, 0, 0, v + c(1e-8, -1e-8)).unwrap();
            let r2 = residual_data(&build_partial_space(&st2).unwrap()).unwrap();
            prop_assert!((r1.n_g - r2.n_g).abs() < 1e-6);
            prop_assert!((r1.cross - r2.cross).norm() < 1e-6);
        }
    }

    #[test]
    fn stage_examples() {
        let delta = PdFunction::delta(1, Domain::Partial { g: w("aa"), j: 0, k: 0 });
        let sp = build_partial_space(&delta).unwrap();
        assert_eq!(sp.sets.p, vec![(w("a"), 0)]);
        assert_eq!(sp.gram, CMat::identity(3, 3));
        let r = residual_data(&sp).unwrap();
        assert_eq!((r.n_g, r.n_e, r.cross), (1.0, 1.0, c(0.0, 0.0)));

        let cc = c(0.3, 0.2);
        let mut f = PdFunction::delta(1, Domain::Partial { g: w("aa"), j: 0, k: 0 });
        f.set(&w("a"), CMat::from_element(1, 1, cc)).unwrap();
        let r = residual_data(&build_partial_space(&f).unwrap()).unwrap();
        let n = (1.0 - cc.norm_sqr()).sqrt();
        assert!((r.n_g - n).abs() < 1e-14 && (r.n_e - n).abs() < 1e-14);
        assert!((r.cross - cc * cc).norm() < 1e-14);

        let st = PdFunction::delta(2, Domain::Partial { g: w("aa"), j: 1, k: 0 });
        let sets = build_partial_space(&st).unwrap().sets;
        assert!(sets.p.contains(&(w("aa"), 0)));
        assert!(sets.p.iter().all(|(h, _)| !h.is_identity()));

        let empty = PdFunction::delta(1, Domain::Partial { g: w("a"), j: 0, k: 0 });
        let r = residual_data(&build_partial_space(&empty).unwrap()).unwrap();
        assert_eq!((r.n_g, r.n_e, r.cross), (1.0, 1.0, c(0.0, 0.0)));
        assert_eq!(check_pd(&empty, 1e-10).unwrap().verdict, Verdict::Strict);
    }

    #[test]
    fn core_coordinates_consistent() {
        let f = random_nspd(2, 2, 3, 0.2);
        let st = stage_from_ball(&f, &w("ab"), 1, 0);
        let sp = build_partial_space(&st).unwrap();
        let (a, o) = core_coordinate_matrix(&sp).unwrap();
        let p = sp.sets.p.len();
        let core = a.view((0, 0), (p, p)).into_owned();
        assert!(max_abs(&(core - &o.g)) < 1e-10);
    }
}
