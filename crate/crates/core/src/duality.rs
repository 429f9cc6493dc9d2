//! Duality functions from symmetries and their exact verification.
//!
//! A duality matrix `D` has rows indexed by primal states and columns by
//! dual states; duality between generators `L` and `L_dual` reads
//! `L D = D L_dualᵀ`.

use num::{One, Signed, Zero};
use serde::Serialize;

use crate::algebra::Spin;
use crate::error::{Error, Result};
use crate::exact::{binomial, int, pow, ratio, rising_factorial, QMatrix, Rational};
use crate::lattice::Kernel;
use crate::models::{discrete_thermal_law, pair_moment, CTMCGenerator, StateSpace};
use crate::polyops::{bep_prefactor, DiffOperator, Polynomial};

/// Largest absolute entry of a residual and where it sits.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub max_abs: Rational,
    pub witness: Option<(usize, usize)>,
}

impl Residual {
    pub fn of(m: &QMatrix) -> Residual {
        let (max_abs, witness) = m.max_abs_entry();
        Residual { max_abs, witness }
    }

    pub fn zero() -> Residual {
        Residual { max_abs: Rational::zero(), witness: None }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs.is_zero()
    }
}

/// Invertible matrix with `Q L Q⁻¹ = Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConjugationQ {
    Diagonal(Vec<Rational>),
    General(QMatrix),
}

impl ConjugationQ {
    pub fn dim(&self) -> usize {
        match self {
            ConjugationQ::Diagonal(d) => d.len(),
            ConjugationQ::General(m) => m.rows(),
        }
    }

    pub fn matrix(&self) -> QMatrix {
        match self {
            ConjugationQ::Diagonal(d) => QMatrix::diagonal(d),
            ConjugationQ::General(m) => m.clone(),
        }
    }

    pub fn inverse(&self) -> Result<ConjugationQ> {
        match self {
            ConjugationQ::Diagonal(d) => {
                if d.iter().any(|x| x.is_zero()) {
                    return Err(Error::Singular);
                }
                Ok(ConjugationQ::Diagonal(d.iter().map(|x| x.recip()).collect()))
            }
            ConjugationQ::General(m) => Ok(ConjugationQ::General(m.inverse()?)),
        }
    }

    /// `Q · M`
    pub fn left_mul(&self, m: &QMatrix) -> QMatrix {
        match self {
            ConjugationQ::Diagonal(d) => QMatrix::from_fn(m.rows(), m.cols(), |r, c| &d[r] * &m[(r, c)]),
            ConjugationQ::General(q) => q * m,
        }
    }

    /// `M · Q`
    pub fn right_mul(&self, m: &QMatrix) -> QMatrix {
        match self {
            ConjugationQ::Diagonal(d) => QMatrix::from_fn(m.rows(), m.cols(), |r, c| &m[(r, c)] * &d[c]),
            ConjugationQ::General(q) => m * q,
        }
    }

    /// Residual of `Q L Q⁻¹ - Lᵀ`.
    pub fn conjugation_residual(&self, gen: &CTMCGenerator) -> Result<Residual> {
        if self.dim() != gen.len() {
            return Err(Error::DimensionMismatch { left: (self.dim(), self.dim()), right: (gen.len(), gen.len()) });
        }
        let l = gen.dense();
        let lhs = self.inverse()?.right_mul(&self.left_mul(&l));
        Ok(Residual::of(&(&lhs - &l.transpose())))
    }
}

/// Checks detailed balance of `gen` with respect to the state weights `mu`
/// and returns the diagonal conjugation built from them.
pub fn q_from_reversible_measure(
    gen: &CTMCGenerator,
    mu: impl Fn(&[u32]) -> Rational,
) -> Result<ConjugationQ> {
    let weights: Vec<Rational> = gen.space().states().iter().map(|s| mu(s)).collect();
    if let Some(pair) = detailed_balance_violation(gen, &weights) {
        return Err(Error::NotReversible(pair.0, pair.1));
    }
    if weights.iter().any(|w| !w.is_positive()) {
        return Err(Error::Singular);
    }
    Ok(ConjugationQ::Diagonal(weights))
}

/// First state pair violating `μ(a) L(a,b) = μ(b) L(b,a)`, if any.
pub fn detailed_balance_violation(gen: &CTMCGenerator, weights: &[Rational]) -> Option<(usize, usize)> {
    for a in 0..gen.len() {
        for (b, r) in gen.transitions(a) {
            let back = gen.rate(*b, a);
            if &weights[a] * r != &weights[*b] * back {
                return Some((a, *b));
            }
        }
    }
    None
}

/// Product over sites of a single-site weight; sinks, if present, are ignored.
pub fn product_measure(n_sites: usize, site: impl Fn(u32) -> Rational) -> impl Fn(&[u32]) -> Rational {
    move |config: &[u32]| config[..n_sites].iter().map(|&k| site(k)).product()
}

/// Which of the equivalent forms of the symmetry/duality correspondence to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `S` commutes with `L`; `D = S Q⁻¹` and back `S = D Q`.
    Left,
    /// `S` commutes with `Lᵀ`; `D = Q⁻¹ S` and back `S = Q D`.
    Right,
}

fn commutator_residual(a: &QMatrix, b: &QMatrix) -> Residual {
    Residual::of(&(&(a * b) - &(b * a)))
}

/// Self-duality function from a symmetry.
pub fn duality_from_symmetry(gen: &CTMCGenerator, s: &QMatrix, q: &ConjugationQ, side: Side) -> Result<QMatrix> {
    if s.dims() != (gen.len(), gen.len()) {
        return Err(Error::DimensionMismatch { left: s.dims(), right: (gen.len(), gen.len()) });
    }
    let l = gen.dense();
    let target = match side {
        Side::Left => l,
        Side::Right => l.transpose(),
    };
    let comm = commutator_residual(s, &target);
    if !comm.is_zero() {
        return Err(Error::NotASymmetry(comm.witness));
    }
    let conj = q.conjugation_residual(gen)?;
    if !conj.is_zero() {
        return Err(Error::NotAConjugation(conj.witness));
    }
    let q_inv = q.inverse()?;
    Ok(match side {
        Side::Left => q_inv.right_mul(s),
        Side::Right => q_inv.left_mul(s),
    })
}

/// Symmetry recovered from a self-duality function.
pub fn symmetry_from_duality(gen: &CTMCGenerator, d: &QMatrix, q: &ConjugationQ, side: Side) -> Result<QMatrix> {
    let l = gen.dense();
    let (s, target) = match side {
        Side::Left => (q.right_mul(d), l),
        Side::Right => (q.left_mul(d), l.transpose()),
    };
    let comm = commutator_residual(&s, &target);
    if !comm.is_zero() {
        return Err(Error::CommutatorNonzero(comm.witness));
    }
    Ok(s)
}

/// Residual of `L D - D Lᵀ`.
pub fn verify_selfduality(gen: &CTMCGenerator, d: &QMatrix) -> Result<Residual> {
    verify_duality(gen, gen, d)
}

/// Residual of `L D - D L_dualᵀ`.
pub fn verify_duality(gen: &CTMCGenerator, dual: &CTMCGenerator, d: &QMatrix) -> Result<Residual> {
    if d.dims() != (gen.len(), dual.len()) {
        return Err(Error::DimensionMismatch { left: d.dims(), right: (gen.len(), dual.len()) });
    }
    let lhs = gen.mul_right(d)?;
    let rhs = dual.mul_transpose_left(d)?;
    Ok(Residual::of(&(&lhs - &rhs)))
}

/// Duality between a diffusion and a jump process: for every dual state ξ,
/// `L D(·,ξ) = Σ_ξ' L_dual(ξ,ξ') D(·,ξ')` as polynomials. Returns the index
/// of the first failing dual state, if any.
pub fn verify_diffusion_duality(
    op: &DiffOperator,
    dual: &CTMCGenerator,
    family: impl Fn(&[u32]) -> Result<Polynomial>,
) -> Result<Option<usize>> {
    let polys: Vec<Polynomial> = dual.space().states().iter().map(|s| family(s)).collect::<Result<_>>()?;
    for (xi, d) in polys.iter().enumerate() {
        let lhs = op.apply(d);
        let mut rhs = Polynomial::zero(lhs.nvars());
        for (t, r) in dual.transitions(xi) {
            rhs = &rhs + &(&polys[*t] - d).scale(r);
        }
        if !(&lhs - &rhs).is_zero() {
            return Ok(Some(xi));
        }
    }
    Ok(None)
}

/// Single-site closed forms of the classical duality functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteDuality {
    /// C(η,ξ)/C(2j,ξ)
    Exclusion(Spin),
    /// η!/(η-ξ)! · Γ(m/2)/Γ(m/2+ξ); for m = 1 this is 2^ξ η!/((η-ξ)!(2ξ-1)!!)
    Inclusion { m: u32 },
    /// η!/(η-ξ)!
    Independent,
}

fn falling(eta: u32, xi: u32) -> Rational {
    if xi > eta {
        return Rational::zero();
    }
    (0..xi).map(|r| int((eta - r) as i64)).product()
}

impl SiteDuality {
    pub fn value(self, eta: u32, xi: u32) -> Rational {
        match self {
            SiteDuality::Exclusion(s) => {
                let num = binomial(eta, xi);
                let den = binomial(s.two_j(), xi);
                if den.is_zero() {
                    Rational::zero()
                } else {
                    Rational::new(num, den)
                }
            }
            SiteDuality::Inclusion { m } => falling(eta, xi) / rising_factorial(&ratio(m as i64, 2), xi),
            SiteDuality::Independent => falling(eta, xi),
        }
    }

    /// Polynomial in η with the same values at integer points.
    pub fn polynomial(self, nvars: usize, var: usize, xi: u32) -> Polynomial {
        let x = Polynomial::var(nvars, var);
        let ff = (0..xi).fold(Polynomial::one(nvars), |acc, r| {
            &acc * &(&x - &Polynomial::constant(nvars, int(r as i64)))
        });
        let scale = match self {
            SiteDuality::Exclusion(s) => {
                Rational::new(1.into(), crate::exact::factorial(xi) * binomial(s.two_j(), xi))
            }
            SiteDuality::Inclusion { m } => rising_factorial(&ratio(m as i64, 2), xi).recip(),
            SiteDuality::Independent => Rational::one(),
        };
        ff.scale(&scale)
    }

    /// `D(η,ξ) = ∏_i d(η_i, ξ_i)`, optionally times `∏ param_k^{ξ_sink_k}`
    /// for the sink slots that follow the sites in `xi`.
    pub fn matrix(self, primal: &StateSpace, dual: &StateSpace, sink_params: &[Rational]) -> QMatrix {
        let n_sites = primal.n_slots();
        QMatrix::from_fn(primal.len(), dual.len(), |r, c| {
            let eta = primal.state(r);
            let xi = dual.state(c);
            let mut v: Rational = (0..n_sites).map(|i| self.value(eta[i], xi[i])).product();
            if !v.is_zero() {
                for (k, p) in sink_params.iter().enumerate() {
                    v *= pow(p, xi[n_sites + k]);
                }
            }
            v
        })
    }
}

/// Residuals of `A C - C B` and `C̃ A - B C̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyReport {
    pub forward: Residual,
    pub backward: Residual,
}

impl ConjugacyReport {
    pub fn holds(&self) -> bool {
        self.forward.is_zero() && self.backward.is_zero()
    }
}

pub fn conjugacy_pair_check(a: &QMatrix, b: &QMatrix, c: &QMatrix, c_tilde: &QMatrix) -> Result<ConjugacyReport> {
    let forward = &a.try_mul(c)? - &c.try_mul(b)?;
    let backward = &c_tilde.try_mul(a)? - &b.try_mul(c_tilde)?;
    Ok(ConjugacyReport { forward: Residual::of(&forward), backward: Residual::of(&backward) })
}

/// `D = S C Q⁻¹` for a symmetry `S` of `A`, a conjugacy `A C = C B` and
/// `Q B Q⁻¹ = Bᵀ`; `D` is then a duality function between `A` and `B`.
pub fn duality_from_conjugacy(s: &QMatrix, c: &QMatrix, q: &ConjugationQ) -> Result<QMatrix> {
    Ok(q.inverse()?.right_mul(&s.try_mul(c)?))
}

/// Model families with reservoir-driven duality functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryModel {
    Sep2j(Spin),
    Bep { m: u32 },
}

/// Duality function for a boundary-driven model as a polynomial in the
/// primal site variables (occupations η_i or energies z_i): the bulk
/// factors times `∏ param_k^{ξ_sink_k}`.
pub fn boundary_duality_function(kernel: &Kernel, model: BoundaryModel, xi: &[u32]) -> Result<Polynomial> {
    let n = kernel.n_sites();
    let n_slots = n + kernel.n_sinks();
    if xi.len() > n_slots {
        return Err(Error::UnknownSink(xi.len() - 1));
    }
    let mut poly = Polynomial::one(n);
    for (i, &k) in xi.iter().enumerate().take(n) {
        let factor = match model {
            BoundaryModel::Sep2j(s) => SiteDuality::Exclusion(s).polynomial(n, i, k),
            BoundaryModel::Bep { m } => Polynomial::var(n, i).pow(k).scale(&bep_prefactor(m, k)),
        };
        poly = &poly * &factor;
    }
    for (k, b) in kernel.boundary().iter().enumerate() {
        let count = xi.get(n + k).copied().unwrap_or(0);
        if count == 0 {
            continue;
        }
        let param = b
            .param
            .clone()
            .ok_or_else(|| Error::MissingReservoirParam(kernel.names()[b.site].clone()))?;
        poly = poly.scale(&pow(&param, count));
    }
    Ok(poly)
}

/// Duality matrix of a boundary-driven exclusion process over its full
/// state space against an absorbing dual state space.
pub fn boundary_duality_matrix(kernel: &Kernel, j: Spin, primal: &StateSpace, dual: &StateSpace) -> Result<QMatrix> {
    let polys: Vec<Polynomial> = dual
        .states()
        .iter()
        .map(|xi| boundary_duality_function(kernel, BoundaryModel::Sep2j(j), xi))
        .collect::<Result<_>>()?;
    let points: Vec<Vec<Rational>> =
        primal.states().iter().map(|s| s.iter().map(|&k| int(k as i64)).collect()).collect();
    Ok(QMatrix::from_fn(primal.len(), dual.len(), |r, c| polys[c].eval(&points[r])))
}

/// Energy-side thermalization of bond (i,l): each monomial z_i^a z_l^b is
/// replaced by its conditional expectation given z_i + z_l.
pub fn thermalize_polynomial(p: &Polynomial, m: u32, i: usize, l: usize) -> Polynomial {
    let n = p.nvars().max(i + 1).max(l + 1);
    let sum = &Polynomial::var(n, i) + &Polynomial::var(n, l);
    let mut out = Polynomial::zero(n);
    for (exps, c) in p.terms() {
        let a = exps.get(i).copied().unwrap_or(0);
        let b = exps.get(l).copied().unwrap_or(0);
        let mut rest = exps.to_vec();
        rest.resize(n, 0);
        rest[i] = 0;
        rest[l] = 0;
        let other = Polynomial::monomial(n, &rest, c * pair_moment(m, a, b));
        out = &out + &(&other * &sum.pow(a + b));
    }
    out
}

/// Energy-side thermalized generator applied to `p`.
pub fn kmp_apply(kernel: &Kernel, m: u32, p: &Polynomial) -> Polynomial {
    kernel.bonds().fold(Polynomial::zero(p.nvars()), |acc, (i, l, rate)| {
        &acc + &(&thermalize_polynomial(p, m, i, l) - p).scale(rate)
    })
}

/// Particle-side thermalized generator: bond transitions with rates
/// p(i,l) γ̂_m(k) to the configuration with k particles at i.
pub fn dual_kmp_transitions(kernel: &Kernel, m: u32, xi: &[u32]) -> Vec<(Vec<u32>, Rational)> {
    let mut out = Vec::new();
    for (i, l, rate) in kernel.bonds() {
        let n = xi[i] + xi[l];
        for (k, w) in discrete_thermal_law(m, n).into_iter().enumerate() {
            let mut next = xi.to_vec();
            next[i] = k as u32;
            next[l] = n - k as u32;
            if next != xi && !w.is_zero() {
                out.push((next, rate * w));
            }
        }
    }
    out
}

/// Checks the thermalized duality identity for every dual configuration
/// with at most `max_total` particles. Returns the failing configurations.
pub fn verify_thermalized_duality(kernel: &Kernel, m: u32, max_total: u32) -> Result<Vec<Vec<u32>>> {
    let n = kernel.n_sites();
    let space = StateSpace::up_to_total(&vec![None; n], max_total);
    let d = |xi: &[u32]| -> Polynomial {
        xi.iter()
            .enumerate()
            .fold(Polynomial::one(n), |acc, (i, &k)| &acc * &Polynomial::var(n, i).pow(k).scale(&bep_prefactor(m, k)))
    };
    let mut failures = Vec::new();
    for xi in space.states() {
        let base = d(xi);
        let lhs = kmp_apply(kernel, m, &base);
        let rhs = dual_kmp_transitions(kernel, m, xi)
            .into_iter()
            .fold(Polynomial::zero(n), |acc, (next, r)| &acc + &(&d(&next) - &base).scale(&r));
        if !(&lhs - &rhs).is_zero() {
            failures.push(xi.clone());
        }
    }
    Ok(failures)
}

/// Structured outcome of one identity check, for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRecord {
    pub identity: String,
    pub sector: String,
    pub residual: String,
    pub witness: Option<String>,
    pub passed: bool,
}

impl VerificationRecord {
    pub fn from_residual(identity: &str, sector: &str, residual: &Residual) -> Self {
        VerificationRecord {
            identity: identity.to_string(),
            sector: sector.to_string(),
            residual: residual.max_abs.to_string(),
            witness: residual.witness.map(|(r, c)| format!("({r},{c})")),
            passed: residual.is_zero(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{exp_raising, su11_rep, su2_rep, total_operator};
    use crate::exact::{double_factorial_odd, factorial};
    use crate::models::{
        generator_up_to, ladder_projection, ladder_sep_generator, sep2j_generator, Bulk,
    };

    fn spin(two_j: u32) -> Spin {
        Spin::from_two_j(two_j).unwrap()
    }

    /// `S` on the product basis, restricted to the enumerated states.
    fn restricted(s: &QMatrix, space: &StateSpace, dim: usize) -> QMatrix {
        let idx: Vec<usize> = space.states().iter().map(|c| crate::models::product_index(c, dim)).collect();
        s.select(&idx, &idx)
    }

    fn binomial_q(gen: &CTMCGenerator, j: Spin) -> ConjugationQ {
        let n = gen.space().n_slots();
        q_from_reversible_measure(gen, product_measure(n, move |k| Rational::from_integer(binomial(j.two_j(), k))))
            .unwrap()
    }

    #[test]
    fn spin_half_two_site_classical_duality() {
        let k = Kernel::chain(2);
        let gen = generator_up_to(&k, Bulk::Exclusion(spin(1)), 2).unwrap();
        let q = q_from_reversible_measure(&gen, |_| Rational::one()).unwrap();
        assert_eq!(q.matrix(), QMatrix::identity(4));
        let s = exp_raising(&total_operator(&su2_rep(spin(1)).plus, 2)).unwrap();
        let d = duality_from_symmetry(&gen, &s, &q, Side::Right).unwrap();
        assert_eq!(d, s);
        // D(η,ξ) = ∏_{ξ_i = 1} η_i
        for (r, eta) in gen.space().states().iter().enumerate() {
            for (c, xi) in gen.space().states().iter().enumerate() {
                let v = (0..2).all(|i| xi[i] == 0 || eta[i] == 1);
                assert_eq!(d[(r, c)], int(v as i64));
            }
        }
        assert!(verify_selfduality(&gen, &d).unwrap().is_zero());
    }

    #[test]
    fn exclusion_duality_from_symmetry_matches_closed_form() {
        for two_j in 1..=4u32 {
            let j = spin(two_j);
            let k = Kernel::chain(2);
            let gen = generator_up_to(&k, Bulk::Exclusion(j), 2 * two_j).unwrap();
            let s_full = exp_raising(&total_operator(&su2_rep(j).plus, 2)).unwrap();
            let s = restricted(&s_full, gen.space(), two_j as usize + 1);
            let q = binomial_q(&gen, j);
            let d = duality_from_symmetry(&gen, &s, &q, Side::Right).unwrap();
            let closed = SiteDuality::Exclusion(j).matrix(gen.space(), gen.space(), &[]);
            assert_eq!(d, closed, "2j = {two_j}");
            assert!(verify_selfduality(&gen, &d).unwrap().is_zero());
            let back = symmetry_from_duality(&gen, &d, &q, Side::Right).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn exclusion_three_chain_all_sectors() {
        let k = Kernel::chain(3);
        for two_j in [2u32, 3] {
            let j = spin(two_j);
            let gen = generator_up_to(&k, Bulk::Exclusion(j), 3).unwrap();
            let d = SiteDuality::Exclusion(j).matrix(gen.space(), gen.space(), &[]);
            assert!(verify_selfduality(&gen, &d).unwrap().is_zero());
            let mut bad = d.clone();
            bad[(3, 1)] += int(1);
            let r = verify_selfduality(&gen, &bad).unwrap();
            assert!(!r.is_zero());
            assert!(r.witness.is_some());
        }
    }

    #[test]
    fn inclusion_duality_from_symmetry_matches_closed_form() {
        let k = Kernel::chain(2);
        let cutoff = 7;
        let gen = generator_up_to(&k, Bulk::Inclusion { m: 1 }, cutoff as u32 - 1).unwrap();
        // Q_i(η) = (2η-1)!!/(η! 2^η)
        let site = |e: u32| Rational::new(double_factorial_odd(e), factorial(e) * num::BigInt::from(2).pow(e));
        let q = q_from_reversible_measure(&gen, product_measure(2, site)).unwrap();
        let s_full = exp_raising(&total_operator(&su11_rep(1, cutoff).unwrap().plus, 2)).unwrap();
        let s = restricted(&s_full, gen.space(), cutoff);
        let d = duality_from_symmetry(&gen, &s, &q, Side::Right).unwrap();
        let closed = SiteDuality::Inclusion { m: 1 }.matrix(gen.space(), gen.space(), &[]);
        assert_eq!(d, closed);
        // 2^ξ η!/((η-ξ)!(2ξ-1)!!) at η = 3, ξ = 2
        assert_eq!(SiteDuality::Inclusion { m: 1 }.value(3, 2), int(8));
        assert!(verify_selfduality(&gen, &d).unwrap().is_zero());
    }

    #[test]
    fn independent_walkers_symmetry_from_duality() {
        let k = Kernel::chain(2);
        let gen = generator_up_to(&k, Bulk::Independent, 5).unwrap();
        let q = q_from_reversible_measure(&gen, product_measure(2, |e| Rational::new(1.into(), factorial(e))))
            .unwrap();
        let d = SiteDuality::Independent.matrix(gen.space(), gen.space(), &[]);
        assert!(verify_selfduality(&gen, &d).unwrap().is_zero());
        let s = symmetry_from_duality(&gen, &d, &q, Side::Right).unwrap();
        for (r, eta) in gen.space().states().iter().enumerate() {
            for (c, xi) in gen.space().states().iter().enumerate() {
                let expected: Rational = (0..2)
                    .map(|i| {
                        if xi[i] > eta[i] {
                            Rational::zero()
                        } else {
                            Rational::new(1.into(), factorial(eta[i] - xi[i]))
                        }
                    })
                    .product();
                assert_eq!(s[(r, c)], expected);
            }
        }
    }

    #[test]
    fn rejects_non_symmetry_and_non_reversible_measure() {
        let gen = generator_up_to(&Kernel::chain(2), Bulk::Exclusion(spin(2)), 4).unwrap();
        let q = binomial_q(&gen, spin(2));
        let mut s = QMatrix::identity(gen.len());
        s[(1, 0)] = int(1);
        assert!(matches!(duality_from_symmetry(&gen, &s, &q, Side::Right), Err(Error::NotASymmetry(_))));
        let wrong = ConjugationQ::Diagonal((0..gen.len()).map(|i| int(i as i64 + 1)).collect());
        let id = QMatrix::identity(gen.len());
        assert!(matches!(duality_from_symmetry(&gen, &id, &wrong, Side::Left), Err(Error::NotAConjugation(_))));
        let irw = generator_up_to(&Kernel::chain(2), Bulk::Independent, 3).unwrap();
        assert!(matches!(
            q_from_reversible_measure(&irw, product_measure(2, |e| int(e as i64 + 1))),
            Err(Error::NotReversible(_, _))
        ));
        assert!(matches!(
            symmetry_from_duality(&gen, &QMatrix::identity(gen.len()), &q, Side::Left),
            Err(Error::CommutatorNonzero(_))
        ));
    }

    #[test]
    fn ladder_conjugacy_gives_duality_with_lumped_chain() {
        let k = Kernel::chain(2);
        let levels = 2;
        let j = spin(levels as u32);
        for n in 0..=3u32 {
            let fine = ladder_sep_generator(&k, levels, n).unwrap();
            let coarse = sep2j_generator(&k, j, n).unwrap();
            let proj = ladder_projection(levels, fine.space(), coarse.space()).unwrap();
            let c = QMatrix::from_fn(fine.len(), coarse.len(), |r, col| int((proj[r] == col) as i64));
            let fibre: Vec<usize> = (0..coarse.len()).map(|b| proj.iter().filter(|&&p| p == b).count()).collect();
            let c_tilde =
                QMatrix::from_fn(coarse.len(), fine.len(), |b, r| if proj[r] == b { ratio(1, fibre[b] as i64) } else { Rational::zero() });
            let rep = conjugacy_pair_check(&fine.dense(), &coarse.dense(), &c, &c_tilde).unwrap();
            assert!(rep.holds(), "n = {n}");
            let random = QMatrix::from_fn(fine.len(), coarse.len(), |r, col| int(((r * 5 + col * 3) % 4) as i64));
            assert!(!conjugacy_pair_check(&fine.dense(), &coarse.dense(), &random, &c_tilde).unwrap().holds() || n == 0);
        }
    }

    #[test]
    fn boundary_functions() {
        let k = Kernel::chain(3).with_boundary(&[(0, ratio(1, 4)), (2, ratio(3, 4))]);
        let f = boundary_duality_function(&k, BoundaryModel::Sep2j(spin(1)), &[0, 0, 0, 2, 1]).unwrap();
        assert_eq!(f, Polynomial::constant(3, ratio(3, 64)));
        let one = boundary_duality_function(&k, BoundaryModel::Sep2j(spin(2)), &[0, 0, 0, 0, 0]).unwrap();
        assert_eq!(one, Polynomial::one(3));
        let kb = Kernel::chain(3).with_boundary(&[(0, int(3))]);
        let f = boundary_duality_function(&kb, BoundaryModel::Bep { m: 2 }, &[1, 0, 0, 1]).unwrap();
        assert_eq!(f, Polynomial::var(3, 0).scale(&ratio(3, 2)));
        assert!(matches!(
            boundary_duality_function(&kb, BoundaryModel::Bep { m: 2 }, &[0, 0, 0, 0, 1]),
            Err(Error::UnknownSink(_))
        ));
    }

    #[test]
    fn thermalized_duality_on_a_bond() {
        for m in 1..=3 {
            assert!(verify_thermalized_duality(&Kernel::chain(2), m, 3).unwrap().is_empty());
        }
    }
}
