//! Exact multivariate polynomials over the rationals and linear differential
//! operators with polynomial coefficients.
//!
//! Exponent vectors are stored with trailing zeros trimmed, so a monomial
//! has one canonical key regardless of the declared variable count.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num::{One, Zero};

use crate::algebra::OperatorTriple;
use crate::error::{Error, Result};
use crate::exact::{double_factorial_odd, int, pow, ratio, rising_factorial, Rational};

fn trimmed(mut exps: Vec<u32>) -> Vec<u32> {
    while exps.last() == Some(&0) {
        exps.pop();
    }
    exps
}

fn exp_at(exps: &[u32], var: usize) -> u32 {
    exps.get(var).copied().unwrap_or(0)
}

#[derive(Clone, PartialEq, Eq, Default)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Rational>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, Rational::one())
    }

    pub fn constant(nvars: usize, c: Rational) -> Self {
        Self::monomial(nvars, &[], c)
    }

    /// The coordinate `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        let mut exps = vec![0; var + 1];
        exps[var] = 1;
        Self::monomial(nvars.max(var + 1), &exps, Rational::one())
    }

    pub fn monomial(nvars: usize, exps: &[u32], coeff: Rational) -> Self {
        let mut p = Polynomial::zero(nvars.max(trimmed(exps.to_vec()).len()));
        p.add_term(exps.to_vec(), coeff);
        p
    }

    fn add_term(&mut self, exps: Vec<u32>, coeff: Rational) {
        if coeff.is_zero() {
            return;
        }
        let key = trimmed(exps);
        self.nvars = self.nvars.max(key.len());
        let entry = self.terms.entry(key.clone()).or_insert_with(Rational::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// The same polynomial viewed in a larger variable universe.
    pub fn with_nvars(mut self, nvars: usize) -> Self {
        self.nvars = self.nvars.max(nvars);
        self
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &Rational)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exps: &[u32]) -> Rational {
        self.terms.get(&trimmed(exps.to_vec())).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|k| k.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// Highest variable index carrying a nonzero exponent, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.terms.keys().filter_map(|k| k.len().checked_sub(1)).max()
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let mut out = Polynomial::zero(self.nvars);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * c);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Polynomial::one(self.nvars), |acc, _| &acc * self)
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Polynomial::zero(self.nvars);
        for (k, v) in &self.terms {
            let e = exp_at(k, var);
            if e == 0 {
                continue;
            }
            let mut exps = k.clone();
            exps[var] -= 1;
            out.add_term(exps, v * int(e as i64));
        }
        out
    }

    /// Mixed partial derivative with orders given per variable.
    pub fn derivative_multi(&self, orders: &[u32]) -> Self {
        let mut out = self.clone();
        for (var, &o) in orders.iter().enumerate() {
            for _ in 0..o {
                out = out.derivative(var);
            }
        }
        out
    }

    pub fn eval(&self, point: &[Rational]) -> Rational {
        self.terms
            .iter()
            .map(|(k, v)| {
                k.iter().enumerate().fold(v.clone(), |acc, (i, &e)| acc * pow(&point[i], e))
            })
            .sum()
    }

    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, v)| {
                k.iter()
                    .enumerate()
                    .fold(crate::exact::to_f64(v), |acc, (i, &e)| acc * point[i].powi(e as i32))
            })
            .sum()
    }

    /// Replace every variable `v` by the polynomial `images[v]`.
    pub fn substitute(&self, images: &[Polynomial]) -> Polynomial {
        let nvars = images.iter().map(|p| p.nvars).max().unwrap_or(0);
        let mut out = Polynomial::zero(nvars);
        for (k, v) in &self.terms {
            let mut term = Polynomial::constant(nvars, v.clone());
            for (i, &e) in k.iter().enumerate() {
                if e > 0 {
                    term = &term * &images[i].pow(e);
                }
            }
            out = &out + &term;
        }
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (k, v)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{v}")?;
            for (i, &e) in k.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{i}")?,
                    _ => write!(f, "*x{i}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone().with_nvars(rhs.nvars);
        for (k, v) in &rhs.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&int(-1))
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars.max(rhs.nvars));
        for (a, ca) in &self.terms {
            for (b, cb) in &rhs.terms {
                let len = a.len().max(b.len());
                let exps = (0..len).map(|i| exp_at(a, i) + exp_at(b, i)).collect();
                out.add_term(exps, ca * cb);
            }
        }
        out
    }
}

/// Linear differential operator `Σ coeff_α(x) ∂^α` in normal form.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct DiffOperator {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Polynomial>,
}

impl fmt::Debug for DiffOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (d, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c}) d{d:?}")?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl DiffOperator {
    pub fn zero(nvars: usize) -> Self {
        DiffOperator { nvars, terms: BTreeMap::new() }
    }

    /// Multiplication by `p`.
    pub fn multiply(p: Polynomial) -> Self {
        let mut op = DiffOperator::zero(p.nvars);
        op.add_term(Vec::new(), p);
        op
    }

    pub fn identity(nvars: usize) -> Self {
        Self::multiply(Polynomial::one(nvars))
    }

    /// `∂/∂x_var`.
    pub fn partial(nvars: usize, var: usize) -> Self {
        let mut d = vec![0; var + 1];
        d[var] = 1;
        let mut op = DiffOperator::zero(nvars.max(var + 1));
        op.add_term(d, Polynomial::one(nvars));
        op
    }

    /// `coeff · ∂^orders`.
    pub fn term(coeff: Polynomial, orders: &[u32]) -> Self {
        let mut op = DiffOperator::zero(coeff.nvars.max(trimmed(orders.to_vec()).len()));
        op.add_term(orders.to_vec(), coeff);
        op
    }

    fn add_term(&mut self, orders: Vec<u32>, coeff: Polynomial) {
        if coeff.is_zero() {
            return;
        }
        let key = trimmed(orders);
        self.nvars = self.nvars.max(key.len()).max(coeff.nvars);
        let sum = match self.terms.remove(&key) {
            Some(prev) => &prev + &coeff,
            None => coeff,
        };
        if !sum.is_zero() {
            self.terms.insert(key, sum);
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &Polynomial)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), v))
    }

    /// Coefficient polynomial of `∂^orders`.
    pub fn coeff(&self, orders: &[u32]) -> Polynomial {
        self.terms.get(&trimmed(orders.to_vec())).cloned().unwrap_or_else(|| Polynomial::zero(self.nvars))
    }

    pub fn order(&self) -> u32 {
        self.terms.keys().map(|k| k.iter().sum::<u32>()).max().unwrap_or(0)
    }

    fn max_var(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|(k, c)| [k.len().checked_sub(1), c.max_var()])
            .flatten()
            .max()
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let mut out = DiffOperator::zero(self.nvars);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v.scale(c));
        }
        out
    }

    /// Operator product `self ∘ other`, normalised with the Leibniz rule.
    pub fn compose(&self, other: &DiffOperator) -> DiffOperator {
        let mut out = DiffOperator::zero(self.nvars.max(other.nvars));
        for (alpha, a) in &self.terms {
            for (beta, b) in &other.terms {
                // a ∂^α (b ∂^β) = a Σ_{γ≤α} C(α,γ) (∂^γ b) ∂^{α-γ+β}
                for gamma in sub_indices(alpha) {
                    let weight: Rational = alpha
                        .iter()
                        .zip(&gamma)
                        .map(|(&al, &ga)| Rational::from_integer(crate::exact::binomial(al, ga)))
                        .product();
                    let coeff = &(a * &b.derivative_multi(&gamma)) * &Polynomial::constant(0, weight);
                    let len = alpha.len().max(beta.len());
                    let orders =
                        (0..len).map(|i| exp_at(alpha, i) - exp_at(&gamma, i) + exp_at(beta, i)).collect();
                    out.add_term(orders, coeff);
                }
            }
        }
        out
    }

    pub fn apply(&self, p: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(p.nvars.max(self.nvars));
        for (orders, coeff) in &self.terms {
            out = &out + &(coeff * &p.derivative_multi(orders));
        }
        out
    }
}

fn sub_indices(alpha: &[u32]) -> Vec<Vec<u32>> {
    alpha.iter().fold(vec![Vec::new()], |acc, &a| {
        acc.into_iter()
            .flat_map(|prefix| {
                (0..=a).map(move |g| {
                    let mut v = prefix.clone();
                    v.push(g);
                    v
                })
            })
            .collect()
    })
}

impl Add for &DiffOperator {
    type Output = DiffOperator;
    fn add(self, rhs: &DiffOperator) -> DiffOperator {
        let mut out = self.clone();
        for (k, v) in &rhs.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }
}

impl Sub for &DiffOperator {
    type Output = DiffOperator;
    fn sub(self, rhs: &DiffOperator) -> DiffOperator {
        self + &rhs.scale(&int(-1))
    }
}

impl Mul for &DiffOperator {
    type Output = DiffOperator;
    fn mul(self, rhs: &DiffOperator) -> DiffOperator {
        self.compose(rhs)
    }
}

pub fn apply_diff_operator(op: &DiffOperator, p: &Polynomial) -> Result<Polynomial> {
    if let Some(var) = op.max_var() {
        if var >= p.nvars() {
            return Err(Error::UnknownVariable { var, nvars: p.nvars() });
        }
    }
    Ok(op.apply(p))
}

/// Continuous-variable models with factorised polynomial duality functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualityModel {
    /// Momentum process, one level per site: x^{2ξ}/(2ξ-1)!!.
    Bmp,
    /// Energy process with parameter m: z^ξ Γ(m/2)/(2^ξ Γ(m/2+ξ)).
    Bep { m: u32 },
    /// Deterministic averaging flow dual to independent walkers: x^ξ.
    DetFlow,
    /// Independent walkers in the Poisson picture: falling factorial η!/(η-ξ)!.
    IrwDual,
}

impl DualityModel {
    pub fn from_name(name: &str, m: Option<u32>) -> Result<DualityModel> {
        match (name, m) {
            ("bmp", _) => Ok(DualityModel::Bmp),
            ("bep", Some(m)) if m >= 1 => Ok(DualityModel::Bep { m }),
            ("detflow", _) => Ok(DualityModel::DetFlow),
            ("irw", _) | ("irw-dual", _) => Ok(DualityModel::IrwDual),
            _ => Err(Error::UnsupportedModel(name.to_string())),
        }
    }

    /// Single-site factor as a polynomial in `x_var`.
    pub fn site_polynomial(self, nvars: usize, var: usize, xi: u32) -> Result<Polynomial> {
        let x = Polynomial::var(nvars, var);
        Ok(match self {
            DualityModel::Bmp => {
                x.pow(2 * xi).scale(&Rational::new(1.into(), double_factorial_odd(xi)))
            }
            DualityModel::Bep { m } => {
                if m == 0 {
                    return Err(Error::UnsupportedModel("bep with m = 0".into()));
                }
                x.pow(xi).scale(&bep_prefactor(m, xi))
            }
            DualityModel::DetFlow => x.pow(xi),
            DualityModel::IrwDual => (0..xi).fold(Polynomial::one(nvars), |acc, r| {
                &acc * &(&x - &Polynomial::constant(nvars, int(r as i64)))
            }),
        })
    }
}

/// Γ(m/2)/(2^ξ Γ(m/2+ξ)) as the exact rational 1/(2^ξ (m/2)_ξ).
pub fn bep_prefactor(m: u32, xi: u32) -> Rational {
    let rising = rising_factorial(&ratio(m as i64, 2), xi);
    (pow(&int(2), xi) * rising).recip()
}

/// Product over sites of the model's single-site polynomials.
pub fn duality_polynomial(model: DualityModel, xi: &[u32]) -> Result<Polynomial> {
    let n = xi.len();
    xi.iter().enumerate().try_fold(Polynomial::one(n), |acc, (i, &k)| {
        Ok(&acc * &model.site_polynomial(n, i, k)?)
    })
}

/// Differential-operator realisation of the (K+, K-, K0) triple on one
/// site variable, matching the discrete representation of [`crate::algebra::su11_rep`].
#[derive(Debug, Clone)]
pub struct ContinuousTriple {
    pub plus: DiffOperator,
    pub minus: DiffOperator,
    pub zero: DiffOperator,
}

/// K+ = x²/2, K- = ∂²/2, K0 = x∂/2 + 1/4 (momentum coordinates, m = 1).
pub fn bmp_site_triple(nvars: usize, var: usize) -> ContinuousTriple {
    let x = Polynomial::var(nvars, var);
    let d = DiffOperator::partial(nvars, var);
    ContinuousTriple {
        plus: DiffOperator::multiply(x.pow(2).scale(&ratio(1, 2))),
        minus: d.compose(&d).scale(&ratio(1, 2)),
        zero: &DiffOperator::multiply(x.scale(&ratio(1, 2))).compose(&d)
            + &DiffOperator::multiply(Polynomial::constant(nvars, ratio(1, 4))),
    }
}

/// K+ = z/2, K- = 2z∂² + m∂, K0 = z∂ + m/4 (energy coordinates).
pub fn bep_site_triple(m: u32, nvars: usize, var: usize) -> ContinuousTriple {
    let z = Polynomial::var(nvars, var);
    let d = DiffOperator::partial(nvars, var);
    let dd = d.compose(&d);
    ContinuousTriple {
        plus: DiffOperator::multiply(z.scale(&ratio(1, 2))),
        minus: &DiffOperator::multiply(z.scale(&int(2))).compose(&dd) + &d.scale(&int(m as i64)),
        zero: &DiffOperator::multiply(z.clone()).compose(&d)
            + &DiffOperator::multiply(Polynomial::constant(nvars, ratio(m as i64, 4))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ladder {
    Plus,
    Minus,
    Zero,
}

#[derive(Debug, Clone, Default)]
pub struct IntertwiningReport {
    pub checked: usize,
    /// `(component, ξ)` pairs with a nonzero residual polynomial.
    pub failures: Vec<(Ladder, usize)>,
}

impl IntertwiningReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks K^a C(·,ξ) = Σ_ξ' C(·,ξ') 𝒦^a(ξ',ξ) for a ∈ {+,-,0} and every ξ
/// for which the right-hand side only involves supplied family members
/// inside the exact block of `discrete`.
pub fn check_intertwining(
    continuous: &ContinuousTriple,
    discrete: &OperatorTriple,
    family: &[Polynomial],
) -> Result<IntertwiningReport> {
    if family.len() > discrete.dim() {
        return Err(Error::CutoffExceeded { index: family.len() - 1, cutoff: discrete.dim() });
    }
    let mut report = IntertwiningReport::default();
    let top = family.len().saturating_sub(1).min(discrete.exact_dim);
    for xi in 0..top {
        for (label, k, mat) in [
            (Ladder::Plus, &continuous.plus, &discrete.plus),
            (Ladder::Minus, &continuous.minus, &discrete.minus),
            (Ladder::Zero, &continuous.zero, &discrete.zero),
        ] {
            let lhs = k.apply(&family[xi]);
            let rhs = family
                .iter()
                .enumerate()
                .filter(|(r, _)| !mat[(*r, xi)].is_zero())
                .fold(Polynomial::zero(lhs.nvars()), |acc, (r, c)| &acc + &c.scale(&mat[(r, xi)]));
            report.checked += 1;
            if !(&lhs - &rhs).is_zero() {
                report.failures.push((label, xi));
            }
        }
    }
    Ok(report)
}

/// D(x,0) = 1, D(x,n+1) = (x - ∂) D(x,n).
pub fn hermite_duality_sequence(n_max: usize) -> Vec<Polynomial> {
    let step = &DiffOperator::multiply(Polynomial::var(1, 0)) - &DiffOperator::partial(1, 0);
    let mut out = vec![Polynomial::one(1)];
    for n in 0..n_max {
        let next = step.apply(&out[n]);
        out.push(next);
    }
    out
}

/// `q(z)` with z_i replaced by Σ_α x_{i,α}², variables x_{i,α} at index
/// `i * levels + α`.
pub fn lift_energy_polynomial(q: &Polynomial, n_sites: usize, levels: usize) -> Polynomial {
    let nx = n_sites * levels;
    let images: Vec<Polynomial> = (0..n_sites.max(q.nvars()))
        .map(|i| {
            (0..levels).fold(Polynomial::zero(nx), |acc, a| &acc + &Polynomial::var(nx, i * levels + a).pow(2))
        })
        .collect();
    q.substitute(&images).with_nvars(nx)
}

/// Rewrites a polynomial in momentum coordinates as a polynomial in the
/// site energies z_i = Σ_α x_{i,α}².
pub fn change_variables_energy(p: &Polynomial, n_sites: usize, levels: usize) -> Result<Polynomial> {
    let mut q = Polynomial::zero(n_sites);
    for (exps, c) in p.terms() {
        let on_first_level = (0..exps.len()).all(|v| v % levels == 0 || exps[v] == 0);
        if !on_first_level {
            continue;
        }
        let mut z_exps = vec![0; n_sites];
        for (v, &e) in exps.iter().enumerate().filter(|(_, &e)| e > 0) {
            if e % 2 != 0 {
                return Err(Error::NotExpressibleInEnergy);
            }
            let site = v / levels;
            if site >= n_sites {
                return Err(Error::NotExpressibleInEnergy);
            }
            z_exps[site] = e / 2;
        }
        q = &q + &Polynomial::monomial(n_sites, &z_exps, c.clone());
    }
    if lift_energy_polynomial(&q, n_sites, levels) != p.clone().with_nvars(n_sites * levels) {
        return Err(Error::NotExpressibleInEnergy);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x(i: usize) -> Polynomial {
        Polynomial::var(2, i)
    }

    fn c(v: i64) -> Polynomial {
        Polynomial::constant(2, int(v))
    }

    #[test]
    fn detflow_identity_on_single_variable() {
        // -(x1 - x2)(∂1 - ∂2) applied to x1
        let diff = &x(0) - &x(1);
        let d = &DiffOperator::partial(2, 0) - &DiffOperator::partial(2, 1);
        let op = DiffOperator::multiply(-&diff).compose(&d);
        assert_eq!(op.apply(&x(0)), &x(1) - &x(0));
    }

    #[test]
    fn detflow_identity_on_monomials() {
        let diff = &x(0) - &x(1);
        let d = &DiffOperator::partial(2, 0) - &DiffOperator::partial(2, 1);
        let op = DiffOperator::multiply(-&diff).compose(&d);
        for n1 in 0..4u32 {
            for n2 in 0..4u32 {
                let p = Polynomial::monomial(2, &[n1, n2], int(1));
                let mut expected = p.scale(&int(-(n1 as i64 + n2 as i64)));
                if n1 > 0 {
                    expected = &expected + &Polynomial::monomial(2, &[n1 - 1, n2 + 1], int(n1 as i64));
                }
                if n2 > 0 {
                    expected = &expected + &Polynomial::monomial(2, &[n1 + 1, n2 - 1], int(n2 as i64));
                }
                assert_eq!(op.apply(&p), expected);
            }
        }
    }

    #[test]
    fn first_order_operator_kills_constants() {
        let op = &DiffOperator::partial(2, 0) + &DiffOperator::multiply(x(1)).compose(&DiffOperator::partial(2, 1));
        assert!(op.apply(&c(1)).is_zero());
    }

    #[test]
    fn unknown_variable_rejected() {
        let op = DiffOperator::partial(3, 2);
        assert!(matches!(
            apply_diff_operator(&op, &Polynomial::one(2)),
            Err(Error::UnknownVariable { var: 2, nvars: 2 })
        ));
        assert!(apply_diff_operator(&op, &Polynomial::one(3)).is_ok());
    }

    /// Brute-force oracle: applies `(a ∂_i - b ∂_j)` twice by explicit
    /// nested differentiation instead of operator normal form.
    fn rotation_twice(p: &Polynomial, i: usize, j: usize) -> Polynomial {
        let once = |q: &Polynomial| &(&x(i) * &q.derivative(j)) - &(&x(j) * &q.derivative(i));
        once(&once(p))
    }

    #[test]
    fn composed_rotation_matches_nested_differentiation() {
        let rot = &DiffOperator::multiply(x(0)).compose(&DiffOperator::partial(2, 1))
            - &DiffOperator::multiply(x(1)).compose(&DiffOperator::partial(2, 0));
        let sq = rot.compose(&rot);
        for a in 0..5 {
            for b in 0..5 {
                let p = Polynomial::monomial(2, &[a, b], int(1));
                assert_eq!(sq.apply(&p), rotation_twice(&p, 0, 1));
            }
        }
        // normal form of the square
        assert_eq!(sq.coeff(&[0, 2]), x(0).pow(2));
        assert_eq!(sq.coeff(&[2, 0]), x(1).pow(2));
        assert_eq!(sq.coeff(&[1, 1]), (&x(0) * &x(1)).scale(&int(-2)));
        assert_eq!(sq.coeff(&[1, 0]), -&x(0));
        assert_eq!(sq.coeff(&[0, 1]), -&x(1));
        assert_eq!(sq.order(), 2);
    }

    #[test]
    fn duality_polynomials() {
        let bmp = duality_polynomial(DualityModel::Bmp, &[2]).unwrap();
        assert_eq!(bmp, Polynomial::monomial(1, &[4], ratio(1, 3)));
        assert_eq!(duality_polynomial(DualityModel::Bmp, &[0, 0]).unwrap(), Polynomial::one(2));
        let bep1 = duality_polynomial(DualityModel::Bep { m: 1 }, &[1]).unwrap();
        assert_eq!(bep1, Polynomial::monomial(1, &[1], int(1)));
        // Γ(1/2+ξ)/Γ(1/2) = (2ξ-1)!!/2^ξ makes the two closed forms agree under z = x²
        for xi in 0..6 {
            let z_form = duality_polynomial(DualityModel::Bep { m: 1 }, &[xi]).unwrap();
            let x_form = duality_polynomial(DualityModel::Bmp, &[xi]).unwrap();
            assert_eq!(lift_energy_polynomial(&z_form, 1, 1), x_form);
        }
        assert_eq!(bep_prefactor(2, 1), ratio(1, 2));
        assert_eq!(bep_prefactor(3, 2), ratio(1, 15));
        let ff = duality_polynomial(DualityModel::IrwDual, &[3]).unwrap();
        assert_eq!(ff.eval(&[int(5)]), int(60));
        assert_eq!(ff.eval(&[int(2)]), int(0));
        assert!(DualityModel::from_name("asep", None).is_err());
    }

    #[test]
    fn hermite_sequence() {
        let h = hermite_duality_sequence(4);
        assert_eq!(h[0], Polynomial::one(1));
        assert_eq!(h[1], Polynomial::var(1, 0));
        assert_eq!(h[2], &Polynomial::monomial(1, &[2], int(1)) - &Polynomial::one(1));
        let expected = &(&Polynomial::constant(1, int(3)) - &Polynomial::monomial(1, &[2], int(6)))
            + &Polynomial::monomial(1, &[4], int(1));
        assert_eq!(h[4], expected);
    }

    #[test]
    fn intertwining_bmp_and_bep() {
        let disc = crate::algebra::su11_rep(1, 10).unwrap();
        let family: Vec<_> =
            (0..10).map(|k| DualityModel::Bmp.site_polynomial(1, 0, k).unwrap()).collect();
        let rep = check_intertwining(&bmp_site_triple(1, 0), &disc, &family).unwrap();
        assert!(rep.holds(), "{:?}", rep.failures);
        assert_eq!(rep.checked, 27);
        // K- C(·,0) = 0
        assert!(bmp_site_triple(1, 0).minus.apply(&family[0]).is_zero());

        for m in 1..=4 {
            let disc = crate::algebra::su11_rep(m, 10).unwrap();
            let family: Vec<_> =
                (0..10).map(|k| DualityModel::Bep { m }.site_polynomial(1, 0, k).unwrap()).collect();
            let rep = check_intertwining(&bep_site_triple(m, 1, 0), &disc, &family).unwrap();
            assert!(rep.holds(), "m = {m}: {:?}", rep.failures);
        }

        let too_long: Vec<_> = (0..11).map(|_| Polynomial::one(1)).collect();
        let disc = crate::algebra::su11_rep(1, 10).unwrap();
        assert!(matches!(
            check_intertwining(&bmp_site_triple(1, 0), &disc, &too_long),
            Err(Error::CutoffExceeded { .. })
        ));
    }

    #[test]
    fn wrong_family_is_reported() {
        let disc = crate::algebra::su11_rep(1, 6).unwrap();
        let family: Vec<_> = (0..6).map(|k| Polynomial::var(1, 0).pow(2 * k)).collect();
        let rep = check_intertwining(&bmp_site_triple(1, 0), &disc, &family).unwrap();
        assert!(!rep.holds());
    }

    #[test]
    fn energy_change_of_variables() {
        let p = &Polynomial::var(2, 0).pow(2) + &Polynomial::var(2, 1).pow(2);
        assert_eq!(change_variables_energy(&p, 1, 2).unwrap(), Polynomial::var(1, 0));
        assert_eq!(change_variables_energy(&p.pow(2), 1, 2).unwrap(), Polynomial::var(1, 0).pow(2));
        let z1z2 = Polynomial::monomial(2, &[1, 1], int(1));
        assert_eq!(change_variables_energy(&lift_energy_polynomial(&z1z2, 2, 2), 2, 2).unwrap(), z1z2);
        assert!(matches!(
            change_variables_energy(&Polynomial::var(2, 0).pow(2), 1, 2),
            Err(Error::NotExpressibleInEnergy)
        ));
        assert!(matches!(
            change_variables_energy(&Polynomial::var(2, 0), 1, 2),
            Err(Error::NotExpressibleInEnergy)
        ));
    }

    fn small_poly() -> impl Strategy<Value = Polynomial> {
        prop::collection::vec(((0u32..3, 0u32..3, 0u32..3), -5i64..6), 0..5).prop_map(|terms| {
            terms.into_iter().fold(Polynomial::zero(3), |acc, ((a, b, c), k)| {
                &acc + &Polynomial::monomial(3, &[a, b, c], int(k))
            })
        })
    }

    proptest! {
        #[test]
        fn ring_axioms(p in small_poly(), q in small_poly(), r in small_poly()) {
            prop_assert_eq!(&(&p * &q) * &r, &p * &(&q * &r));
            prop_assert_eq!(&p * &(&q + &r), &(&p * &q) + &(&p * &r));
            prop_assert_eq!(&p + &q, &q + &p);
            prop_assert_eq!(&p * &q, &q * &p);
            prop_assert!((&p - &p).is_zero());
        }

        #[test]
        fn leibniz_rule(p in small_poly(), q in small_poly(), v in 0usize..3) {
            let lhs = (&p * &q).derivative(v);
            let rhs = &(&p.derivative(v) * &q) + &(&p * &q.derivative(v));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn composition_agrees_with_sequential_application(p in small_poly(), a in small_poly(), b in small_poly()) {
            let op1 = DiffOperator::multiply(a).compose(&DiffOperator::partial(3, 0));
            let op2 = &DiffOperator::multiply(b).compose(&DiffOperator::partial(3, 2)) + &DiffOperator::identity(3);
            prop_assert_eq!(op1.compose(&op2).apply(&p), op1.apply(&op2.apply(&p)));
        }
    }
}
