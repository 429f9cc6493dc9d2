//! Ladder-operator representations and the matrix identities built on them.
//!
//! Basis vectors are occupation numbers `|0>, |1>, ...`; a matrix entry
//! `(row, col)` is `<row| A |col>`, so raising operators are strictly lower
//! triangular. Multi-site operators use the Kronecker convention with the
//! last site least significant.

use num::{One, Zero};

use crate::error::{Error, Result};
use crate::exact::{int, ratio, QMatrix, Rational};

/// Spin value `j`, stored as the positive integer `2j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin(u32);

impl Spin {
    pub fn from_two_j(two_j: u32) -> Result<Spin> {
        if two_j == 0 {
            return Err(Error::InvalidSpin("0".into()));
        }
        Ok(Spin(two_j))
    }

    pub fn from_rational(j: &Rational) -> Result<Spin> {
        let two_j = j * int(2);
        if !two_j.is_integer() || two_j <= Rational::zero() {
            return Err(Error::InvalidSpin(j.to_string()));
        }
        let v: u32 = two_j
            .to_integer()
            .try_into()
            .map_err(|_| Error::InvalidSpin(j.to_string()))?;
        Spin::from_two_j(v)
    }

    pub fn two_j(self) -> u32 {
        self.0
    }

    pub fn j(self) -> Rational {
        ratio(self.0 as i64, 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepKind {
    Su2(Spin),
    Su11 { m: u32, cutoff: usize },
    Heisenberg { cutoff: usize },
}

/// Raising, lowering and diagonal operators of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTriple {
    pub plus: QMatrix,
    pub minus: QMatrix,
    pub zero: QMatrix,
    pub kind: RepKind,
    /// Leading basis block on which products of the three matrices agree
    /// with the untruncated representation.
    pub exact_dim: usize,
}

impl OperatorTriple {
    pub fn dim(&self) -> usize {
        self.plus.rows()
    }

    /// The same triple acting on `site` of an `n_sites` product space.
    pub fn embed(&self, site: usize, n_sites: usize) -> Result<OperatorTriple> {
        Ok(OperatorTriple {
            plus: tensor_site_operators(&self.plus, site, n_sites)?,
            minus: tensor_site_operators(&self.minus, site, n_sites)?,
            zero: tensor_site_operators(&self.zero, site, n_sites)?,
            kind: self.kind.clone(),
            exact_dim: self.exact_dim,
        })
    }

    /// Residuals of the defining commutation relations, each restricted to
    /// the exact block. All three are zero for a faithful representation.
    pub fn relation_residuals(&self) -> [QMatrix; 3] {
        let (sign_pm, sign_z) = match self.kind {
            RepKind::Su2(_) => (int(-2), int(1)),
            RepKind::Su11 { .. } => (int(2), int(1)),
            RepKind::Heisenberg { .. } => (int(1), int(0)),
        };
        let keep: Vec<usize> = (0..self.exact_dim).collect();
        let z_plus = &commutator(&self.zero, &self.plus).unwrap() - &self.plus.scale(&sign_z);
        let z_minus = &commutator(&self.zero, &self.minus).unwrap() + &self.minus.scale(&sign_z);
        let minus_plus = &commutator(&self.minus, &self.plus).unwrap() - &self.zero.scale(&sign_pm);
        [z_plus, z_minus, minus_plus].map(|m| m.select(&keep, &keep))
    }
}

/// Spin-`j` representation: J+|η> = (2j-η)|η+1>, J-|η> = η|η-1>,
/// J0|η> = (η-j)|η>.
pub fn su2_rep(j: Spin) -> OperatorTriple {
    let n = j.two_j() as usize + 1;
    let two_j = j.two_j() as i64;
    let mut plus = QMatrix::zeros(n, n);
    let mut minus = QMatrix::zeros(n, n);
    let mut zero = QMatrix::zeros(n, n);
    for eta in 0..n {
        if eta + 1 < n {
            plus[(eta + 1, eta)] = int(two_j - eta as i64);
        }
        if eta > 0 {
            minus[(eta - 1, eta)] = int(eta as i64);
        }
        zero[(eta, eta)] = ratio(2 * eta as i64 - two_j, 2);
    }
    OperatorTriple { plus, minus, zero, kind: RepKind::Su2(j), exact_dim: n }
}

/// Truncated discrete-series representation with parameter `m`:
/// K+|ξ> = (m/2+ξ)|ξ+1>, K-|ξ> = ξ|ξ-1>, K0|ξ> = (m/4+ξ)|ξ>.
pub fn su11_rep(m: u32, cutoff: usize) -> Result<OperatorTriple> {
    if m < 1 {
        return Err(Error::InvalidM(m));
    }
    if cutoff < 3 {
        return Err(Error::CutoffTooSmall { got: cutoff, min: 3 });
    }
    let mut plus = QMatrix::zeros(cutoff, cutoff);
    let mut minus = QMatrix::zeros(cutoff, cutoff);
    let mut zero = QMatrix::zeros(cutoff, cutoff);
    for xi in 0..cutoff {
        let x = xi as i64;
        if xi + 1 < cutoff {
            plus[(xi + 1, xi)] = ratio(m as i64 + 2 * x, 2);
        }
        if xi > 0 {
            minus[(xi - 1, xi)] = int(x);
        }
        zero[(xi, xi)] = ratio(m as i64 + 4 * x, 4);
    }
    Ok(OperatorTriple { plus, minus, zero, kind: RepKind::Su11 { m, cutoff }, exact_dim: cutoff - 1 })
}

/// Truncated creation/annihilation pair: a+|η> = |η+1>, a-|η> = η|η-1>.
/// The `zero` slot holds the identity.
pub fn heisenberg_rep(cutoff: usize) -> Result<OperatorTriple> {
    if cutoff < 2 {
        return Err(Error::CutoffTooSmall { got: cutoff, min: 2 });
    }
    let mut plus = QMatrix::zeros(cutoff, cutoff);
    let mut minus = QMatrix::zeros(cutoff, cutoff);
    for eta in 0..cutoff {
        if eta + 1 < cutoff {
            plus[(eta + 1, eta)] = Rational::one();
        }
        if eta > 0 {
            minus[(eta - 1, eta)] = int(eta as i64);
        }
    }
    Ok(OperatorTriple {
        plus,
        minus,
        zero: QMatrix::identity(cutoff),
        kind: RepKind::Heisenberg { cutoff },
        exact_dim: cutoff - 1,
    })
}

pub fn commutator(a: &QMatrix, b: &QMatrix) -> Result<QMatrix> {
    if !a.is_square() || a.dims() != b.dims() {
        return Err(Error::DimensionMismatch { left: a.dims(), right: b.dims() });
    }
    Ok(&(a * b) - &(b * a))
}

/// `exp(A)` for a strictly lower-triangular `A`, summed exactly as the
/// terminating power series.
pub fn exp_raising(a: &QMatrix) -> Result<QMatrix> {
    if !a.is_strictly_lower_triangular() {
        return Err(Error::NotNilpotentOrTriangular);
    }
    let n = a.rows();
    let mut result = QMatrix::identity(n);
    let mut term = QMatrix::identity(n);
    for k in 1..n {
        term = (&term * a).scale(&ratio(1, k as i64));
        if term.is_zero() {
            break;
        }
        result = &result + &term;
    }
    Ok(result)
}

/// `I ⊗ ... ⊗ op ⊗ ... ⊗ I` with `op` in position `site`.
pub fn tensor_site_operators(op: &QMatrix, site: usize, n_sites: usize) -> Result<QMatrix> {
    if site >= n_sites {
        return Err(Error::IndexOutOfRange { index: site, size: n_sites });
    }
    let id = QMatrix::identity(op.rows());
    let mut out = QMatrix::identity(1);
    for s in 0..n_sites {
        out = out.kron(if s == site { op } else { &id });
    }
    Ok(out)
}

/// Sum of `op` embedded at every site.
pub fn total_operator(op: &QMatrix, n_sites: usize) -> QMatrix {
    let dim = op.rows().pow(n_sites as u32);
    (0..n_sites).fold(QMatrix::zeros(dim, dim), |acc, s| {
        &acc + &tensor_site_operators(op, s, n_sites).expect("site in range")
    })
}
