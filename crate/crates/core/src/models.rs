//! Generators of the particle systems, their diffusion counterparts and the
//! instantaneous-thermalization chains.
//!
//! Every jump rule sums over unordered bonds {i,l} with weight p(i,l); a
//! particle moving i → l uses p(i,l) once.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num::{One, Signed, Zero};

use crate::algebra::{heisenberg_rep, su11_rep, su2_rep, OperatorTriple, Spin};
use crate::error::{Error, Result};
use crate::exact::{binomial, int, ratio, rising_factorial, to_f64, QMatrix, Rational};
use crate::lattice::Kernel;
use crate::polyops::{DiffOperator, Polynomial};

/// Enumerated occupation configurations over sites followed by sinks,
/// in lexicographic order with the last slot least significant.
#[derive(Debug, Clone)]
pub struct StateSpace {
    caps: Vec<Option<u32>>,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl StateSpace {
    fn from_states(caps: Vec<Option<u32>>, states: Vec<Vec<u32>>) -> Self {
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        StateSpace { caps, states, index }
    }

    /// All configurations with exactly `total` particles.
    pub fn sector(caps: &[Option<u32>], total: u32) -> Result<Self> {
        let mut states = Vec::new();
        let mut current = vec![0; caps.len()];
        fill_sector(caps, 0, total, &mut current, &mut states);
        if states.is_empty() {
            return Err(Error::EmptySector(total));
        }
        Ok(Self::from_states(caps.to_vec(), states))
    }

    /// All configurations with at most `max_total` particles.
    pub fn up_to_total(caps: &[Option<u32>], max_total: u32) -> Self {
        let mut states = Vec::new();
        let mut current = vec![0; caps.len()];
        fill_up_to(caps, 0, max_total, &mut current, &mut states);
        Self::from_states(caps.to_vec(), states)
    }

    /// The full product ∏ {0..cap_i}.
    pub fn product(caps: &[u32]) -> Self {
        let total = caps.iter().sum();
        let caps: Vec<Option<u32>> = caps.iter().map(|&c| Some(c)).collect();
        Self::up_to_total(&caps, total)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.caps.len()
    }

    pub fn caps(&self) -> &[Option<u32>] {
        &self.caps
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn index_of(&self, config: &[u32]) -> Option<usize> {
        self.index.get(config).copied()
    }
}

fn fill_sector(caps: &[Option<u32>], slot: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if slot == caps.len() {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    let rest_cap: Option<u32> = caps[slot + 1..].iter().try_fold(0u32, |acc, c| c.map(|c| acc + c));
    let hi = caps[slot].map_or(left, |c| c.min(left));
    for k in 0..=hi {
        if rest_cap.is_some_and(|r| left - k > r) {
            continue;
        }
        cur[slot] = k;
        fill_sector(caps, slot + 1, left - k, cur, out);
    }
    cur[slot] = 0;
}

fn fill_up_to(caps: &[Option<u32>], slot: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if slot == caps.len() {
        out.push(cur.clone());
        return;
    }
    let hi = caps[slot].map_or(left, |c| c.min(left));
    for k in 0..=hi {
        cur[slot] = k;
        fill_up_to(caps, slot + 1, left - k, cur, out);
    }
    cur[slot] = 0;
}

/// Elementary transition of a particle configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Jump { from: usize, to: usize },
    Birth(usize),
    Death(usize),
    Absorb { site: usize, sink: usize },
}

impl Move {
    pub fn apply(self, config: &mut [u32]) {
        match self {
            Move::Jump { from, to } => {
                config[from] -= 1;
                config[to] += 1;
            }
            Move::Birth(i) => config[i] += 1,
            Move::Death(i) => config[i] -= 1,
            Move::Absorb { site, sink } => {
                config[site] -= 1;
                config[sink] += 1;
            }
        }
    }
}

/// Single-site interaction rule of the bulk dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bulk {
    /// At most 2j particles per site; jump rate η_i(2j - η_l).
    Exclusion(Spin),
    /// Inclusion with parameter m; jump rate 2ξ_i(2ξ_l + m).
    Inclusion { m: u32 },
    /// Independent walkers; jump rate η_i.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Closed,
    /// Birth and death at boundary sites driven by reservoir densities.
    Reservoirs,
    /// Boundary sites lose particles to their sinks.
    Absorbing,
}

/// Rate-function view of a particle system on a kernel.
#[derive(Debug, Clone)]
pub struct ParticleDynamics {
    kernel: Kernel,
    bulk: Bulk,
    mode: BoundaryMode,
    adjacency: Vec<Vec<(usize, Rational, f64)>>,
    reservoirs: Vec<(usize, Rational, f64)>,
}

impl ParticleDynamics {
    pub fn new(kernel: &Kernel, bulk: Bulk, mode: BoundaryMode) -> Result<Self> {
        if let Bulk::Inclusion { m: 0 } = bulk {
            return Err(Error::InvalidM(0));
        }
        let mut reservoirs = Vec::new();
        match mode {
            BoundaryMode::Closed => {}
            BoundaryMode::Absorbing => {
                if kernel.n_sinks() == 0 {
                    return Err(Error::MissingSinks);
                }
            }
            BoundaryMode::Reservoirs => {
                if !matches!(bulk, Bulk::Exclusion(_)) {
                    return Err(Error::UnsupportedModel(format!("reservoirs for {bulk:?}")));
                }
                if kernel.n_sinks() == 0 {
                    return Err(Error::MissingReservoirParam("no boundary sites".into()));
                }
                for b in kernel.boundary() {
                    let name = kernel.names()[b.site].clone();
                    let rho = b.param.clone().ok_or_else(|| Error::MissingReservoirParam(name.clone()))?;
                    if !rho.is_positive() || rho >= Rational::one() {
                        return Err(Error::InvalidReservoirParam { site: name, value: rho.to_string() });
                    }
                    let f = to_f64(&rho);
                    reservoirs.push((b.site, rho, f));
                }
            }
        }
        let adjacency = (0..kernel.n_sites())
            .map(|i| kernel.neighbours(i).map(|(l, r)| (l, r.clone(), to_f64(r))).collect())
            .collect();
        Ok(ParticleDynamics { kernel: kernel.clone(), bulk, mode, adjacency, reservoirs })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn bulk(&self) -> Bulk {
        self.bulk
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// Sites, then sinks when the boundary is absorbing.
    pub fn n_slots(&self) -> usize {
        match self.mode {
            BoundaryMode::Absorbing => self.kernel.n_sites() + self.kernel.n_sinks(),
            _ => self.kernel.n_sites(),
        }
    }

    pub fn caps(&self) -> Vec<Option<u32>> {
        let site_cap = match self.bulk {
            Bulk::Exclusion(s) => Some(s.two_j()),
            _ => None,
        };
        let mut caps = vec![site_cap; self.kernel.n_sites()];
        if self.mode == BoundaryMode::Absorbing {
            caps.extend(std::iter::repeat_n(None, self.kernel.n_sinks()));
        }
        caps
    }

    /// Total particle number is invariant (counting sinks).
    pub fn conserves_particles(&self) -> bool {
        self.mode != BoundaryMode::Reservoirs
    }

    fn jump_factor(&self, n_from: u32, n_to: u32) -> Option<(Rational, f64)> {
        if n_from == 0 {
            return None;
        }
        let (a, b) = (n_from as i64, n_to as i64);
        let w = match self.bulk {
            Bulk::Exclusion(s) => (s.two_j() as i64 - b) * a,
            Bulk::Inclusion { m } => 2 * a * (2 * b + m as i64),
            Bulk::Independent => a,
        };
        (w > 0).then(|| (int(w), w as f64))
    }

    fn absorb_factor(&self, n: u32) -> i64 {
        match self.bulk {
            Bulk::Inclusion { .. } => 2 * n as i64,
            _ => n as i64,
        }
    }

    /// Enabled transitions with exact rates.
    pub fn transitions(&self, config: &[u32]) -> Vec<(Move, Rational)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for (l, p, _) in adj {
                if let Some((w, _)) = self.jump_factor(config[i], config[*l]) {
                    out.push((Move::Jump { from: i, to: *l }, p * w));
                }
            }
        }
        self.boundary_transitions(config, |m, exact, _| out.push((m, exact)));
        out
    }

    /// Enabled transitions with floating-point rates, appended to `out`.
    pub fn transitions_f64(&self, config: &[u32], out: &mut Vec<(Move, f64)>) {
        out.clear();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for (l, _, p) in adj {
                if let Some((_, w)) = self.jump_factor(config[i], config[*l]) {
                    out.push((Move::Jump { from: i, to: *l }, p * w));
                }
            }
        }
        self.boundary_transitions(config, |m, _, f| out.push((m, f)));
    }

    fn boundary_transitions(&self, config: &[u32], mut push: impl FnMut(Move, Rational, f64)) {
        match self.mode {
            BoundaryMode::Closed => {}
            BoundaryMode::Reservoirs => {
                let Bulk::Exclusion(s) = self.bulk else { return };
                for (site, rho, rho_f) in &self.reservoirs {
                    let n = config[*site] as i64;
                    let room = s.two_j() as i64 - n;
                    if room > 0 {
                        push(Move::Birth(*site), rho * int(room), rho_f * room as f64);
                    }
                    if n > 0 {
                        push(Move::Death(*site), (Rational::one() - rho) * int(n), (1.0 - rho_f) * n as f64);
                    }
                }
            }
            BoundaryMode::Absorbing => {
                for b in self.kernel.boundary() {
                    let w = self.absorb_factor(config[b.site]);
                    if w > 0 {
                        push(Move::Absorb { site: b.site, sink: b.sink }, int(w), w as f64);
                    }
                }
            }
        }
    }
}

/// Sparse generator over an enumerated state space. The diagonal is
/// implied by zero row sums.
#[derive(Debug, Clone)]
pub struct CTMCGenerator {
    space: StateSpace,
    rows: Vec<Vec<(usize, Rational)>>,
    conserved: Option<u32>,
}

impl CTMCGenerator {
    pub fn from_dynamics(dynamics: &ParticleDynamics, space: StateSpace) -> Result<Self> {
        let mut rows = Vec::with_capacity(space.len());
        let mut scratch = vec![0; space.n_slots()];
        for s in space.states() {
            let mut row: Vec<(usize, Rational)> = Vec::new();
            for (mv, rate) in dynamics.transitions(s) {
                scratch.copy_from_slice(s);
                mv.apply(&mut scratch);
                let t = space.index_of(&scratch).ok_or_else(|| Error::StateOutsideSpace(format!("{scratch:?}")))?;
                match row.iter_mut().find(|(c, _)| *c == t) {
                    Some((_, r)) => *r += rate,
                    None => row.push((t, rate)),
                }
            }
            row.sort_by_key(|(c, _)| *c);
            rows.push(row);
        }
        let conserved = if dynamics.conserves_particles() {
            let totals: Vec<u32> = space.states().iter().map(|s| s.iter().sum()).collect();
            totals.first().copied().filter(|t0| totals.iter().all(|t| t == t0))
        } else {
            None
        };
        Ok(CTMCGenerator { space, rows, conserved })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn conserved(&self) -> Option<u32> {
        self.conserved
    }

    /// Off-diagonal transitions out of state `s`.
    pub fn transitions(&self, s: usize) -> &[(usize, Rational)] {
        &self.rows[s]
    }

    pub fn rate(&self, s: usize, t: usize) -> Rational {
        if s == t {
            return -self.exit_rate(s);
        }
        self.rows[s].iter().find(|(c, _)| *c == t).map_or_else(Rational::zero, |(_, r)| r.clone())
    }

    pub fn exit_rate(&self, s: usize) -> Rational {
        self.rows[s].iter().map(|(_, r)| r).sum()
    }

    pub fn dense(&self) -> QMatrix {
        let mut m = QMatrix::zeros(self.len(), self.len());
        for (s, row) in self.rows.iter().enumerate() {
            let mut diag = Rational::zero();
            for (t, r) in row {
                m[(s, *t)] += r;
                diag -= r;
            }
            m[(s, s)] += diag;
        }
        m
    }

    pub fn dense_f64(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len(), self.len());
        for (s, row) in self.rows.iter().enumerate() {
            for (t, r) in row {
                let r = to_f64(r);
                m[(s, *t)] += r;
                m[(s, s)] -= r;
            }
        }
        m
    }

    /// `L · M`.
    pub fn mul_right(&self, m: &QMatrix) -> Result<QMatrix> {
        if m.rows() != self.len() {
            return Err(Error::DimensionMismatch { left: (self.len(), self.len()), right: m.dims() });
        }
        let mut out = QMatrix::zeros(self.len(), m.cols());
        for (s, row) in self.rows.iter().enumerate() {
            for (t, r) in row {
                for c in 0..m.cols() {
                    if !m[(*t, c)].is_zero() || !m[(s, c)].is_zero() {
                        let delta = &m[(*t, c)] - &m[(s, c)];
                        out[(s, c)] += r * delta;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `M · Lᵀ`, i.e. L acting on the column argument of M.
    pub fn mul_transpose_left(&self, m: &QMatrix) -> Result<QMatrix> {
        if m.cols() != self.len() {
            return Err(Error::DimensionMismatch { left: m.dims(), right: (self.len(), self.len()) });
        }
        let mut out = QMatrix::zeros(m.rows(), self.len());
        for (c, row) in self.rows.iter().enumerate() {
            for (c2, r) in row {
                for rr in 0..m.rows() {
                    if !m[(rr, *c2)].is_zero() || !m[(rr, c)].is_zero() {
                        let delta = &m[(rr, *c2)] - &m[(rr, c)];
                        out[(rr, c)] += r * delta;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn off_diagonals_nonnegative(&self) -> bool {
        self.rows.iter().flatten().all(|(_, r)| !r.is_negative())
    }

    /// Every transition preserves the total particle count.
    pub fn preserves_total(&self) -> bool {
        self.rows.iter().enumerate().all(|(s, row)| {
            let n: u32 = self.space.state(s).iter().sum();
            row.iter().all(|(t, _)| self.space.state(*t).iter().sum::<u32>() == n)
        })
    }

    /// Restriction to a subset of states; transitions leaving the subset are dropped.
    pub fn restrict(&self, keep: &[usize]) -> CTMCGenerator {
        let pos: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let states = keep.iter().map(|&s| self.space.state(s).to_vec()).collect();
        let rows = keep
            .iter()
            .map(|&s| self.rows[s].iter().filter_map(|(t, r)| pos.get(t).map(|&i| (i, r.clone()))).collect())
            .collect();
        CTMCGenerator {
            space: StateSpace::from_states(self.space.caps.clone(), states),
            rows,
            conserved: self.conserved,
        }
    }
}

fn sector_generator(dynamics: &ParticleDynamics, sector: u32) -> Result<CTMCGenerator> {
    let space = StateSpace::sector(&dynamics.caps(), sector)?;
    CTMCGenerator::from_dynamics(dynamics, space)
}

pub fn sep2j_generator(kernel: &Kernel, j: Spin, sector: u32) -> Result<CTMCGenerator> {
    sector_generator(&ParticleDynamics::new(kernel, Bulk::Exclusion(j), BoundaryMode::Closed)?, sector)
}

pub fn sip_generator(kernel: &Kernel, m: u32, sector: u32) -> Result<CTMCGenerator> {
    sector_generator(&ParticleDynamics::new(kernel, Bulk::Inclusion { m }, BoundaryMode::Closed)?, sector)
}

pub fn irw_generator(kernel: &Kernel, sector: u32) -> Result<CTMCGenerator> {
    sector_generator(&ParticleDynamics::new(kernel, Bulk::Independent, BoundaryMode::Closed)?, sector)
}

/// Closed-system generator on every configuration with at most `max_total`
/// particles. Bulk dynamics never leaves this set.
pub fn generator_up_to(kernel: &Kernel, bulk: Bulk, max_total: u32) -> Result<CTMCGenerator> {
    let dynamics = ParticleDynamics::new(kernel, bulk, BoundaryMode::Closed)?;
    let space = StateSpace::up_to_total(&dynamics.caps(), max_total);
    CTMCGenerator::from_dynamics(&dynamics, space)
}

/// Exclusion with one particle per (site, level) on the product graph of
/// sites and `levels` levels; level `a` of site `i` is slot `i * levels + a`.
pub fn ladder_sep_generator(kernel: &Kernel, levels: usize, sector: u32) -> Result<CTMCGenerator> {
    let half = Spin::from_two_j(1)?;
    sep2j_generator(&kernel.ladder(levels), half, sector)
}

/// Index map from ladder states to per-site occupation states.
pub fn ladder_projection(levels: usize, fine: &StateSpace, coarse: &StateSpace) -> Result<Vec<usize>> {
    fine.states()
        .iter()
        .map(|s| {
            let lumped: Vec<u32> = s.chunks(levels).map(|c| c.iter().sum()).collect();
            coarse.index_of(&lumped).ok_or_else(|| Error::StateOutsideSpace(format!("{lumped:?}")))
        })
        .collect()
}

/// Exclusion with reservoirs at the boundary sites, on the full state space.
pub fn boundary_sep2j_generator(kernel: &Kernel, j: Spin) -> Result<CTMCGenerator> {
    let dynamics = ParticleDynamics::new(kernel, Bulk::Exclusion(j), BoundaryMode::Reservoirs)?;
    let caps = vec![j.two_j(); kernel.n_sites()];
    CTMCGenerator::from_dynamics(&dynamics, StateSpace::product(&caps))
}

/// Absorbing dual of the boundary-driven exclusion process: sector of
/// `sector` particles counted over sites and sinks.
pub fn dual_absorbing_sep2j_generator(kernel: &Kernel, j: Spin, sector: u32) -> Result<CTMCGenerator> {
    sector_generator(&ParticleDynamics::new(kernel, Bulk::Exclusion(j), BoundaryMode::Absorbing)?, sector)
}

pub fn dual_absorbing_sip_generator(kernel: &Kernel, m: u32, sector: u32) -> Result<CTMCGenerator> {
    sector_generator(&ParticleDynamics::new(kernel, Bulk::Inclusion { m }, BoundaryMode::Absorbing)?, sector)
}

/// Row-major product index of a configuration in a space with `dim` states per site.
pub fn product_index(config: &[u32], dim: usize) -> usize {
    config.iter().fold(0, |acc, &k| acc * dim + k as usize)
}

fn bond_sum(
    kernel: &Kernel,
    triple: &OperatorTriple,
    bond_term: impl Fn(&OperatorTriple, &OperatorTriple, usize) -> QMatrix,
) -> Result<QMatrix> {
    let n = kernel.n_sites();
    let dim = triple.dim().pow(n as u32);
    let mut acc = QMatrix::zeros(dim, dim);
    for (i, l, p) in kernel.bonds() {
        let a = triple.embed(i, n)?;
        let b = triple.embed(l, n)?;
        acc = &acc + &bond_term(&a, &b, dim).scale(p);
    }
    Ok(acc)
}

/// Σ_bonds p [J+_i J-_l + J-_i J+_l + 2 J0_i J0_l - 2j²], which equals the
/// transpose of the exclusion generator on the product basis.
pub fn sep2j_hamiltonian(kernel: &Kernel, j: Spin) -> Result<QMatrix> {
    let jj = j.j();
    bond_sum(kernel, &su2_rep(j), |a, b, dim| {
        let mut h = &(&a.plus * &b.minus) + &(&a.minus * &b.plus);
        h = &h + &(&a.zero * &b.zero).scale(&int(2));
        &h - &QMatrix::identity(dim).scale(&(&jj * &jj * int(2)))
    })
}

/// Σ_bonds p · 4 [K+_i K-_l + K-_i K+_l - 2 K0_i K0_l + m²/8] on the
/// truncated product basis.
pub fn sip_hamiltonian(kernel: &Kernel, m: u32, cutoff: usize) -> Result<QMatrix> {
    let shift = ratio((m * m) as i64, 8);
    bond_sum(kernel, &su11_rep(m, cutoff)?, |a, b, dim| {
        let mut h = &(&a.plus * &b.minus) + &(&a.minus * &b.plus);
        h = &h - &(&a.zero * &b.zero).scale(&int(2));
        (&h + &QMatrix::identity(dim).scale(&shift)).scale(&int(4))
    })
}

/// Σ_bonds p · (-(a+_i - a+_l)(a-_i - a-_l)) on the truncated product basis.
pub fn irw_hamiltonian(kernel: &Kernel, cutoff: usize) -> Result<QMatrix> {
    bond_sum(kernel, &heisenberg_rep(cutoff)?, |a, b, _| {
        -&(&(&a.plus - &b.plus) * &(&a.minus - &b.minus))
    })
}

/// The transposed rate generator of `gen` placed into a product basis
/// with `dim` states per site.
pub fn embed_transposed_generator(gen: &CTMCGenerator, dim: usize) -> (QMatrix, Vec<usize>) {
    let idx: Vec<usize> = gen.space().states().iter().map(|s| product_index(s, dim)).collect();
    let full = dim.pow(gen.space().n_slots() as u32);
    let mut out = QMatrix::zeros(full, full);
    let lt = gen.dense().transpose();
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            out[(ia, ib)] = lt[(a, b)].clone();
        }
    }
    (out, idx)
}

/// `Σ_bonds p(i,l) Σ_{α,β} (x_{iα} ∂_{lβ} - x_{lβ} ∂_{iα})²` with variable
/// `i * levels + α`.
pub fn bmp_operator(kernel: &Kernel, levels: usize) -> DiffOperator {
    let nv = kernel.n_sites() * levels;
    let mut acc = DiffOperator::zero(nv);
    for (i, l, p) in kernel.bonds() {
        for a in 0..levels {
            for b in 0..levels {
                let (u, v) = (i * levels + a, l * levels + b);
                let rot = &DiffOperator::multiply(Polynomial::var(nv, u)).compose(&DiffOperator::partial(nv, v))
                    - &DiffOperator::multiply(Polynomial::var(nv, v)).compose(&DiffOperator::partial(nv, u));
                acc = &acc + &rot.compose(&rot).scale(p);
            }
        }
    }
    acc
}

/// `Σ_bonds p(i,l) [4 z_i z_l (∂_i - ∂_l)² - 2m (z_i - z_l)(∂_i - ∂_l)]`.
pub fn bep_operator(kernel: &Kernel, m: u32) -> DiffOperator {
    let nv = kernel.n_sites();
    let mut acc = DiffOperator::zero(nv);
    for (i, l, p) in kernel.bonds() {
        let d = &DiffOperator::partial(nv, i) - &DiffOperator::partial(nv, l);
        let zz = &Polynomial::var(nv, i) * &Polynomial::var(nv, l);
        let diff = &Polynomial::var(nv, i) - &Polynomial::var(nv, l);
        let diffusion = DiffOperator::multiply(zz.scale(&int(4))).compose(&d.compose(&d));
        let drift = DiffOperator::multiply(diff.scale(&int(-2 * m as i64))).compose(&d);
        acc = &acc + &(&diffusion + &drift).scale(p);
    }
    acc
}

/// Bulk energy process plus `2T_i(m ∂_i + 2 z_i ∂_i²) - 2 z_i ∂_i` at every
/// boundary site with temperature `T_i`.
pub fn boundary_bep_operator(kernel: &Kernel, m: u32) -> Result<DiffOperator> {
    let nv = kernel.n_sites();
    let mut acc = bep_operator(kernel, m);
    if kernel.n_sinks() == 0 {
        return Err(Error::MissingReservoirParam("no boundary sites".into()));
    }
    for b in kernel.boundary() {
        let name = &kernel.names()[b.site];
        let t = b.param.clone().ok_or_else(|| Error::MissingReservoirParam(name.clone()))?;
        if t.is_negative() {
            return Err(Error::InvalidReservoirParam { site: name.clone(), value: t.to_string() });
        }
        let d = DiffOperator::partial(nv, b.site);
        let z = Polynomial::var(nv, b.site);
        let heat = &d.scale(&int(m as i64)) + &DiffOperator::multiply(z.scale(&int(2))).compose(&d.compose(&d));
        let decay = DiffOperator::multiply(z.scale(&int(-2))).compose(&d);
        acc = &(&acc + &heat.scale(&(t * int(2)))) + &decay;
    }
    Ok(acc)
}

/// `Σ_bonds p(i,l) · (-(x_i - x_l)(∂_i - ∂_l))`: pairwise averaging flow.
pub fn averaging_flow_operator(kernel: &Kernel) -> DiffOperator {
    let nv = kernel.n_sites();
    let mut acc = DiffOperator::zero(nv);
    for (i, l, p) in kernel.bonds() {
        let d = &DiffOperator::partial(nv, i) - &DiffOperator::partial(nv, l);
        let diff = &Polynomial::var(nv, l) - &Polynomial::var(nv, i);
        acc = &acc + &DiffOperator::multiply(diff).compose(&d).scale(p);
    }
    acc
}

/// Two-site averaging flow ẋ₁ = x₂ - x₁, ẋ₂ = x₁ - x₂ in closed form.
pub fn deterministic_flow(x0: (f64, f64), t: f64) -> (f64, f64) {
    let mean = 0.5 * (x0.0 + x0.1);
    let half = 0.5 * (x0.0 - x0.1) * (-2.0 * t).exp();
    (mean + half, mean - half)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Redistribution {
    /// Energy split by the Beta(m/2, m/2) law of the pair.
    Continuous,
    /// Particle split by the stationary law of the two-site inclusion chain.
    Discrete,
}

/// At rate p(i,l) the bond {i,l} jumps to its own stationary split.
#[derive(Debug, Clone)]
pub struct ThermalizationSpec {
    pub kernel: Kernel,
    pub m: u32,
    pub law: Redistribution,
}

pub fn kmp_thermal_spec(kernel: &Kernel, m: u32) -> Result<ThermalizationSpec> {
    if m < 1 {
        return Err(Error::InvalidM(m));
    }
    Ok(ThermalizationSpec { kernel: kernel.clone(), m, law: Redistribution::Continuous })
}

pub fn dual_kmp_thermal_spec(kernel: &Kernel, m: u32) -> Result<ThermalizationSpec> {
    if m < 1 {
        return Err(Error::InvalidM(m));
    }
    Ok(ThermalizationSpec { kernel: kernel.clone(), m, law: Redistribution::Discrete })
}

/// Probability that the first site of a bond holds `k` of `total` particles
/// after thermalization, k = 0..=total. Derived from detailed balance of the
/// two-site inclusion chain: μ(k)/μ(k-1) = (N-k+1)(m/2+k-1) / (k(N-k+m/2)),
/// i.e. μ(k) = C(N,k) (m/2)_k (m/2)_{N-k} / (m)_N.
pub fn discrete_thermal_law(m: u32, total: u32) -> Vec<Rational> {
    let half = ratio(m as i64, 2);
    let norm = rising_factorial(&int(m as i64), total);
    (0..=total)
        .map(|k| {
            Rational::from_integer(binomial(total, k))
                * rising_factorial(&half, k)
                * rising_factorial(&half, total - k)
                / &norm
        })
        .collect()
}

/// Law obtained from the alternative recursion
/// μ(Δ)/μ(Δ-2) = (N-Δ+1)(N+Δ-1+m)/((N+Δ)(N-Δ+m)), Δ = 2k - N, normalised.
/// Kept only to demonstrate that it is not stationary.
pub fn alternative_recursion_law(m: u32, total: u32) -> Vec<Rational> {
    let (n, m) = (total as i64, m as i64);
    let mut w = vec![Rational::one()];
    for k in 1..=n {
        let r = ratio((2 * n - 2 * k + 1) * (2 * k - 1 + m), 2 * k * (2 * n - 2 * k + m));
        let next = w.last().unwrap() * r;
        w.push(next);
    }
    let z: Rational = w.iter().sum();
    w.into_iter().map(|x| x / &z).collect()
}

/// E[B^a (1-B)^b] for B ~ Beta(m/2, m/2): (m/2)_a (m/2)_b / (m)_{a+b}.
pub fn pair_moment(m: u32, a: u32, b: u32) -> Rational {
    let half = ratio(m as i64, 2);
    rising_factorial(&half, a) * rising_factorial(&half, b) / rising_factorial(&int(m as i64), a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin(two_j: u32) -> Spin {
        Spin::from_two_j(two_j).unwrap()
    }

    fn rate_between(g: &CTMCGenerator, a: &[u32], b: &[u32]) -> Rational {
        let s = g.space().index_of(a).unwrap();
        let t = g.space().index_of(b).unwrap();
        g.rate(s, t)
    }

    #[test]
    fn state_enumeration() {
        let s = StateSpace::sector(&[Some(2), Some(2)], 2).unwrap();
        assert_eq!(s.states(), &[vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert!(matches!(StateSpace::sector(&[Some(1), Some(1)], 3), Err(Error::EmptySector(3))));
        let p = StateSpace::product(&[1, 1]);
        assert_eq!(p.states(), &[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(StateSpace::product(&[2, 2, 2]).len(), 27);
        let u = StateSpace::up_to_total(&[None, None], 2);
        assert_eq!(u.len(), 6);
        assert_eq!(u.index_of(&[1, 1]), Some(4));
    }

    #[test]
    fn exclusion_rates() {
        let k = Kernel::chain(2);
        let g = sep2j_generator(&k, spin(2), 2).unwrap();
        assert_eq!(rate_between(&g, &[2, 0], &[1, 1]), int(4));
        let g = sep2j_generator(&k, spin(1), 1).unwrap();
        assert_eq!(rate_between(&g, &[0, 1], &[1, 0]), int(1));
        assert_eq!(rate_between(&g, &[1, 0], &[0, 1]), int(1));
        let g0 = sep2j_generator(&k, spin(2), 0).unwrap();
        assert!(g0.dense().is_zero());
        assert!(matches!(sep2j_generator(&k, spin(1), 3), Err(Error::EmptySector(3))));
    }

    #[test]
    fn inclusion_and_independent_rates() {
        let k = Kernel::chain(2);
        let g = sip_generator(&k, 1, 2).unwrap();
        assert_eq!(rate_between(&g, &[1, 1], &[0, 2]), int(6));
        assert_eq!(rate_between(&g, &[1, 1], &[2, 0]), int(6));
        let g = sip_generator(&k, 2, 2).unwrap();
        assert_eq!(rate_between(&g, &[2, 0], &[1, 1]), int(8));
        assert!(sip_generator(&k, 2, 0).unwrap().dense().is_zero());
        let g = irw_generator(&k, 3).unwrap();
        assert_eq!(rate_between(&g, &[3, 0], &[2, 1]), int(3));
        for g in [g, sip_generator(&Kernel::chain(3), 3, 4).unwrap()] {
            assert!(g.off_diagonals_nonnegative());
            assert!(g.preserves_total());
            let d = g.dense();
            for r in 0..d.rows() {
                assert!(d.row(r).iter().sum::<Rational>().is_zero());
            }
        }
    }

    #[test]
    fn ladder_rates_match_enumeration() {
        let g = ladder_sep_generator(&Kernel::chain(2), 2, 1).unwrap();
        // one particle at (site 0, level 0): free levels at site 1 are both levels
        let s = g.space().index_of(&[1, 0, 0, 0]).unwrap();
        assert_eq!(g.exit_rate(s), int(2));
        let full = ladder_sep_generator(&Kernel::chain(2), 2, 4).unwrap();
        assert!(full.dense().is_zero());
    }

    #[test]
    fn boundary_exclusion() {
        let k = Kernel::chain(2).with_boundary(&[(0, ratio(1, 4))]);
        let g = boundary_sep2j_generator(&k, spin(1)).unwrap();
        assert_eq!(rate_between(&g, &[0, 0], &[1, 0]), ratio(1, 4));
        assert_eq!(rate_between(&g, &[1, 0], &[0, 0]), ratio(3, 4));
        assert!(!g.preserves_total());
        assert_eq!(g.conserved(), None);
        let g2 = boundary_sep2j_generator(&Kernel::chain(3).with_boundary(&[(0, ratio(1, 2))]), spin(2)).unwrap();
        assert_eq!(g2.len(), 27);
        let s = g2.space().index_of(&[2, 0, 0]).unwrap();
        assert!(g2.transitions(s).iter().all(|(t, _)| g2.space().state(*t)[0] <= 2));
        let bad = Kernel::chain(2).with_boundary(&[(0, int(1))]);
        assert!(matches!(boundary_sep2j_generator(&bad, spin(1)), Err(Error::InvalidReservoirParam { .. })));
        assert!(matches!(
            boundary_sep2j_generator(&Kernel::chain(2), spin(1)),
            Err(Error::MissingReservoirParam(_))
        ));
    }

    #[test]
    fn absorbing_duals() {
        let k = Kernel::chain(3).with_boundary(&[(0, ratio(1, 4)), (2, ratio(3, 4))]);
        let g = dual_absorbing_sep2j_generator(&k, spin(1), 1).unwrap();
        assert_eq!(rate_between(&g, &[1, 0, 0, 0, 0], &[0, 0, 0, 1, 0]), int(1));
        let sink = g.space().index_of(&[0, 0, 0, 1, 0]).unwrap();
        assert!(g.transitions(sink).is_empty());
        assert_eq!(g.conserved(), Some(1));
        assert!(g.preserves_total());
        let g = dual_absorbing_sip_generator(&k, 2, 2).unwrap();
        assert_eq!(rate_between(&g, &[1, 0, 0, 0, 1], &[0, 0, 0, 1, 1]), int(2));
        assert!(g.preserves_total());
        assert!(matches!(dual_absorbing_sip_generator(&Kernel::chain(2), 1, 1), Err(Error::MissingSinks)));
    }

    fn compare_hamiltonian(h: &QMatrix, gen: &CTMCGenerator, dim: usize) {
        let (lt, idx) = embed_transposed_generator(gen, dim);
        assert_eq!(h.select(&idx, &idx), lt.select(&idx, &idx));
    }

    #[test]
    fn hamiltonians_reproduce_rate_generators() {
        let k = Kernel::chain(2);
        // spin 1/2 written out: J1+J2- + J1-J2+ + 2 J1^0 J2^0 - 1/2
        for two_j in 1..=4u32 {
            let h = sep2j_hamiltonian(&k, spin(two_j)).unwrap();
            let g = generator_up_to(&k, Bulk::Exclusion(spin(two_j)), 2 * two_j).unwrap();
            assert_eq!(g.len(), (two_j as usize + 1).pow(2));
            compare_hamiltonian(&h, &g, two_j as usize + 1);
        }
        let cutoff = 8;
        for m in 1..=3 {
            let h = sip_hamiltonian(&k, m, cutoff).unwrap();
            let g = generator_up_to(&k, Bulk::Inclusion { m }, cutoff as u32 - 1).unwrap();
            compare_hamiltonian(&h, &g, cutoff);
        }
        let h = irw_hamiltonian(&k, cutoff).unwrap();
        let g = generator_up_to(&k, Bulk::Independent, cutoff as u32 - 1).unwrap();
        compare_hamiltonian(&h, &g, cutoff);
    }

    #[test]
    fn spin_half_hamiltonian_is_swap_minus_identity() {
        let h = sep2j_hamiltonian(&Kernel::chain(2), spin(1)).unwrap();
        let expected = QMatrix::from_i64_rows(&[&[0, 0, 0, 0], &[0, -1, 1, 0], &[0, 1, -1, 0], &[0, 0, 0, 0]]);
        assert_eq!(h, expected);
    }

    #[test]
    fn hamiltonian_on_three_sites() {
        let k = Kernel::chain(3);
        let h = sep2j_hamiltonian(&k, spin(2)).unwrap();
        let g = generator_up_to(&k, Bulk::Exclusion(spin(2)), 6).unwrap();
        compare_hamiltonian(&h, &g, 3);
    }

    #[test]
    fn bmp_two_site_expansion() {
        let op = bmp_operator(&Kernel::chain(2), 1);
        let x = |i| Polynomial::var(2, i);
        assert_eq!(op.coeff(&[0, 2]), x(0).pow(2));
        assert_eq!(op.coeff(&[2, 0]), x(1).pow(2));
        assert_eq!(op.coeff(&[1, 1]), (&x(0) * &x(1)).scale(&int(-2)));
        assert_eq!(op.coeff(&[1, 0]), -&x(0));
        assert_eq!(op.coeff(&[0, 1]), -&x(1));
        assert_eq!(op.terms().count(), 5);
        assert!(op.apply(&Polynomial::one(2)).is_zero());
        assert!(op.apply(&(&x(0).pow(2) + &x(1).pow(2))).is_zero());
        let op3 = bmp_operator(&Kernel::chain(3), 2);
        let energy = (0..6).fold(Polynomial::zero(6), |acc, v| &acc + &Polynomial::var(6, v).pow(2));
        assert!(op3.apply(&energy).is_zero());
    }

    #[test]
    fn bep_operator_actions() {
        let k = Kernel::chain(3);
        let z = |i| Polynomial::var(3, i);
        for m in 1..=3 {
            let op = bep_operator(&k, m);
            assert!(op.apply(&(&(&z(0) + &z(1)) + &z(2))).is_zero());
            // middle site: -2m Σ_l p(1,l)(z_1 - z_l)
            let expected = (&(&z(1) - &z(0)) + &(&z(1) - &z(2))).scale(&int(-2 * m as i64));
            assert_eq!(op.apply(&z(1)), expected);
        }
        let op2 = bep_operator(&Kernel::chain(2), 2);
        let z2 = |i| Polynomial::var(2, i);
        assert_eq!(op2.coeff(&[1, 0]), (&z2(0) - &z2(1)).scale(&int(-4)));
    }

    #[test]
    fn boundary_bep_actions() {
        let k = Kernel::chain(3).with_boundary(&[(0, int(1)), (2, int(2))]);
        let op = boundary_bep_operator(&k, 2).unwrap();
        let z = |i| Polynomial::var(3, i);
        let bulk = bep_operator(&k, 2).apply(&z(0));
        let expected = &(&bulk + &Polynomial::constant(3, int(4))) - &z(0).scale(&int(2));
        assert_eq!(op.apply(&z(0)), expected);
        assert_eq!(op.apply(&z(1)), bep_operator(&k, 2).apply(&z(1)));
        let cold = Kernel::chain(2).with_boundary(&[(0, int(0))]);
        let op = boundary_bep_operator(&cold, 2).unwrap();
        let z = |i| Polynomial::var(2, i);
        let expected = &bep_operator(&cold, 2).apply(&z(0)) - &z(0).scale(&int(2));
        assert_eq!(op.apply(&z(0)), expected);
    }

    #[test]
    fn thermal_laws() {
        assert_eq!(discrete_thermal_law(2, 2), vec![ratio(1, 3); 3]);
        assert_eq!(discrete_thermal_law(2, 4), vec![ratio(1, 5); 5]);
        for m in 1..=4 {
            for n in 0..6 {
                let law = discrete_thermal_law(m, n);
                assert_eq!(law.iter().sum::<Rational>(), int(1));
                for k in 1..=n {
                    let r = ratio(
                        (n as i64 - k as i64 + 1) * (m as i64 + 2 * k as i64 - 2),
                        k as i64 * (2 * n as i64 - 2 * k as i64 + m as i64),
                    );
                    assert_eq!(&law[k as usize] / &law[k as usize - 1], r);
                }
            }
        }
        assert_ne!(alternative_recursion_law(2, 2), discrete_thermal_law(2, 2));
        assert!(kmp_thermal_spec(&Kernel::chain(2), 0).is_err());
        assert_eq!(dual_kmp_thermal_spec(&Kernel::chain(2), 2).unwrap().law, Redistribution::Discrete);
    }

    #[test]
    fn pair_moments_against_quadrature() {
        // u = 2B - 1 = sin θ has density ∝ cos^{m-1} θ on (-π/2, π/2)
        for m in 1..=3u32 {
            let simpson = |f: &dyn Fn(f64) -> f64| {
                let n = 20_000;
                let (a, b) = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
                let h = (b - a) / n as f64;
                (0..=n)
                    .map(|i| {
                        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                        w * f(a + i as f64 * h)
                    })
                    .sum::<f64>()
                    * h
                    / 3.0
            };
            let weight = |t: f64| t.cos().powi(m as i32 - 1);
            let z = simpson(&weight);
            for a in 0..=3u32 {
                for b in 0..=3u32 {
                    let f = |t: f64| {
                        let bb = 0.5 * (1.0 + t.sin());
                        bb.powi(a as i32) * (1.0 - bb).powi(b as i32) * weight(t)
                    };
                    let numeric = simpson(&f) / z;
                    assert!((numeric - to_f64(&pair_moment(m, a, b))).abs() < 1e-9, "m={m} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn deterministic_flow_closed_form() {
        assert_eq!(deterministic_flow((1.0, 1.0), 3.0), (1.0, 1.0));
        let (a, b) = deterministic_flow((2.0, 0.0), 50.0);
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = deterministic_flow((2.0, 0.0), 2f64.ln() / 2.0);
        assert!((a - 1.5).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sparse_products_match_dense() {
        let g = sip_generator(&Kernel::chain(3), 1, 3).unwrap();
        let n = g.len();
        let m = QMatrix::from_fn(n, n, |r, c| ratio((r * 7 + c * 3) as i64 % 5 - 2, 3));
        assert_eq!(g.mul_right(&m).unwrap(), &g.dense() * &m);
        assert_eq!(g.mul_transpose_left(&m).unwrap(), &m * &g.dense().transpose());
    }
}
