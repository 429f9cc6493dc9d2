//! Trajectory generation: jump chains, Brownian rotations, thermalization
//! chains, absorbing duals and stationary samplers.
//!
//! Every random draw comes from a ChaCha8 stream selected by
//! `(seed, stream)`, so a trajectory is reproduced bit for bit from those two
//! numbers alone.

use num::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, ChiSquared, Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{int, ratio, rising_factorial, to_f64, Rational};
use crate::lattice::Kernel;
use crate::models::{discrete_thermal_law, BoundaryMode, Move, ParticleDynamics, Redistribution, ThermalizationSpec};

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `task` once per stream id in parallel; results come back in
/// stream order.
pub fn par_streams<T: Send>(seed: u64, n: u64, task: impl Fn(u64, &mut StreamRng) -> T + Sync) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|stream| {
            let mut rng = stream_rng(seed, stream);
            task(stream, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult<S> {
    pub state: S,
    pub time: f64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct JumpOptions {
    /// Fail when the total rate exceeds this.
    pub rate_bound: f64,
    pub max_events: u64,
    /// Conservation is asserted every this many events (0 disables).
    pub check_every: u64,
}

impl Default for JumpOptions {
    fn default() -> Self {
        JumpOptions { rate_bound: 1e9, max_events: 100_000_000, check_every: 1024 }
    }
}

/// When a jump simulation stops.
#[derive(Debug, Clone, Copy)]
pub enum Stop {
    Time(f64),
    Events(u64),
    /// Until no transition is enabled.
    Absorbed,
}

/// Continuous-time jump simulation. `observe` receives every visited state
/// together with its holding time, which supports time averages.
pub fn run_jumps(
    model: &ParticleDynamics,
    init: &[u32],
    stop: Stop,
    opts: &JumpOptions,
    rng: &mut impl Rng,
    mut observe: impl FnMut(&[u32], f64),
) -> Result<TrajectoryResult<Vec<u32>>> {
    let mut state = init.to_vec();
    let total0: u32 = state.iter().sum();
    let mut time = 0.0;
    let mut events = 0u64;
    let mut moves: Vec<(Move, f64)> = Vec::new();
    loop {
        model.transitions_f64(&state, &mut moves);
        let total: f64 = moves.iter().map(|(_, r)| r).sum();
        if total > opts.rate_bound {
            return Err(Error::RateOverflow { rate: total, bound: opts.rate_bound });
        }
        if total <= 0.0 {
            if let Stop::Time(t) = stop {
                observe(&state, t - time);
                time = t;
            }
            break;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        if let Stop::Time(t) = stop {
            if time + wait >= t {
                observe(&state, t - time);
                time = t;
                break;
            }
        }
        observe(&state, wait);
        time += wait;
        let mut u = rng.random::<f64>() * total;
        let mut chosen = moves[moves.len() - 1].0;
        for (mv, r) in &moves {
            if u < *r {
                chosen = *mv;
                break;
            }
            u -= r;
        }
        chosen.apply(&mut state);
        events += 1;
        if opts.check_every > 0 && events.is_multiple_of(opts.check_every) && model.conserves_particles() {
            assert_eq!(state.iter().sum::<u32>(), total0, "particle number changed");
        }
        if let Stop::Events(n) = stop {
            if events >= n {
                break;
            }
        }
        if events >= opts.max_events {
            return Err(Error::MaxEventsExceeded(opts.max_events));
        }
    }
    Ok(TrajectoryResult { state, time, events })
}

/// Configuration of `model` at time `t_end` started from `init`.
pub fn gillespie(
    model: &ParticleDynamics,
    init: &[u32],
    t_end: f64,
    opts: &JumpOptions,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult<Vec<u32>>> {
    run_jumps(model, init, Stop::Time(t_end), opts, rng, |_, _| {})
}

/// Runs an absorbing dual until every particle sits in a sink and returns
/// the sink occupations.
pub fn run_absorbing_dual(
    model: &ParticleDynamics,
    init: &[u32],
    opts: &JumpOptions,
    rng: &mut impl Rng,
) -> Result<Vec<u32>> {
    if model.mode() != BoundaryMode::Absorbing {
        return Err(Error::MissingSinks);
    }
    let kernel = model.kernel();
    if let Some(&i) = kernel.sites_without_boundary_access().iter().find(|&&i| init[i] > 0) {
        return Err(Error::NotAbsorbable(kernel.names()[i].clone()));
    }
    let res = run_jumps(model, init, Stop::Absorbed, opts, rng, |_, _| {})?;
    Ok(res.state[kernel.n_sites()..].to_vec())
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidDt(dt));
    }
    Ok(())
}

fn rotate(x: &mut [f64], u: usize, v: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    let (a, b) = (x[u], x[v]);
    x[u] = c * a - s * b;
    x[v] = s * a + c * b;
}

/// Rotation planes `(u, v, std)` of one step: every bond and level pair,
/// with angle standard deviation sqrt(2 p dt).
fn rotation_planes(kernel: &Kernel, levels: usize, dt: f64) -> Vec<(usize, usize, f64)> {
    let mut planes = Vec::new();
    for (i, l, p) in kernel.bonds() {
        let sd = (2.0 * to_f64(p) * dt).sqrt();
        for a in 0..levels {
            for b in 0..levels {
                planes.push((i * levels + a, l * levels + b, sd));
            }
        }
    }
    planes
}

/// Heat baths `(variable, temperature)` at every level of every boundary
/// site; each runs dx = -x dt + sqrt(2T) dW.
fn heat_baths(kernel: &Kernel, levels: usize) -> Result<Vec<(usize, f64)>> {
    let mut baths = Vec::new();
    for b in kernel.boundary() {
        let name = &kernel.names()[b.site];
        let t = b.param.as_ref().ok_or_else(|| Error::MissingReservoirParam(name.clone()))?;
        let t = to_f64(t);
        if t < 0.0 {
            return Err(Error::InvalidReservoirParam { site: name.clone(), value: t.to_string() });
        }
        baths.extend((0..levels).map(|a| (b.site * levels + a, t)));
    }
    Ok(baths)
}

/// Exact Ornstein–Uhlenbeck transition over `h` driven by the standard
/// normal `noise`.
fn ou_step(x: f64, temp: f64, h: f64, noise: f64) -> f64 {
    x * (-h).exp() + (temp * (1.0 - (-2.0 * h).exp())).sqrt() * noise
}

/// Momentum process by Lie–Trotter splitting: each step applies one
/// Gaussian rotation per bond and level pair, then the heat baths when
/// `driven`. Rotations are isometries, so without baths Σ x² is conserved
/// up to rounding.
fn run_bmp(
    kernel: &Kernel,
    levels: usize,
    init: &[f64],
    t_end: f64,
    dt: f64,
    driven: bool,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult<Vec<f64>>> {
    check_dt(dt)?;
    let planes = rotation_planes(kernel, levels, dt);
    let baths = if driven { heat_baths(kernel, levels)? } else { Vec::new() };
    let steps = (t_end / dt).round() as u64;
    let mut x = init.to_vec();
    for _ in 0..steps {
        for &(u, v, sd) in &planes {
            let z: f64 = rng.sample(StandardNormal);
            rotate(&mut x, u, v, sd * z);
        }
        for &(var, temp) in &baths {
            x[var] = ou_step(x[var], temp, dt, rng.sample(StandardNormal));
        }
    }
    Ok(TrajectoryResult { state: x, time: steps as f64 * dt, events: steps })
}

/// The scheme at step `dt` and at `dt/2` on shared noise: a coarse
/// rotation angle is the sum of the two fine angles, and a coarse bath
/// step reuses the two fine bath noises in the combination that makes it
/// the exact two-step transition. Returns `(coarse, fine)`.
fn run_bmp_coupled(
    kernel: &Kernel,
    levels: usize,
    init: &[f64],
    t_end: f64,
    dt: f64,
    driven: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dt(dt)?;
    let h = dt / 2.0;
    let planes = rotation_planes(kernel, levels, h);
    let baths = if driven { heat_baths(kernel, levels)? } else { Vec::new() };
    let steps = (t_end / dt).round() as u64;
    let mut coarse = init.to_vec();
    let mut fine = init.to_vec();
    let mut angles = vec![0.0; planes.len()];
    let mut bath_noise = vec![0.0; baths.len()];
    let decay = (-h).exp();
    let norm = (decay * decay + 1.0).sqrt();
    for _ in 0..steps {
        for half in 0..2 {
            for (k, &(u, v, sd)) in planes.iter().enumerate() {
                let theta = sd * rng.sample::<f64, _>(StandardNormal);
                rotate(&mut fine, u, v, theta);
                angles[k] = if half == 0 { theta } else { angles[k] + theta };
            }
            for (k, &(var, temp)) in baths.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                fine[var] = ou_step(fine[var], temp, h, z);
                bath_noise[k] = if half == 0 { decay * z } else { (bath_noise[k] + z) / norm };
            }
        }
        for (k, &(u, v, _)) in planes.iter().enumerate() {
            rotate(&mut coarse, u, v, angles[k]);
        }
        for (k, &(var, temp)) in baths.iter().enumerate() {
            coarse[var] = ou_step(coarse[var], temp, dt, bath_noise[k]);
        }
    }
    Ok((coarse, fine))
}

pub fn simulate_bmp(
    kernel: &Kernel,
    levels: usize,
    init: &[f64],
    t_end: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult<Vec<f64>>> {
    run_bmp(kernel, levels, init, t_end, dt, false, rng)
}

/// Coupled coarse/fine momentum trajectories on the closed kernel.
pub fn simulate_bmp_coupled(
    kernel: &Kernel,
    levels: usize,
    init: &[f64],
    t_end: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    run_bmp_coupled(kernel, levels, init, t_end, dt, false, rng)
}

fn lift_energies(z: &[f64], levels: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(z.len() * levels);
    for &e in z {
        if e < 0.0 || !e.is_finite() {
            return Err(Error::NegativeEnergy(e));
        }
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..levels).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|a| a / norm).collect();
            }
        };
        x.extend(dir.into_iter().map(|a| a * e.sqrt()));
    }
    Ok(x)
}

fn project_energies(x: &[f64], levels: usize) -> Vec<f64> {
    x.chunks(levels).map(|c| c.iter().map(|a| a * a).sum()).collect()
}

/// Energy process with parameter `m`, simulated through the momentum
/// process on `m` levels per site. With `driven`, boundary sites are
/// coupled to heat baths at the kernel's boundary temperatures.
pub fn simulate_bep(
    kernel: &Kernel,
    m: u32,
    init: &[f64],
    t_end: f64,
    dt: f64,
    driven: bool,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidM(0));
    }
    let x = lift_energies(init, m as usize, rng)?;
    let res = run_bmp(kernel, m as usize, &x, t_end, dt, driven, rng)?;
    Ok(TrajectoryResult { state: project_energies(&res.state, m as usize), time: res.time, events: res.events })
}

/// Coupled coarse/fine energy trajectories, see [`simulate_bep`].
pub fn simulate_bep_coupled(
    kernel: &Kernel,
    m: u32,
    init: &[f64],
    t_end: f64,
    dt: f64,
    driven: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::InvalidM(0));
    }
    let x = lift_energies(init, m as usize, rng)?;
    let (c, f) = run_bmp_coupled(kernel, m as usize, &x, t_end, dt, driven, rng)?;
    Ok((project_energies(&c, m as usize), project_energies(&f, m as usize)))
}

/// State of a thermalization chain.
#[derive(Debug, Clone, PartialEq)]
pub enum ThermalState {
    Energies(Vec<f64>),
    Particles(Vec<u32>),
}

/// Precomputed bond-redistribution sampler.
pub struct Thermalizer {
    bonds: Vec<(usize, usize)>,
    cumulative: Vec<f64>,
    beta: Beta<f64>,
    m: u32,
    law: Redistribution,
}

impl Thermalizer {
    pub fn new(spec: &ThermalizationSpec) -> Result<Self> {
        if spec.m == 0 {
            return Err(Error::InvalidM(0));
        }
        let mut acc = 0.0;
        let mut bonds = Vec::new();
        let mut cumulative = Vec::new();
        for (i, l, p) in spec.kernel.bonds() {
            acc += to_f64(p);
            bonds.push((i, l));
            cumulative.push(acc);
        }
        let half = spec.m as f64 / 2.0;
        let beta = Beta::new(half, half).map_err(|_| Error::InvalidM(spec.m))?;
        Ok(Thermalizer { bonds, cumulative, beta, m: spec.m, law: spec.law })
    }

    fn total_rate(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// New energy of the first site of a bond carrying `total`.
    pub fn split_energy(&self, total: f64, rng: &mut impl Rng) -> f64 {
        total * self.beta.sample(rng)
    }

    /// New particle count of the first site of a bond carrying `total`.
    pub fn split_particles(&self, total: u32, rng: &mut impl Rng) -> u32 {
        let law = discrete_thermal_law(self.m, total);
        let mut u: f64 = rng.random();
        for (k, w) in law.iter().enumerate() {
            let w = to_f64(w);
            if u < w {
                return k as u32;
            }
            u -= w;
        }
        total
    }

    fn pick_bond(&self, rng: &mut impl Rng) -> (usize, usize) {
        let u = rng.random::<f64>() * self.total_rate();
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.bonds.len() - 1);
        self.bonds[k]
    }
}

/// Poisson clocks on bonds with rates p(i,l); at each ring the bond jumps
/// to its thermalized split.
pub fn simulate_thermalization(
    spec: &ThermalizationSpec,
    init: &ThermalState,
    t_end: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult<ThermalState>> {
    let th = Thermalizer::new(spec)?;
    let mut state = init.clone();
    match (&state, th.law) {
        (ThermalState::Energies(e), Redistribution::Continuous) => {
            if let Some(&bad) = e.iter().find(|&&v| v < 0.0) {
                return Err(Error::NegativeEnergy(bad));
            }
        }
        (ThermalState::Particles(_), Redistribution::Discrete) => {}
        _ => return Err(Error::UnsupportedModel("state type does not match the redistribution law".into())),
    }
    let rate = th.total_rate();
    let mut time = 0.0;
    let mut events = 0;
    if rate > 0.0 {
        loop {
            time += rng.sample::<f64, _>(Exp1) / rate;
            if time >= t_end {
                break;
            }
            let (i, l) = th.pick_bond(rng);
            match &mut state {
                ThermalState::Energies(e) => {
                    let total = e[i] + e[l];
                    e[i] = th.split_energy(total, rng);
                    e[l] = total - e[i];
                }
                ThermalState::Particles(p) => {
                    let total = p[i] + p[l];
                    p[i] = th.split_particles(total, rng);
                    p[l] = total - p[i];
                }
            }
            events += 1;
        }
    }
    Ok(TrajectoryResult { state, time: t_end, events })
}

/// Product stationary measures of the closed systems.
#[derive(Debug, Clone, PartialEq)]
pub enum StationaryMeasure {
    /// Binomial(2j, ρ) per site.
    BinomialProduct { two_j: u32, rho: f64 },
    /// Poisson(λ) per site.
    PoissonProduct { lambda: f64 },
    /// Weight (m/2)_k/k! (2λ)^k per site; (2k-1)!!/k! λ^k for m = 1.
    SipProduct { m: u32, lambda: Rational },
    /// σ² χ²_m per site.
    ChiSquaredProduct { m: u32, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StationarySample {
    Counts(Vec<u32>),
    Energies(Vec<f64>),
}

/// Site weight of the inclusion measure before normalisation.
pub fn sip_site_weight(m: u32, lambda: &Rational, k: u32) -> Rational {
    let two_lambda = lambda * int(2);
    rising_factorial(&ratio(m as i64, 2), k) / Rational::from_integer(crate::exact::factorial(k))
        * crate::exact::pow(&two_lambda, k)
}

/// Normalising constant Σ_k weight(k) = (1-2λ)^{-m/2} summed as a series
/// until the terms drop below `tol`.
pub fn sip_partition_series(m: u32, lambda: f64, tol: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    while term > tol || k < 2.0 {
        term *= (m as f64 / 2.0 + k) / (k + 1.0) * 2.0 * lambda;
        sum += term;
        k += 1.0;
    }
    sum
}

pub struct StationarySampler {
    n_sites: usize,
    inner: SamplerKind,
}

enum SamplerKind {
    Binomial(Binomial),
    Poisson(Poisson<f64>),
    Table(Vec<f64>),
    Chi(ChiSquared<f64>, f64),
}

/// Largest mass left outside the tabulated inclusion law.
pub const SIP_TAIL_DEFICIT: f64 = 1.0 / (1u64 << 40) as f64;

impl StationarySampler {
    pub fn new(measure: &StationaryMeasure, n_sites: usize) -> Result<Self> {
        let inner = match measure {
            StationaryMeasure::BinomialProduct { two_j, rho } => SamplerKind::Binomial(
                Binomial::new(*two_j as u64, *rho).map_err(|e| Error::Parse(format!("binomial: {e}")))?,
            ),
            StationaryMeasure::PoissonProduct { lambda } => {
                SamplerKind::Poisson(Poisson::new(*lambda).map_err(|_| Error::LambdaOutOfRange(lambda.to_string()))?)
            }
            StationaryMeasure::SipProduct { m, lambda } => {
                let l = lambda.to_f64().unwrap_or(f64::NAN);
                if !(l > 0.0 && l < 0.5) {
                    return Err(Error::LambdaOutOfRange(lambda.to_string()));
                }
                let norm = (1.0 - 2.0 * l).powf(*m as f64 / 2.0);
                let mut cdf = Vec::new();
                let mut acc = 0.0;
                let mut k = 0;
                while 1.0 - acc >= SIP_TAIL_DEFICIT {
                    acc += to_f64(&sip_site_weight(*m, lambda, k)) * norm;
                    cdf.push(acc);
                    k += 1;
                }
                log::debug!("inclusion law tabulated to k = {}, deficit {:.3e}", k - 1, 1.0 - acc);
                *cdf.last_mut().unwrap() = 1.0;
                SamplerKind::Table(cdf)
            }
            StationaryMeasure::ChiSquaredProduct { m, sigma } => SamplerKind::Chi(
                ChiSquared::new(*m as f64).map_err(|_| Error::InvalidM(*m))?,
                sigma * sigma,
            ),
        };
        Ok(StationarySampler { n_sites, inner })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> StationarySample {
        let n = self.n_sites;
        match &self.inner {
            SamplerKind::Binomial(b) => StationarySample::Counts((0..n).map(|_| b.sample(rng) as u32).collect()),
            SamplerKind::Poisson(p) => StationarySample::Counts((0..n).map(|_| p.sample(rng) as u32).collect()),
            SamplerKind::Table(cdf) => StationarySample::Counts(
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        cdf.partition_point(|&c| c <= u) as u32
                    })
                    .collect(),
            ),
            SamplerKind::Chi(c, scale) => {
                StationarySample::Energies((0..n).map(|_| scale * c.sample(rng)).collect())
            }
        }
    }
}

pub fn sample_stationary(measure: &StationaryMeasure, n_sites: usize, rng: &mut impl Rng) -> Result<StationarySample> {
    Ok(StationarySampler::new(measure, n_sites)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Spin;
    use crate::models::{dual_kmp_thermal_spec, kmp_thermal_spec, Bulk};

    fn sep(two_j: u32, kernel: &Kernel) -> ParticleDynamics {
        ParticleDynamics::new(kernel, Bulk::Exclusion(Spin::from_two_j(two_j).unwrap()), BoundaryMode::Closed).unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream_rng(7, 3).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| stream_rng(7, 3).random()).collect();
        assert_eq!(a, b);
        let mut r1 = stream_rng(7, 3);
        let mut r2 = stream_rng(7, 4);
        assert_ne!(r1.random::<u64>(), r2.random::<u64>());
        let model = sep(2, &Kernel::chain(3));
        let run = |s| gillespie(&model, &[2, 1, 0], 3.0, &JumpOptions::default(), &mut stream_rng(11, s)).unwrap();
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn zero_time_returns_initial_state() {
        let model = sep(2, &Kernel::chain(2));
        let res = gillespie(&model, &[2, 0], 0.0, &JumpOptions::default(), &mut stream_rng(1, 0)).unwrap();
        assert_eq!(res.state, vec![2, 0]);
        assert_eq!(res.events, 0);
    }

    #[test]
    fn single_particle_occupation_mean() {
        let model = ParticleDynamics::new(&Kernel::chain(2), Bulk::Independent, BoundaryMode::Closed).unwrap();
        let t = 0.4;
        let n = 40_000;
        let hits: u64 = par_streams(3, n, |_, rng| {
            gillespie(&model, &[1, 0], t, &JumpOptions::default(), rng).unwrap().state[0] as u64
        })
        .iter()
        .sum();
        let p = hits as f64 / n as f64;
        let exact = 0.5 * (1.0 + (-2.0 * t).exp());
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn inclusion_first_jump_is_symmetric() {
        let model = ParticleDynamics::new(&Kernel::chain(2), Bulk::Inclusion { m: 1 }, BoundaryMode::Closed).unwrap();
        let n = 20_000;
        let left: u64 = par_streams(9, n, |_, rng| {
            let r = run_jumps(&model, &[1, 1], Stop::Events(1), &JumpOptions::default(), rng, |_, _| {}).unwrap();
            (r.state == vec![2, 0]) as u64
        })
        .iter()
        .sum();
        let p = left as f64 / n as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn rate_overflow_is_reported() {
        let model = ParticleDynamics::new(&Kernel::chain(2), Bulk::Inclusion { m: 1 }, BoundaryMode::Closed).unwrap();
        let opts = JumpOptions { rate_bound: 10.0, ..JumpOptions::default() };
        assert!(matches!(
            gillespie(&model, &[5, 5], 1.0, &opts, &mut stream_rng(0, 0)),
            Err(Error::RateOverflow { .. })
        ));
    }

    #[test]
    fn bmp_conserves_energy_and_respects_zero_kernel() {
        let k = Kernel::chain(2);
        let x0 = [1.0, 0.5];
        let mut rng = stream_rng(2, 0);
        let res = simulate_bmp(&k, 1, &x0, 1.0, 0.01, &mut rng).unwrap();
        let e0: f64 = x0.iter().map(|a| a * a).sum();
        let e1: f64 = res.state.iter().map(|a| a * a).sum();
        assert!((e0 - e1).abs() < 1e-12);
        assert!(matches!(simulate_bmp(&k, 1, &x0, 1.0, 0.0, &mut rng), Err(Error::InvalidDt(_))));
        let frozen = Kernel::chain(2).scaled(&int(0));
        let still = simulate_bmp(&frozen, 2, &[1.0, 2.0, 3.0, 4.0], 1.0, 0.1, &mut rng).unwrap();
        assert_eq!(still.state, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bmp_angle_variance() {
        let k = Kernel::chain(2);
        let dt = 0.01;
        let n = 20_000;
        let angles = par_streams(4, n, |_, rng| {
            let r = simulate_bmp(&k, 1, &[1.0, 0.0], dt, dt, rng).unwrap();
            r.state[1].atan2(r.state[0])
        });
        let var = angles.iter().map(|a| a * a).sum::<f64>() / n as f64;
        assert!((var - 2.0 * dt).abs() < 5.0 * 2.0 * dt * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn bep_mean_relaxation() {
        // d/dt E[z_1] = -2m (E[z_1] - E[z_2]) on one bond, so E[z_1] = E/2 (1 + e^{-4mt})
        let k = Kernel::chain(2);
        let (m, t) = (2u32, 0.1);
        let n = 20_000;
        let z1 = par_streams(5, n, |_, rng| simulate_bep(&k, m, &[1.0, 0.0], t, 0.002, false, rng).unwrap().state);
        assert!(z1.iter().all(|z| (z[0] + z[1] - 1.0).abs() < 1e-9));
        let mean = z1.iter().map(|z| z[0]).sum::<f64>() / n as f64;
        let sd = (z1.iter().map(|z| (z[0] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let exact = 0.5 * (1.0 + (-4.0 * m as f64 * t).exp());
        assert!((mean - exact).abs() < 4.0 * sd / (n as f64).sqrt() + 0.005, "{mean} vs {exact}");
        assert!(matches!(simulate_bep(&k, 2, &[-1.0, 0.0], 0.1, 0.01, false, &mut stream_rng(0, 0)), Err(Error::NegativeEnergy(_))));
    }

    #[test]
    fn heat_bath_mean_energy() {
        // isolated site at temperature T: E[z_t] = m T + (z_0 - m T) e^{-2t}
        let k = Kernel::chain(1).with_boundary(&[(0, ratio(3, 2))]);
        let (m, t) = (2u32, 0.4);
        let n = 20_000;
        let z = par_streams(7, n, |_, rng| simulate_bep(&k, m, &[1.0], t, 0.1, true, rng).unwrap().state[0]);
        let mean = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let exact = 3.0 + (1.0 - 3.0) * (-2.0 * t).exp();
        assert!((mean - exact).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {exact}");
        let (c, f) = simulate_bep_coupled(&k, m, &[1.0], 0.4, 0.2, true, &mut stream_rng(8, 0)).unwrap();
        assert!(c[0] >= 0.0 && f[0] >= 0.0);
    }

    #[test]
    fn coupled_bath_noise_has_exact_coarse_law() {
        // the coarse OU step reuses fine noise yet keeps the one-step variance
        let k = Kernel::chain(1).with_boundary(&[(0, int(1))]);
        let n = 40_000;
        let xs = par_streams(9, n, |_, rng| run_bmp_coupled(&k, 1, &[0.0], 0.5, 0.5, true, rng).unwrap().0[0]);
        let var = xs.iter().map(|a| a * a).sum::<f64>() / n as f64;
        let exact = 1.0 - (-1.0f64).exp();
        assert!((var - exact).abs() < 5.0 * exact * (2.0 / n as f64).sqrt(), "{var} vs {exact}");
    }

    #[test]
    fn thermalization_conserves_and_redistributes() {
        let k = Kernel::chain(3);
        let spec = kmp_thermal_spec(&k, 2).unwrap();
        let mut rng = stream_rng(6, 0);
        let r = simulate_thermalization(&spec, &ThermalState::Energies(vec![1.0, 2.0, 0.5]), 5.0, &mut rng).unwrap();
        let ThermalState::Energies(e) = r.state else { panic!() };
        assert!((e.iter().sum::<f64>() - 3.5).abs() < 1e-12);
        let dspec = dual_kmp_thermal_spec(&k, 3).unwrap();
        let r = simulate_thermalization(&dspec, &ThermalState::Particles(vec![3, 0, 1]), 5.0, &mut rng).unwrap();
        let ThermalState::Particles(p) = r.state else { panic!() };
        assert_eq!(p.iter().sum::<u32>(), 4);
        assert!(simulate_thermalization(&dspec, &ThermalState::Energies(vec![1.0; 3]), 1.0, &mut rng).is_err());
    }

    #[test]
    fn discrete_split_uniform_for_m2() {
        let th = Thermalizer::new(&dual_kmp_thermal_spec(&Kernel::chain(2), 2).unwrap()).unwrap();
        let mut rng = stream_rng(8, 0);
        let n = 50_000;
        let mut counts = [0u64; 5];
        for _ in 0..n {
            counts[th.split_particles(4, &mut rng) as usize] += 1;
        }
        for c in counts {
            let p = c as f64 / n as f64;
            assert!((p - 0.2).abs() < 4.0 * (0.16 / n as f64).sqrt());
        }
    }

    #[test]
    fn absorbing_dual_terminates() {
        let k = Kernel::chain(2).with_boundary(&[(0, ratio(1, 4)), (1, ratio(3, 4))]);
        let model = ParticleDynamics::new(&k, Bulk::Exclusion(Spin::from_two_j(1).unwrap()), BoundaryMode::Absorbing)
            .unwrap();
        let mut rng = stream_rng(1, 1);
        let sinks = run_absorbing_dual(&model, &[1, 1, 0, 0], &JumpOptions::default(), &mut rng).unwrap();
        assert_eq!(sinks.iter().sum::<u32>(), 2);
        assert_eq!(run_absorbing_dual(&model, &[0, 0, 1, 2], &JumpOptions::default(), &mut rng).unwrap(), vec![1, 2]);
        let spec = crate::lattice::GraphSpec::chain(3).with_boundary("1", ratio(1, 2));
        let mut spec = spec;
        spec.edges.pop();
        let cut = crate::lattice::build_kernel(&spec).unwrap();
        let model =
            ParticleDynamics::new(&cut, Bulk::Exclusion(Spin::from_two_j(1).unwrap()), BoundaryMode::Absorbing).unwrap();
        assert!(matches!(
            run_absorbing_dual(&model, &[0, 0, 1, 0], &JumpOptions::default(), &mut rng),
            Err(Error::NotAbsorbable(_))
        ));
    }

    #[test]
    fn stationary_samplers() {
        assert!((sip_partition_series(1, 0.375, 1e-18) - 2.0).abs() < 1e-12);
        // mass at k = 1 for λ = 1/4: (1/4)·sqrt(1/2)
        let w = to_f64(&sip_site_weight(1, &ratio(1, 4), 1)) * (0.5f64).sqrt();
        assert!((w - 0.25 * 0.5f64.sqrt()).abs() < 1e-15);
        let mut rng = stream_rng(12, 0);
        assert!(matches!(
            sample_stationary(&StationaryMeasure::SipProduct { m: 1, lambda: ratio(1, 2) }, 2, &mut rng),
            Err(Error::LambdaOutOfRange(_))
        ));
        let s = StationarySampler::new(&StationaryMeasure::BinomialProduct { two_j: 4, rho: 0.25 }, 1).unwrap();
        let n = 40_000;
        let mean = (0..n)
            .map(|_| match s.sample(&mut rng) {
                StationarySample::Counts(c) => c[0] as f64,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 4.0 * (0.75 / n as f64).sqrt());
        let s = StationarySampler::new(&StationaryMeasure::SipProduct { m: 1, lambda: ratio(1, 4) }, 1).unwrap();
        let ones = (0..n)
            .filter(|_| matches!(s.sample(&mut rng), StationarySample::Counts(c) if c[0] == 1))
            .count() as f64
            / n as f64;
        let p1 = 0.25 * 0.5f64.sqrt();
        assert!((ones - p1).abs() < 4.0 * (p1 * (1.0 - p1) / n as f64).sqrt());
    }
}
