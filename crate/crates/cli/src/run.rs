//! Executes one validated experiment and collects its records and tables.

use dualbench::algebra::{exp_raising, heisenberg_rep, su11_rep, su2_rep, Spin};
use dualbench::duality::{
    boundary_duality_function, duality_from_symmetry, q_from_reversible_measure, verify_diffusion_duality,
    verify_selfduality, verify_thermalized_duality, BoundaryModel, Residual, Side, SiteDuality, VerificationRecord,
};
use dualbench::exact::{binomial, factorial, int, pow, rising_factorial, to_f64, QMatrix, Rational};
use dualbench::lattice::Kernel;
use dualbench::models::{
    bep_operator, bmp_operator, boundary_bep_operator, discrete_thermal_law, dual_absorbing_sip_generator,
    embed_transposed_generator, generator_up_to, irw_hamiltonian, kmp_thermal_spec, dual_kmp_thermal_spec,
    ladder_projection, ladder_sep_generator, product_index, sep2j_generator, sep2j_hamiltonian, sip_hamiltonian,
    BoundaryMode, Bulk, CTMCGenerator, ParticleDynamics, StateSpace,
};
use dualbench::polyops::{bep_site_triple, bmp_site_triple, check_intertwining, duality_polynomial, DualityModel};
use dualbench::simulate::{
    gillespie, par_streams, simulate_bep, simulate_bmp, simulate_thermalization, sip_partition_series, sip_site_weight,
    JumpOptions, ThermalState,
};
use dualbench::verify::{
    continuous_thermalization_check, deterministic_limit_rms, detailed_balance_check, energy_lumping_check,
    euler_limit_flow, is_affine, limit_check_j, limit_check_m, lumping_check, mc_absorption_check,
    mc_diffusion_duality_check, mc_duality_check, pair_law_residual, stationary_profile, sub_seed, with_rerun,
    DiffusionModel, DiscreteDualityPair, DtGate, Estimate, Guarded, LimitRow, McSettings, Verdict,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ModelKind, Plan};

/// Largest state space turned into dense rational matrices.
const DENSE_LIMIT: usize = 1500;
const ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] dualbench::Error),
}

fn missing(what: &str) -> RunError {
    ConfigError::Schema(format!("run.{what} is required for this experiment")).into()
}

fn bad(msg: String) -> RunError {
    ConfigError::Schema(msg).into()
}

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Table {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub records: Vec<VerificationRecord>,
    pub tables: Vec<Table>,
    /// Report-only remarks.
    pub notes: Vec<String>,
}

impl Outcome {
    fn exact(&mut self, identity: &str, sector: &str, residual: &Residual) {
        self.records.push(VerificationRecord::from_residual(identity, sector, residual));
    }

    fn flag(&mut self, identity: &str, sector: &str, value: String, passed: bool, witness: Option<String>) {
        self.records.push(VerificationRecord {
            identity: identity.into(),
            sector: sector.into(),
            residual: value,
            witness,
            passed,
        });
    }

    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerificationRecord> {
        self.records.iter().filter(|r| !r.passed)
    }
}

pub fn execute(plan: &Plan) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    match plan.run.experiment {
        Experiment::CheckAlgebra => check_algebra(plan, &mut out)?,
        Experiment::CheckDuality => check_duality(plan, &mut out)?,
        Experiment::CheckStationary => check_stationary(plan, &mut out)?,
        Experiment::Simulate => simulate(plan, &mut out)?,
        Experiment::McDuality => mc_duality(plan, &mut out)?,
        Experiment::Profile => profile(plan, &mut out)?,
        Experiment::Limits => limits(plan, &mut out)?,
    }
    Ok(out)
}

fn dense_guard(gen: &CTMCGenerator) -> Result<(), RunError> {
    if gen.len() > DENSE_LIMIT {
        return Err(dualbench::Error::SectorTooLarge { size: gen.len(), limit: DENSE_LIMIT }.into());
    }
    Ok(())
}

fn bulk_of(plan: &Plan) -> Bulk {
    match plan.model.kind {
        ModelKind::Sip | ModelKind::DualAbsorbingSip | ModelKind::Bep | ModelKind::BoundaryBep => {
            Bulk::Inclusion { m: plan.model.m }
        }
        ModelKind::Irw => Bulk::Independent,
        _ => Bulk::Exclusion(plan.model.spin),
    }
}

fn site_duality(bulk: Bulk) -> SiteDuality {
    match bulk {
        Bulk::Exclusion(j) => SiteDuality::Exclusion(j),
        Bulk::Inclusion { m } => SiteDuality::Inclusion { m },
        Bulk::Independent => SiteDuality::Independent,
    }
}

/// Largest particle number checked by default: every sector of exclusion
/// systems up to four particles.
fn max_total(plan: &Plan, default: u32) -> u32 {
    let cap = match bulk_of(plan) {
        Bulk::Exclusion(j) => j.two_j() * plan.kernel.n_sites() as u32,
        _ => u32::MAX,
    };
    plan.run.sector.unwrap_or(default).min(cap)
}

fn counts(init: &[f64], what: &str) -> Result<Vec<u32>, RunError> {
    init.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as u32)
            } else {
                Err(bad(format!("run.{what} must hold nonnegative integers, got {x}")))
            }
        })
        .collect()
}

fn slot_names(kernel: &Kernel, with_sinks: bool) -> Vec<String> {
    let mut names = kernel.names().to_vec();
    if with_sinks {
        names.extend(kernel.boundary().iter().map(|b| format!("sink:{}", kernel.names()[b.site])));
    }
    names
}

// ---------------------------------------------------------------------------
// check-algebra

const RELATIONS: [&str; 3] = ["[A0,A+] relation", "[A0,A-] relation", "[A-,A+] relation"];

fn check_algebra(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let m = plan.model.m;
    let cutoff = plan.run.cutoff;
    let (label, rep) = match plan.model.kind {
        ModelKind::Sep | ModelKind::Sep2j => (format!("su(2) j={}", plan.model.spin.j()), su2_rep(plan.model.spin)),
        ModelKind::Sip | ModelKind::Bep => (format!("su(1,1) m={m} cutoff={cutoff}"), su11_rep(m, cutoff)?),
        ModelKind::Bmp => (format!("su(1,1) m=1 cutoff={cutoff}"), su11_rep(1, cutoff)?),
        ModelKind::Irw => (format!("heisenberg cutoff={cutoff}"), heisenberg_rep(cutoff)?),
        other => return Err(bad(format!("no algebra check for {other}"))),
    };
    for (name, residual) in RELATIONS.iter().zip(rep.relation_residuals()) {
        out.exact(name, &label, &Residual::of(&residual));
    }

    let k = &plan.kernel;
    let hamiltonian = match plan.model.kind {
        ModelKind::Sep | ModelKind::Sep2j => {
            let dim = plan.model.spin.two_j() as usize + 1;
            product_fits(dim, k.n_sites())
                .then(|| -> Result<_, RunError> {
                    let gen = generator_up_to(k, bulk_of(plan), (dim as u32 - 1) * k.n_sites() as u32)?;
                    Ok((sep2j_hamiltonian(k, plan.model.spin)?, gen, dim))
                })
                .transpose()?
        }
        ModelKind::Sip | ModelKind::Irw => product_fits(cutoff, k.n_sites())
            .then(|| -> Result<_, RunError> {
                let gen = generator_up_to(k, bulk_of(plan), cutoff as u32 - 1)?;
                let h = match plan.model.kind {
                    ModelKind::Sip => sip_hamiltonian(k, m, cutoff)?,
                    _ => irw_hamiltonian(k, cutoff)?,
                };
                Ok((h, gen, cutoff))
            })
            .transpose()?,
        ModelKind::Bmp | ModelKind::Bep => {
            let model = if plan.model.kind == ModelKind::Bmp { DualityModel::Bmp } else { DualityModel::Bep { m } };
            let triple = match model {
                DualityModel::Bmp => bmp_site_triple(1, 0),
                _ => bep_site_triple(m, 1, 0),
            };
            let family = (0..cutoff as u32).map(|x| model.site_polynomial(1, 0, x)).collect::<Result<Vec<_>, _>>()?;
            let report = check_intertwining(&triple, &rep, &family)?;
            out.flag(
                "intertwining K C = C 𝒦ᵀ",
                &format!("ξ < {}", rep.exact_dim.min(cutoff) - 1),
                report.failures.len().to_string(),
                report.holds(),
                report.failures.first().map(|f| format!("{f:?}")),
            );
            None
        }
        _ => None,
    };
    match hamiltonian {
        Some((h, gen, dim)) => {
            let (lt, idx) = embed_transposed_generator(&gen, dim);
            let diff = &h.select(&idx, &idx) - &lt.select(&idx, &idx);
            out.exact("H = Lᵀ on configurations", &format!("{} states", idx.len()), &Residual::of(&diff));
        }
        None if matches!(plan.model.kind, ModelKind::Sep | ModelKind::Sep2j | ModelKind::Sip | ModelKind::Irw) => {
            out.notes.push("Hamiltonian comparison skipped: product space too large".into());
        }
        None => {}
    }
    Ok(())
}

fn product_fits(dim: usize, n: usize) -> bool {
    (dim as f64).powi(n as i32) <= DENSE_LIMIT as f64
}

// ---------------------------------------------------------------------------
// check-duality

fn check_duality(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let m = plan.model.m;
    match plan.model.kind {
        ModelKind::Sep | ModelKind::Sep2j | ModelKind::Sip | ModelKind::Irw => {
            let bulk = bulk_of(plan);
            let top = max_total(plan, 4);
            for total in 0..=top {
                let gen = CTMCGenerator::from_dynamics(
                    &ParticleDynamics::new(k, bulk, BoundaryMode::Closed)?,
                    StateSpace::sector(&ParticleDynamics::new(k, bulk, BoundaryMode::Closed)?.caps(), total)?,
                )?;
                dense_guard(&gen)?;
                let d = site_duality(bulk).matrix(gen.space(), gen.space(), &[]);
                out.exact("LD−DLᵀ residual", &format!("N={total}"), &verify_selfduality(&gen, &d)?);
            }
            symmetry_route(plan, top, out)?;
        }
        ModelKind::LadderSep => {
            let levels = plan.model.spin.two_j() as usize;
            let top = max_total(plan, 4);
            let ladder = k.ladder(levels);
            let half = Spin::from_two_j(1)?;
            for total in 0..=top {
                let fine = ladder_sep_generator(k, levels, total)?;
                let coarse = sep2j_generator(k, plan.model.spin, total)?;
                dense_guard(&fine)?;
                let proj = ladder_projection(levels, fine.space(), coarse.space())?;
                out.exact("ladder lumps onto 2j-SEP", &format!("N={total}"), &lumping_check(&fine, &coarse, &proj)?);
                let ladder_gen = sep2j_generator(&ladder, half, total)?;
                let d = SiteDuality::Exclusion(half).matrix(ladder_gen.space(), ladder_gen.space(), &[]);
                out.exact("LD−DLᵀ residual", &format!("ladder N={total}"), &verify_selfduality(&ladder_gen, &d)?);
            }
        }
        ModelKind::Bmp => {
            let top = max_total(plan, 4);
            if m == 1 {
                let dual = generator_up_to(k, Bulk::Inclusion { m: 1 }, top)?;
                let bad = verify_diffusion_duality(&bmp_operator(k, 1), &dual, |xi| {
                    duality_polynomial(DualityModel::Bmp, xi)
                })?;
                diffusion_record(out, "L D − L_dual D (BMP vs SIP m=1)", top, bad, &dual);
            }
            let bad = energy_lumping_check(k, m as usize, top)?;
            out.flag(
                "BMP lumps onto BEP",
                &format!("levels={m} degree ≤ {top}"),
                if bad.is_some() { "nonzero" } else { "0" }.into(),
                bad.is_none(),
                bad.map(|e| format!("{e:?}")),
            );
        }
        ModelKind::Bep => {
            let top = max_total(plan, 4);
            let dual = generator_up_to(k, Bulk::Inclusion { m }, top)?;
            let bad = verify_diffusion_duality(&bep_operator(k, m), &dual, |xi| {
                duality_polynomial(DualityModel::Bep { m }, xi)
            })?;
            diffusion_record(out, "L D − L_dual D (BEP vs SIP)", top, bad, &dual);
        }
        ModelKind::Kmp | ModelKind::DualKmp => {
            let top = max_total(plan, 3);
            let failures = verify_thermalized_duality(k, m, top)?;
            out.flag(
                "(T−id)D − (T̂−id)D per bond",
                &format!("|ξ| ≤ {top}"),
                failures.len().to_string(),
                failures.is_empty(),
                failures.first().map(|f| format!("{f:?}")),
            );
        }
        ModelKind::BoundarySep | ModelKind::BoundarySep2j | ModelKind::DualAbsorbingSep2j => {
            for total in 0..=max_total(plan, 3) {
                let pair = DiscreteDualityPair::boundary_exclusion(k, plan.model.spin, total)?;
                dense_guard(&pair.primal_gen)?;
                dense_guard(&pair.dual_gen)?;
                out.exact("LD−DL_dualᵀ residual", &format!("|ξ|={total}"), &pair.exact_residual()?);
            }
        }
        ModelKind::BoundaryBep | ModelKind::DualAbsorbingSip => {
            let op = boundary_bep_operator(k, m)?;
            for total in 0..=max_total(plan, 3) {
                let dual = dual_absorbing_sip_generator(k, m, total)?;
                let bad = verify_diffusion_duality(&op, &dual, |xi| {
                    boundary_duality_function(k, BoundaryModel::Bep { m }, xi)
                })?;
                diffusion_record(out, "L D − L_dual D with heat baths", total, bad, &dual);
            }
        }
    }
    Ok(())
}

fn diffusion_record(out: &mut Outcome, identity: &str, total: u32, bad: Option<usize>, dual: &CTMCGenerator) {
    out.flag(
        identity,
        &format!("|ξ| ≤ {total}"),
        if bad.is_some() { "nonzero" } else { "0" }.into(),
        bad.is_none(),
        bad.map(|i| format!("ξ = {:?}", dual.space().state(i))),
    );
}

/// D = S Q⁻¹ from the exponential of the total raising operator and the
/// reversible measure, compared with the closed form.
fn symmetry_route(plan: &Plan, top: u32, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let bulk = bulk_of(plan);
    let (plus, dim, weight): (QMatrix, usize, Box<dyn Fn(u32) -> Rational>) = match bulk {
        Bulk::Exclusion(j) => {
            let two_j = j.two_j();
            (su2_rep(j).plus, two_j as usize + 1, Box::new(move |n| Rational::from_integer(binomial(two_j, n))))
        }
        Bulk::Inclusion { m } => {
            let half = Rational::new((m as i64).into(), 2.into());
            (
                su11_rep(m, top as usize + 1)?.plus,
                top as usize + 1,
                Box::new(move |n| rising_factorial(&half, n) / Rational::from_integer(factorial(n))),
            )
        }
        Bulk::Independent => {
            let plus = heisenberg_rep(top as usize + 1)?.plus;
            (plus, top as usize + 1, Box::new(|n| int(1) / Rational::from_integer(factorial(n))))
        }
    };
    if !product_fits(dim, k.n_sites()) {
        out.notes.push("symmetry route skipped: product space too large".into());
        return Ok(());
    }
    let gen = generator_up_to(k, bulk, top)?;
    let q = q_from_reversible_measure(&gen, |c| c.iter().map(|&n| weight(n)).product())?;
    let site = exp_raising(&plus)?;
    let full = (1..k.n_sites()).fold(site.clone(), |acc, _| acc.kron(&site));
    let idx: Vec<usize> = gen.space().states().iter().map(|c| product_index(c, dim)).collect();
    let d = duality_from_symmetry(&gen, &full.select(&idx, &idx), &q, Side::Right)?;
    let closed = site_duality(bulk).matrix(gen.space(), gen.space(), &[]);
    out.exact("S Q⁻¹ − closed-form D", &format!("N ≤ {top}"), &Residual::of(&(&d - &closed)));
    Ok(())
}

// ---------------------------------------------------------------------------
// check-stationary

fn check_stationary(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let lambda = &plan.model.lambda;
    let m = plan.model.m;
    match plan.model.kind {
        ModelKind::Sep | ModelKind::Sep2j | ModelKind::Sip | ModelKind::Irw => {
            let bulk = bulk_of(plan);
            let top = max_total(plan, 6);
            let site: Box<dyn Fn(u32) -> Rational> = match bulk {
                Bulk::Exclusion(j) => {
                    if *lambda <= int(0) || *lambda >= int(1) {
                        return Err(bad(format!("lambda = {lambda} is not a density in (0,1)")));
                    }
                    let two_j = j.two_j();
                    let rho = lambda.clone();
                    Box::new(move |n| {
                        Rational::from_integer(binomial(two_j, n))
                            * pow(&rho, n)
                            * pow(&(int(1) - &rho), two_j - n)
                    })
                }
                Bulk::Inclusion { m } => {
                    let l = lambda.clone();
                    Box::new(move |n| sip_site_weight(m, &l, n))
                }
                Bulk::Independent => {
                    let l = lambda.clone();
                    Box::new(move |n| pow(&l, n) / Rational::from_integer(factorial(n)))
                }
            };
            let gen = generator_up_to(k, bulk, top)?;
            let witness = detailed_balance_check(&gen, |c| c.iter().map(|&n| site(n)).product());
            out.flag(
                "detailed balance",
                &format!("N ≤ {top}, λ = {lambda}"),
                if witness.is_some() { "nonzero" } else { "0" }.into(),
                witness.is_none(),
                witness.map(|(a, b)| format!("{a:?} ↔ {b:?}")),
            );
            if let Bulk::Inclusion { m } = bulk {
                let l = to_f64(lambda);
                if !(0.0..0.5).contains(&l) {
                    return Err(bad(format!("lambda = {lambda} outside (0, 1/2)")));
                }
                let series = sip_partition_series(m, l, 1e-17);
                let closed = (1.0 - 2.0 * l).powf(-(m as f64) / 2.0);
                let err = (series - closed).abs();
                out.flag("partition series − (1−2λ)^(−m/2)", "", format!("{err:.3e}"), err < 1e-12, None);
            }
        }
        ModelKind::Kmp | ModelKind::DualKmp => {
            let top = max_total(plan, 6);
            for total in 1..=top {
                let law = discrete_thermal_law(m, total);
                out.exact("pair law is stationary", &format!("m={m} N={total}"), &pair_law_residual(m, total, &law)?);
            }
            if plan.model.kind == ModelKind::Kmp {
                let seed = plan.run.seed;
                let guarded = with_rerun(plan.run.samples, |n, attempt| {
                    continuous_thermalization_check(m, 1.0, n, ALPHA, sub_seed(seed, 1000 + attempt))
                })?;
                let r = guarded.outcome();
                out.flag(
                    "KS test of the energy split",
                    &format!("m={m} n={}", r.n),
                    format!("D = {:.5} p = {:.4}", r.statistic, r.p_value),
                    guarded.passed(),
                    rerun_note(&guarded),
                );
            }
        }
        other => return Err(bad(format!("no stationarity check for {other}"))),
    }
    Ok(())
}

fn rerun_note<T: Verdict>(g: &Guarded<T>) -> Option<String> {
    g.rerun.as_ref().map(|_| format!("first attempt passed: {}", g.first.passed()))
}

// ---------------------------------------------------------------------------
// simulate

fn simulate(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let run = &plan.run;
    let init = run.init.as_deref().ok_or_else(|| missing("init"))?;
    let (names, samples): (Vec<String>, Vec<Vec<f64>>) = match plan.model.kind {
        ModelKind::Sep
        | ModelKind::Sep2j
        | ModelKind::Sip
        | ModelKind::Irw
        | ModelKind::BoundarySep
        | ModelKind::BoundarySep2j
        | ModelKind::DualAbsorbingSep2j
        | ModelKind::DualAbsorbingSip => {
            let mode = match plan.model.kind {
                ModelKind::BoundarySep | ModelKind::BoundarySep2j => BoundaryMode::Reservoirs,
                ModelKind::DualAbsorbingSep2j | ModelKind::DualAbsorbingSip => BoundaryMode::Absorbing,
                _ => BoundaryMode::Closed,
            };
            let model = ParticleDynamics::new(k, bulk_of(plan), mode)?;
            let start = counts(init, "init")?;
            let opts = JumpOptions::default();
            let paths = par_streams(run.seed, run.samples, |_, rng| {
                gillespie(&model, &start, run.t, &opts, rng).map(|r| r.state.iter().map(|&n| n as f64).collect())
            });
            (slot_names(k, mode == BoundaryMode::Absorbing), paths.into_iter().collect::<Result<_, _>>()?)
        }
        ModelKind::Bmp => {
            let levels = plan.model.m as usize;
            let paths = par_streams(run.seed, run.samples, |_, rng| {
                simulate_bmp(k, levels, init, run.t, run.dt, rng)
                    .map(|r| r.state.chunks(levels).map(|x| x.iter().map(|v| v * v).sum()).collect())
            });
            (slot_names(k, false), paths.into_iter().collect::<Result<_, _>>()?)
        }
        ModelKind::Bep | ModelKind::BoundaryBep => {
            let driven = plan.model.kind == ModelKind::BoundaryBep;
            let paths = par_streams(run.seed, run.samples, |_, rng| {
                simulate_bep(k, plan.model.m, init, run.t, run.dt, driven, rng).map(|r| r.state)
            });
            (slot_names(k, false), paths.into_iter().collect::<Result<_, _>>()?)
        }
        ModelKind::Kmp | ModelKind::DualKmp => {
            let (spec, state) = if plan.model.kind == ModelKind::Kmp {
                (kmp_thermal_spec(k, plan.model.m)?, ThermalState::Energies(init.to_vec()))
            } else {
                (dual_kmp_thermal_spec(k, plan.model.m)?, ThermalState::Particles(counts(init, "init")?))
            };
            let paths = par_streams(run.seed, run.samples, |_, rng| {
                simulate_thermalization(&spec, &state, run.t, rng).map(|r| match r.state {
                    ThermalState::Energies(e) => e,
                    ThermalState::Particles(p) => p.iter().map(|&n| n as f64).collect(),
                })
            });
            (slot_names(k, false), paths.into_iter().collect::<Result<_, _>>()?)
        }
        ModelKind::LadderSep => return Err(bad("simulate is not available for ladder_sep".into())),
    };
    let quantity = match plan.model.kind {
        ModelKind::Bmp | ModelKind::Bep | ModelKind::BoundaryBep | ModelKind::Kmp => "energy",
        _ => "occupation",
    };
    let mut table = Table::new("simulate", &["slot", "mean", "se", "samples"]);
    for (slot, name) in names.iter().enumerate() {
        let column: Vec<f64> = samples.iter().map(|s| s[slot]).collect();
        let e = Estimate::from_samples(&column);
        table.push(vec![name.clone(), format!("{:.6}", e.mean), format!("{:.6}", e.se), e.n.to_string()]);
    }
    out.notes.push(format!("mean {quantity} per slot at t = {} over {} samples", run.t, run.samples));
    out.tables.push(table);
    Ok(())
}

// ---------------------------------------------------------------------------
// mc-duality

fn mc_table(out: &mut Outcome, label: &str, lhs: Estimate, rhs: Estimate, oracle: Option<f64>, z: f64, pass: bool) {
    let table = match out.tables.iter_mut().find(|t| t.name == "mc_duality") {
        Some(t) => t,
        None => {
            out.tables.push(Table::new(
                "mc_duality",
                &["check", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "oracle", "z", "pass"],
            ));
            out.tables.last_mut().unwrap()
        }
    };
    table.push(vec![
        label.into(),
        format!("{:.6}", lhs.mean),
        format!("{:.6}", lhs.se),
        format!("{:.6}", rhs.mean),
        format!("{:.6}", rhs.se),
        oracle.map(|o| format!("{o:.6}")).unwrap_or_default(),
        format!("{z:.3}"),
        pass.to_string(),
    ]);
}

fn closed_pair(k: &Kernel, bulk: Bulk, eta_total: u32, xi_total: u32) -> Result<DiscreteDualityPair, RunError> {
    let dynamics = ParticleDynamics::new(k, bulk, BoundaryMode::Closed)?;
    let primal = StateSpace::sector(&dynamics.caps(), eta_total)?;
    let dual = StateSpace::sector(&dynamics.caps(), xi_total)?;
    let d = site_duality(bulk).matrix(&primal, &dual, &[]);
    Ok(DiscreteDualityPair::new(dynamics.clone(), primal, dynamics, dual, d)?)
}

fn mc_duality(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let run = &plan.run;
    let init = run.init.as_deref().ok_or_else(|| missing("init"))?;
    let sigmas = run.tolerance.unwrap_or(3.0);
    let settings = |n: u64, attempt: u64| McSettings { samples: n, seed: sub_seed(run.seed, 1000 + attempt), k: sigmas };
    match plan.model.kind {
        ModelKind::Sep
        | ModelKind::Sep2j
        | ModelKind::Sip
        | ModelKind::Irw
        | ModelKind::BoundarySep
        | ModelKind::BoundarySep2j => {
            let eta0 = counts(init, "init")?;
            let xi0 = run.dual_init.clone().ok_or_else(|| missing("dual_init"))?;
            let xi_total: u32 = xi0.iter().sum();
            let pair = match plan.model.kind {
                ModelKind::BoundarySep | ModelKind::BoundarySep2j => {
                    DiscreteDualityPair::boundary_exclusion(k, plan.model.spin, xi_total)?
                }
                _ => closed_pair(k, bulk_of(plan), eta0.iter().sum(), xi_total)?,
            };
            let guarded = with_rerun(run.samples, |n, attempt| {
                mc_duality_check(&pair, &eta0, &xi0, run.t, &settings(n, attempt))
            })?;
            let c = guarded.outcome();
            let label = format!("η0={eta0:?} ξ0={xi0:?} t={}", run.t);
            mc_table(out, &label, c.lhs, c.rhs, c.oracle, c.z, guarded.passed());
            out.flag("z-score of E_η D(η_t,ξ) − E_ξ D(η,ξ_t)", &label, format!("{:.3}", c.z), guarded.passed(), rerun_note(&guarded));
        }
        ModelKind::Bmp | ModelKind::Bep | ModelKind::BoundaryBep => {
            let model = match plan.model.kind {
                ModelKind::Bmp if plan.model.m != 1 => {
                    return Err(bad("mc-duality for bmp needs m = 1 (one level per site)".into()))
                }
                ModelKind::Bmp => DiffusionModel::Bmp,
                _ => DiffusionModel::Bep { m: plan.model.m },
            };
            let xi0 = run.dual_init.clone().ok_or_else(|| missing("dual_init"))?;
            let gate = DtGate::default();
            let guarded = with_rerun(run.samples, |n, attempt| {
                mc_diffusion_duality_check(k, model, init, &xi0, run.t, &settings(n, attempt), &gate)
            })?;
            let r = guarded.outcome();
            let c = &r.comparison;
            let label = format!("z0={init:?} ξ0={xi0:?} t={}", run.t);
            mc_table(out, &label, c.lhs, c.rhs, c.oracle, c.z, guarded.passed());
            out.notes.push(format!("accepted dt = {:.3e}, gate passed: {}", r.dt, r.gate_passed));
            out.flag("z-score of E_z D(z_t,ξ) − E_ξ D(z,ξ_t)", &label, format!("{:.3}", c.z), guarded.passed(), rerun_note(&guarded));
        }
        ModelKind::DualAbsorbingSep2j | ModelKind::DualAbsorbingSip => {
            let xi0 = counts(init, "init")?;
            let dual = ParticleDynamics::new(k, bulk_of(plan), BoundaryMode::Absorbing)?;
            let guarded = with_rerun(run.samples, |n, attempt| mc_absorption_check(&dual, &xi0, &settings(n, attempt)))?;
            let c = guarded.outcome();
            let label = format!("ξ0={xi0:?}");
            mc_table(out, &label, c.lhs, c.rhs, c.oracle, c.z, guarded.passed());
            out.flag("z-score of absorbed E∏param − exact solve", &label, format!("{:.3}", c.z), guarded.passed(), rerun_note(&guarded));
        }
        other => return Err(bad(format!("mc-duality is not available for {other}"))),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// profile

fn profile(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let model = match plan.model.kind {
        ModelKind::BoundarySep | ModelKind::BoundarySep2j | ModelKind::DualAbsorbingSep2j => {
            BoundaryModel::Sep2j(plan.model.spin)
        }
        _ => BoundaryModel::Bep { m: plan.model.m },
    };
    if k.n_sinks() == 0 {
        return Err(bad("profile needs boundary sites with reservoir values".into()));
    }
    let thermalized = matches!(plan.model.kind, ModelKind::Kmp | ModelKind::DualKmp);
    let correlations = plan.run.correlations && !thermalized;
    if plan.run.correlations && thermalized {
        out.notes.push("two-point functions are not computed for thermalized models".into());
    }
    let prof = stationary_profile(k, model, correlations)?;
    let quantity = if matches!(model, BoundaryModel::Sep2j(_)) { "E[eta]" } else { "E[z]" };
    let mut table = Table::new("profile", &["site", quantity, "value"]);
    for (name, mean) in k.names().iter().zip(&prof.mean) {
        table.push(vec![name.clone(), mean.to_string(), format!("{:.12}", to_f64(mean))]);
    }
    out.tables.push(table);
    if correlations {
        let mut table = Table::new("covariance", &["site_a", "site_b", "cov", "value"]);
        for (a, b, c) in &prof.covariance {
            table.push(vec![k.names()[*a].clone(), k.names()[*b].clone(), c.to_string(), format!("{:.12}", to_f64(c))]);
        }
        out.tables.push(table);
    }
    if plan.linear_expected {
        let affine = is_affine(&prof.mean);
        out.flag("profile is linear", &format!("{} sites", k.n_sites()), affine.to_string(), affine, None);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// limits

fn limit_table(out: &mut Outcome, name: &str, column: &str, rows: &[LimitRow]) {
    let mut table = Table::new(name, &[column, "distance"]);
    for r in rows {
        table.push(vec![r.parameter.to_string(), format!("{:.6e}", r.distance)]);
    }
    out.tables.push(table);
}

fn decreasing(rows: &[LimitRow]) -> bool {
    rows.windows(2).all(|w| w[1].distance < w[0].distance)
}

fn limits(plan: &Plan, out: &mut Outcome) -> Result<(), RunError> {
    let k = &plan.kernel;
    let run = &plan.run;
    let init = run.init.as_deref().ok_or_else(|| missing("init"))?;
    match plan.model.kind {
        ModelKind::Sep | ModelKind::Sep2j => {
            let scales = run.scales.clone().unwrap_or(vec![4, 16, 64]);
            let rows = limit_check_j(k, &scales, &counts(init, "init")?, run.t)?;
            limit_table(out, "limit_j", "two_j", &rows);
            out.flag("TV(2j-SEP at t/2j, IRW at t) decreasing", "", format!("{} values", rows.len()), decreasing(&rows), None);
        }
        ModelKind::Sip => {
            let scales = run.scales.clone().unwrap_or(vec![2, 8, 32]);
            let rows = limit_check_m(k, &scales, &counts(init, "init")?, run.t)?;
            limit_table(out, "limit_m", "m", &rows);
            out.flag("TV(SIP at t/m, rate-2 IRW at t) decreasing", "", format!("{} values", rows.len()), decreasing(&rows), None);
        }
        ModelKind::Bep => {
            let tol = run.tolerance.unwrap_or(1e-3);
            let (flow, dt) = euler_limit_flow(k, init, run.t, tol / 10.0);
            let mut table = Table::new("deterministic_limit", &["site", "z"]);
            for (name, z) in k.names().iter().zip(&flow) {
                table.push(vec![name.clone(), format!("{z:.9}")]);
            }
            out.tables.push(table);
            out.notes.push(format!("limiting flow integrated with dt = {dt:.3e}"));
            if k.n_sites() == 2 && *k == Kernel::chain(2) {
                let (a, b) = dualbench::models::deterministic_flow((init[0], init[1]), 2.0 * run.t);
                let err = (flow[0] - a).abs().max((flow[1] - b).abs());
                out.flag("limiting flow − closed form", "2 sites", format!("{err:.3e}"), err < tol, None);
                let scales = run.scales.clone().unwrap_or(vec![2, 8, 32]);
                let rows = deterministic_limit_rms(&scales, (init[0], init[1]), run.t)?;
                limit_table(out, "limit_m", "m", &rows);
                out.flag("RMS(z at t/m, flow) decreasing", "", format!("{} values", rows.len()), decreasing(&rows), None);
            }
        }
        other => return Err(bad(format!("limits are not available for {other}"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn run(text: &str) -> Outcome {
        execute(&ExperimentConfig::parse(text).unwrap().plan(None).unwrap()).unwrap()
    }

    #[test]
    fn sep2j_duality_records() {
        let out = run("[model]\nkind = \"sep2j\"\nj = 1\n[graph]\nchain = 3\n[run]\nexperiment = \"check-duality\"\n");
        assert!(out.passed());
        assert!(out.records.iter().any(|r| r.identity == "LD−DLᵀ residual" && r.residual == "0"));
        assert!(out.records.iter().any(|r| r.identity.starts_with("S Q⁻¹")));
    }

    #[test]
    fn symmetry_route_for_every_closed_family() {
        for model in ["kind = \"sip\"\nm = 3", "kind = \"irw\"", "kind = \"sep\""] {
            let out = run(&format!("[model]\n{model}\n[graph]\nchain = 2\n[run]\nexperiment = \"check-duality\"\nsector = 3\n"));
            assert!(out.passed(), "{model}: {:?}", out.records);
            assert!(out.records.iter().any(|r| r.identity.starts_with("S Q⁻¹")));
        }
    }

    #[test]
    fn algebra_for_each_family() {
        for model in ["kind = \"sep2j\"\nj = \"3/2\"", "kind = \"sip\"\nm = 2", "kind = \"irw\"", "kind = \"bep\"\nm = 3", "kind = \"bmp\""] {
            let out = run(&format!("[model]\n{model}\n[graph]\nchain = 2\n[run]\nexperiment = \"check-algebra\"\ncutoff = 8\n"));
            assert!(out.passed(), "{model}: {:?}", out.records);
            assert_eq!(out.records.len(), 4);
        }
    }

    #[test]
    fn kmp_profile_is_linear() {
        let out = run(
            "[model]\nkind = \"kmp\"\nm = 2\nT = { \"1\" = 1, \"4\" = 2 }\n[graph]\nchain = 4\n[run]\nexperiment = \"profile\"\n",
        );
        assert!(out.passed());
        let means: Vec<&str> = out.tables[0].rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(means, ["18/7", "20/7", "22/7", "24/7"]);
    }

    #[test]
    fn thermalized_and_boundary_checks() {
        let out = run("[model]\nkind = \"dual_kmp\"\nm = 3\n[graph]\nchain = 3\n[run]\nexperiment = \"check-duality\"\nsector = 2\n");
        assert!(out.passed());
        let out = run(
            "[model]\nkind = \"boundary_bep\"\nm = 2\nT = { \"1\" = \"1/2\", \"3\" = 2 }\n[graph]\nchain = 3\n[run]\nexperiment = \"check-duality\"\nsector = 2\n",
        );
        assert!(out.passed());
        assert_eq!(out.records.len(), 3);
    }

    #[test]
    fn ladder_and_stationary() {
        let out = run("[model]\nkind = \"ladder_sep\"\nj = 1\n[graph]\nchain = 2\n[run]\nexperiment = \"check-duality\"\nsector = 2\n");
        assert!(out.passed(), "{:?}", out.records);
        for model in ["kind = \"sep2j\"\nj = 1\nlambda = \"1/3\"", "kind = \"sip\"\nm = 2", "kind = \"irw\"\nlambda = 2", "kind = \"kmp\""] {
            let out = run(&format!("[model]\n{model}\n[graph]\nchain = 3\n[run]\nexperiment = \"check-stationary\"\nsector = 3\nsamples = 2000\n"));
            assert!(out.passed(), "{model}: {:?}", out.records);
        }
    }

    #[test]
    fn missing_init_is_a_config_error() {
        let plan = ExperimentConfig::parse("[model]\nkind = \"sep\"\n[graph]\nchain = 2\n[run]\nexperiment = \"simulate\"\n")
            .unwrap()
            .plan(None)
            .unwrap();
        assert!(matches!(execute(&plan), Err(RunError::Config(_))));
    }
}
