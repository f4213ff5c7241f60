//! `ggflow`: runs one experiment from a JSON configuration and writes
//! `report.json` plus CSV tables to the output directory.
//!
//! Exit status: 0 when every check passes, 1 when a check or a numerical
//! solve fails, 2 when the configuration is invalid.

mod config;
mod report;

use clap::Parser;
use config::{ConfigError, ExperimentConfig, Scenario};
use ggflow::dvt::{dvt_cost, feasible_curve, DvtProblem};
use ggflow::evolution::{solve_forward, EvolveOptions};
use ggflow::functionals::{edb_deficit, edge_diagnostics, energy, fisher};
use ggflow::jko::{mm_solve, step_options, StepRecord};
use ggflow::ldp::{empirical_path, gillespie, rate_i};
use ggflow::{ce_residual, io, make_dissipation, tv_distance, DissipationSpec, Entropy, GraphSystem, Measure};
use log::info;
use report::{Check, Report};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "ggflow", version, about = "Generalized gradient flows on finite graphs")]
struct Args {
    /// Scenario to run; overrides the `scenario` key of the configuration.
    #[arg(value_enum)]
    scenario: Option<Scenario>,
    /// Experiment configuration (JSON). Repeat to run a batch in parallel;
    /// each run then writes to a subdirectory named after its config file.
    #[arg(long, short, required = true)]
    config: Vec<PathBuf>,
    /// Same as the positional scenario.
    #[arg(long = "scenario", value_enum, conflicts_with = "scenario")]
    scenario_flag: Option<Scenario>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out`; defaults to `ggflow-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<ggflow::Error> for Failure {
    fn from(e: ggflow::Error) -> Self {
        Failure::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

struct Setup {
    cfg: ExperimentConfig,
    system: GraphSystem,
    spec: DissipationSpec,
    entropy: Entropy,
    rho0: Measure,
    out: PathBuf,
}

fn setup(args: &Args, config: &Path, batch: bool) -> Result<(Scenario, Setup), Failure> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scenario = args
        .scenario
        .or(args.scenario_flag)
        .or(cfg.scenario)
        .ok_or_else(|| Failure::Config("scenario: not given on the command line or in the config".into()))?;
    cfg.validate(scenario)?;
    let system = GraphSystem::from_file(&cfg.system_file()?).map_err(|e| Failure::Config(format!("system: {e}")))?;
    let spec = make_dissipation(&cfg.dissipation).map_err(|e| Failure::Config(format!("dissipation: {e}")))?;
    let entropy = cfg
        .entropy
        .build()
        .map_err(|e| Failure::Config(format!("entropy: {e}")))?;
    let rho0 = Measure::from_density(&system, &cfg.initial).map_err(|e| Failure::Config(format!("initial: {e}")))?;
    let mut out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("ggflow-out"));
    if batch {
        out.push(config.file_stem().unwrap_or(config.as_os_str()));
    }
    std::fs::create_dir_all(&out)?;
    Ok((
        scenario,
        Setup {
            cfg,
            system,
            spec,
            entropy,
            rho0,
            out,
        },
    ))
}

/// Writes `dir/name` through a temporary file in the same directory.
fn atomic<F>(dir: &Path, name: &str, fill: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Failure>,
{
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

fn run_evolve(s: &Setup, report: &mut Report, full_checks: bool) -> Result<(), Failure> {
    let e = &s.cfg.evolve;
    let opts = EvolveOptions {
        t_end: e.t_end,
        dt: e.dt,
        rtol: e.rtol,
        atol: e.atol,
    };
    let tr = solve_forward(&s.system, &s.spec, &s.entropy, &s.rho0.u, &opts)?;
    let curve = tr.curve();
    info!(
        "evolution: {} grid points, {} integrator steps",
        tr.times.len(),
        tr.stats.steps
    );

    let m0 = s.rho0.mass();
    let drift = tr.states.iter().map(|m| (m.mass() - m0).abs()).fold(0.0, f64::max);
    let energies: Vec<f64> = tr.states.iter().map(|m| energy(&s.entropy, &s.system, m)).collect();
    let rise = energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let ce = ce_residual(&s.system, &curve)?;
    let last = tr.final_state();
    report.result("energy_start", energies[0]);
    report.result("energy_end", *energies.last().expect("nonempty"));
    report.result("final_density", &last.u);
    report.result("integrator", tr.stats);
    report.result("ce_residual", ce.residual);
    report.check(Check::at_most(
        "mass_conservation",
        drift / m0.max(f64::MIN_POSITIVE),
        s.cfg.tolerances.mass_rel,
    ));
    report.check(Check::at_most("continuity_equation", ce.residual, s.cfg.tolerances.ce));
    report.check(Check::at_most(
        "energy_nonincreasing",
        rise,
        1e-10 * energies[0].abs().max(1.0),
    ));

    if full_checks {
        if ce.residual <= s.cfg.tolerances.ce {
            let edb = edb_deficit(&s.spec, &s.entropy, &s.system, &curve, s.cfg.tolerances.ce)?;
            let rel = edb.deficit.abs() / edb.energy_start.abs().max(f64::MIN_POSITIVE);
            report.result("edb", &edb);
            report.check(Check::at_most(
                "energy_dissipation_balance",
                rel,
                s.cfg.tolerances.edb_rel,
            ));
        }
        let eq = Measure::scaled_invariant(&s.system, m0 / s.system.total_mass());
        let d_eq = fisher(&s.spec, &s.entropy, &s.system, &eq).to_f64();
        report.result("fisher_at_equilibrium", d_eq);
        report.check(Check::at_most("fisher_at_equilibrium", d_eq.abs(), 1e-12));
    } else {
        atomic(&s.out, "trajectory.csv", |w| Ok(io::write_trajectory(w, &curve)?))?;
        atomic(&s.out, "fluxes.csv", |w| Ok(io::write_fluxes(w, &s.system, &curve)?))?;
        let rows = edge_diagnostics(&s.spec, &s.entropy, &s.system, &curve)?;
        atomic(&s.out, "edges.csv", |w| Ok(io::write_edge_diagnostics(w, &rows)?))?;
    }
    Ok(())
}

fn run_dvt(s: &Setup, report: &mut Report) -> Result<(), Failure> {
    let target = s.cfg.target.as_ref().expect("validated");
    let rho1 = Measure::from_density(&s.system, target).map_err(|e| Failure::Config(format!("target: {e}")))?;
    let options = s.cfg.dvt.options();
    let tau = s.cfg.dvt.tau;
    let sol = dvt_cost(&DvtProblem {
        system: &s.system,
        spec: &s.spec,
        tau,
        rho0: s.rho0.clone(),
        rho1: rho1.clone(),
        options: options.clone(),
    })?;
    info!(
        "transport cost {:.6e} after {} Newton iterations",
        sol.value, sol.iterations
    );
    let ce = ce_residual(&s.system, &sol.curve)?;
    report.result("value", sol.value);
    report.result("value_tolerance", sol.value_tolerance);
    report.result("values", &sol.values);
    report.result("epsilon_schedule", &sol.epsilon_schedule);
    report.result("epsilon_monotone", sol.epsilon_monotone);
    report.result("kkt_residual", sol.kkt_residual);
    report.result("iterations", sol.iterations);
    report.check(Check::at_most("continuity_equation", ce.residual, s.cfg.tolerances.ce));
    report.check(Check::at_least(
        "value_nonnegative",
        sol.value + sol.value_tolerance,
        0.0,
    ));
    let positive = s.rho0.u.iter().chain(&rho1.u).all(|&x| x > 0.0);
    if positive {
        let fc = feasible_curve(&s.system, &s.spec, &s.rho0, &rho1, tau, 1.5, 2.0, options.intervals)?;
        report.result("feasible_bound", fc.bound);
        report.check(Check::at_least(
            "feasible_bound_dominates",
            fc.bound,
            sol.value - sol.value_tolerance,
        ));
    }
    atomic(&s.out, "trajectory.csv", |w| Ok(io::write_trajectory(w, &sol.curve)?))?;
    atomic(&s.out, "fluxes.csv", |w| {
        Ok(io::write_fluxes(w, &s.system, &sol.curve)?)
    })?;
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceRow {
    tau: f64,
    steps: usize,
    sup_tv_gap: f64,
    discrete_edi_residual: f64,
    accumulated_tolerance: f64,
    per_step_edi: bool,
    energy_nonincreasing: bool,
}

#[derive(Serialize)]
struct StepRow {
    tau: f64,
    n: usize,
    t: f64,
    w_value: f64,
    energy: f64,
    slope_sample: f64,
    kkt_residual: f64,
    gap: f64,
    iterations: usize,
}

impl StepRow {
    fn new(tau: f64, r: &StepRecord) -> Self {
        Self {
            tau,
            n: r.n,
            t: r.t,
            w_value: r.w_value,
            energy: r.energy,
            slope_sample: r.slope_sample,
            kkt_residual: r.kkt_residual,
            gap: r.gap,
            iterations: r.iterations,
        }
    }
}

fn write_csv<R: Serialize>(dir: &Path, name: &str, rows: &[R]) -> Result<(), Failure> {
    atomic(dir, name, |out| {
        let mut w = csv::Writer::from_writer(out);
        for r in rows {
            w.serialize(r).map_err(|e| Failure::Numeric(format!("{name}: {e}")))?;
        }
        w.flush()?;
        Ok(())
    })
}

fn run_jko(s: &Setup, report: &mut Report) -> Result<(), Failure> {
    let j = &s.cfg.jko;
    let reference = solve_forward(
        &s.system,
        &s.spec,
        &s.entropy,
        &s.rho0.u,
        &EvolveOptions {
            t_end: j.t_end,
            dt: j.reference_dt,
            rtol: s.cfg.evolve.rtol,
            atol: s.cfg.evolve.atol,
        },
    )?;
    let options = ggflow::dvt::DvtOptions {
        intervals: j.intervals,
        ..step_options()
    };
    let mut table = Vec::new();
    let mut steps = Vec::new();
    for &tau in &j.tau_list {
        let run = mm_solve(&s.system, &s.spec, &s.entropy, &s.rho0, j.t_end, tau, &options)?;
        let gap = run.sup_tv_gap(&reference.times, &reference.states);
        info!("tau = {tau}: {} steps, sup TV gap {gap:.4e}", run.records.len());
        steps.extend(run.records.iter().map(|r| StepRow::new(tau, r)));
        table.push(ConvergenceRow {
            tau,
            steps: run.records.len(),
            sup_tv_gap: gap,
            discrete_edi_residual: run.discrete_edi_residual,
            accumulated_tolerance: run.accumulated_tolerance,
            per_step_edi: run.per_step_edi,
            energy_nonincreasing: run.energy_nonincreasing,
        });
    }
    for row in &table {
        report.check(Check::at_most(
            &format!("discrete_edi[tau={}]", row.tau),
            row.discrete_edi_residual,
            row.accumulated_tolerance,
        ));
        report.check(Check {
            name: format!("per_step_edi[tau={}]", row.tau),
            passed: row.per_step_edi && row.energy_nonincreasing,
            value: if row.per_step_edi { 1.0 } else { 0.0 },
            threshold: 1.0,
        });
    }
    write_csv(&s.out, "jko_convergence.csv", &table)?;
    write_csv(&s.out, "jko_steps.csv", &steps)?;
    report.result("convergence", &table);
    Ok(())
}

fn run_ldp(s: &Setup, report: &mut Report) -> Result<(), Failure> {
    let l = &s.cfg.ldp;
    let ens = gillespie(&s.system, &s.rho0, l.particles, l.t_end, s.cfg.seed)?;
    let bins: Vec<f64> = (0..=l.bins).map(|k| k as f64 * l.t_end / l.bins as f64).collect();
    let path = empirical_path(&s.system, &ens, &bins)?;
    info!("{} particles, {} jumps", l.particles, ens.events.len());
    atomic(&s.out, "events.csv", |w| Ok(io::write_events(w, &ens.events)?))?;
    atomic(&s.out, "empirical.csv", |w| Ok(io::write_trajectory(w, &path.curve())?))?;

    let rate = rate_i(&s.system, &path.times, &path.measures, &path.flux_masses)?;
    let m0 = s.rho0.mass();
    let u_prob: Vec<f64> = s.rho0.u.iter().map(|x| x / m0).collect();
    let ode = solve_forward(
        &s.system,
        &s.spec,
        &s.entropy,
        &u_prob,
        &EvolveOptions {
            t_end: l.t_end,
            dt: l.t_end / l.bins as f64,
            rtol: s.cfg.evolve.rtol,
            atol: s.cfg.evolve.atol,
        },
    )?;
    let gap = path
        .measures
        .iter()
        .zip(&ode.states)
        .map(|(a, b)| tv_distance(&a.rho, &b.rho))
        .fold(0.0, f64::max);
    let counting = ce_residual(&s.system, &path.curve())?;
    report.result("particles", l.particles);
    report.result("jumps", ens.events.len());
    report.result("rate_functional", rate);
    report.result("lln_gap", gap);
    report.check(Check::at_most(
        "law_of_large_numbers",
        gap,
        s.cfg.tolerances.lln_scale / (l.particles as f64).sqrt(),
    ));
    report.check(Check::at_most("counting_identity", counting.residual, 1e-12));
    Ok(())
}

fn run(args: &Args, config: &Path, batch: bool) -> Result<Report, Failure> {
    let (scenario, s) = setup(args, config, batch)?;
    info!(
        "scenario {} on {} states, output in {}",
        scenario.name(),
        s.system.n(),
        s.out.display()
    );
    let mut report = Report::new(scenario.name(), s.cfg.seed);
    report.result("states", s.system.n());
    report.result("dissipation", s.spec.name());
    report.result("entropy", s.entropy.name());
    match scenario {
        Scenario::Evolve => run_evolve(&s, &mut report, false)?,
        Scenario::Check => run_evolve(&s, &mut report, true)?,
        Scenario::Dvt => run_dvt(&s, &mut report)?,
        Scenario::Jko => run_jko(&s, &mut report)?,
        Scenario::Ldp => run_ldp(&s, &mut report)?,
    }
    report.write(&s.out)?;
    Ok(report)
}

fn status(config: &Path, batch: bool, outcome: Result<Report, Failure>) -> u8 {
    let prefix = if batch {
        format!("{}: ", config.display())
    } else {
        String::new()
    };
    match outcome {
        Ok(report) if report.passed => 0,
        Ok(report) => {
            eprintln!("{prefix}error: failed checks: {}", report.failed_checks().join(", "));
            1
        }
        Err(Failure::Config(msg)) => {
            eprintln!("{prefix}error: invalid configuration: {msg}");
            2
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("{prefix}error: {msg}");
            1
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let batch = args.config.len() > 1;
    let codes: Vec<u8> = std::thread::scope(|scope| {
        let handles: Vec<_> = args
            .config
            .iter()
            .map(|c| {
                let args = &args;
                scope.spawn(move || status(c, batch, run(args, c, batch)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(1)).collect()
    });
    ExitCode::from(codes.into_iter().max().unwrap_or(0))
}
