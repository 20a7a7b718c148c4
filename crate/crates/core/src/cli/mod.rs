//! The `fgdd` command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 solver failure, 3 a
//! Monte Carlo estimate more than 4 standard errors from theory.

mod args;
mod output;
mod settings;
mod sweep;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

pub use args::{Cli, Command, CommonArgs};
pub use settings::{fmt_f64, read_config_file, Settings};
pub use sweep::{parse_grid, SweepAxis, SweepSpec};

use crate::decomposition::{decompose_ntk, recombine, training_loss_for, Decomposition, TERM_NAMES};
use crate::ensemble::{ensemble_test_error, optimal_ratio, scale_decomposition, simulate_ensembles, EnsembleSpec};
use crate::error::MomentsError;
use crate::moments::{compute_moments, stein_check, GaussianMoments};
use crate::simulator::{estimate_decomposition, Experiment};
use crate::stats::Estimate;
use crate::tau::{solve_tau_ntk, ModelShape};
use output::CsvOut;

/// Comparisons fail beyond this many standard errors.
pub const Z_LIMIT: f64 = 4.0;
const DEFAULT_NODES: usize = 128;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Comparison(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Comparison(_) => 3,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.command.common())?;
    match &cli.command {
        Command::Moments { nodes, .. } => cmd_moments(&settings, nodes.unwrap_or(DEFAULT_NODES)),
        Command::Theory { views, train_loss, .. } => cmd_theory(&settings, *views, *train_loss),
        Command::Simulate { .. } => cmd_simulate(&settings),
        Command::Compare { .. } => cmd_compare(&settings),
        Command::Ensemble { k_p, k_d, simulate, .. } => cmd_ensemble(&settings, k_p, k_d, *simulate),
    }
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn moments_for(settings: &Settings) -> Result<GaussianMoments, CliError> {
    let act = settings.activation()?;
    if act.is_linear() {
        return Ok(GaussianMoments::linear());
    }
    compute_moments(&act, DEFAULT_NODES).map_err(|e| CliError::Solver(e.to_string()))
}

fn cmd_moments(settings: &Settings, nodes: usize) -> Result<(), CliError> {
    let act = settings.activation()?;
    let m = compute_moments(&act, nodes).map_err(|e| match e {
        MomentsError::TooFewNodes(_) => CliError::Usage(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    })?;
    let preamble = vec![("activation".to_string(), act.name().to_string()), ("nodes".to_string(), nodes.to_string())];
    let mut out = CsvOut::create(
        settings.out.as_deref(),
        &preamble,
        &header(&["activation", "nodes", "eta", "zeta", "eta_prime", "stein_residual", "converged"]),
    )?;
    out.row(&[
        act.name().to_string(),
        m.quadrature_nodes.to_string(),
        f(m.eta),
        f(m.zeta),
        f(m.eta_prime),
        f(stein_check(&act, nodes)),
        m.converged.to_string(),
    ])?;
    out.finish()
}

fn sweep_shapes(settings: &Settings) -> (SweepAxis, Vec<(f64, ModelShape)>) {
    let base = settings.shape();
    match &settings.sweep {
        Some(sw) => (sw.axis, sw.shapes(&base)),
        None => {
            let axis = SweepAxis::N1OverM;
            (axis, vec![(axis.value_of(&base, settings.snr), base)])
        }
    }
}

fn cmd_theory(settings: &Settings, views: bool, train_loss: bool) -> Result<(), CliError> {
    let m = moments_for(settings)?;
    let (axis, shapes) = sweep_shapes(settings);
    let mut cols = vec![
        axis.name(),
        "phi",
        "psi",
        "gamma",
        "sigma_w2",
        "nu",
        "sigma_eps",
        "eta",
        "zeta",
        "eta_prime",
        "tau1",
        "tau2",
        "dtau1",
        "dtau2",
    ];
    cols.extend(TERM_NAMES);
    cols.extend(["E_test", "diverged"]);
    if views {
        cols.extend([
            "B_sc", "V_sc", "V_D_cond", "V_D_comp", "V_P_cond", "V_P_comp", "V_P_bi", "V_D_bi", "V_PD",
            "dascoli_bias", "dascoli_init", "dascoli_samp", "dascoli_noise",
        ]);
    }
    if train_loss {
        cols.extend(["T1", "T2", "E_train"]);
    }
    cols.push("status");
    let mut out = CsvOut::create(settings.out.as_deref(), &settings.echo(false), &header(&cols))?;
    let mut failures = 0;
    for (value, shape) in shapes {
        let mut row = vec![
            f(value),
            f(shape.phi),
            f(shape.psi),
            f(shape.gamma),
            f(shape.sigma_w2),
            f(shape.nu()),
            f(shape.sigma_eps),
            f(m.eta),
            f(m.zeta),
            f(m.eta_prime),
        ];
        match solve_tau_ntk(&shape, &m) {
            Ok(t) => row.extend([f(t.tau1), f(t.tau2), f(t.dtau1), f(t.dtau2)]),
            Err(_) => row.extend(std::iter::repeat_n(f(f64::NAN), 4)),
        }
        let status = match decompose_ntk(&shape, &m) {
            Ok(d) => {
                row.extend(d.terms().iter().map(|v| f(*v)));
                row.push(f(d.e_test));
                row.push(d.diverged.to_string());
                if views {
                    let r = recombine(&d);
                    row.extend(
                        [
                            r.b_sc, r.v_sc, r.v_d_cond, r.v_d_comp, r.v_p_cond, r.v_p_comp, r.v_p_bi, r.v_d_bi, r.v_pd,
                            r.dascoli_bias, r.dascoli_init, r.dascoli_samp, r.dascoli_noise,
                        ]
                        .map(f),
                    );
                }
                if d.diverged { "diverged".to_string() } else { "ok".to_string() }
            }
            Err(e) => {
                failures += 1;
                row.extend(std::iter::repeat_n(f(f64::NAN), 9));
                row.push("false".into());
                if views {
                    row.extend(std::iter::repeat_n(f(f64::NAN), 13));
                }
                format!("error: {e}")
            }
        };
        if train_loss {
            match training_loss_for(&shape, &m) {
                Ok(t) => row.extend([f(t.t1), f(t.t2), f(t.e_train)]),
                Err(_) => row.extend(std::iter::repeat_n(f(f64::NAN), 3)),
            }
        }
        row.push(status);
        out.row(&row)?;
    }
    out.finish()?;
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} grid point(s) failed; see the status column")));
    }
    Ok(())
}

fn experiment(settings: &Settings) -> Result<Experiment, CliError> {
    if settings.sweep.is_some() {
        return Err(CliError::Usage("simulations do not take a sweep".into()));
    }
    Experiment::new(settings.sim_config()?).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_simulate(settings: &Settings) -> Result<(), CliError> {
    let exp = experiment(settings)?;
    let est = estimate_decomposition(&exp).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut out = CsvOut::create(
        settings.out.as_deref(),
        &settings.echo(true),
        &header(&["quantity", "subset", "value", "std_error"]),
    )?;
    for mask in est.h.masks() {
        out.row(&[
            "H".into(),
            mask.to_bits(3),
            f(est.h.get(mask).unwrap_or(f64::NAN)),
            f(est.h.std_error(mask)),
        ])?;
    }
    for mask in est.v.subsets() {
        let e = est.variance(mask);
        out.row(&["V".into(), mask.to_bits(3), f(e.value), f(e.std_error)])?;
    }
    for (name, e) in [
        ("bias", est.bias),
        ("total_variance", est.total_variance),
        ("plugin_variance", est.plugin_variance),
        ("e_test", est.e_test),
        ("e_train", est.e_train),
    ] {
        out.row(&[name.into(), String::new(), f(e.value), f(e.std_error)])?;
    }
    out.finish()
}

fn cmd_compare(settings: &Settings) -> Result<(), CliError> {
    let exp = experiment(settings)?;
    let shape = exp.config.shape();
    let theory = decompose_ntk(&shape, &exp.moments).map_err(|e| CliError::Solver(e.to_string()))?;
    let train = training_loss_for(&shape, &exp.moments).map_err(|e| CliError::Solver(e.to_string()))?;
    let est = estimate_decomposition(&exp).map_err(|e| CliError::Solver(e.to_string()))?;

    let mut rows: Vec<(&str, f64, Estimate)> = TERM_NAMES
        .iter()
        .zip(theory.terms())
        .zip(est.terms())
        .map(|((n, t), e)| (*n, t, e))
        .collect();
    rows.push(("E_test", theory.e_test, est.e_test));
    rows.push(("E_train", train.e_train, est.e_train));

    let mut preamble = settings.echo(true);
    preamble.push(("phi_effective".into(), f(shape.phi)));
    preamble.push(("psi_effective".into(), f(shape.psi)));
    let mut out = CsvOut::create(
        settings.out.as_deref(),
        &preamble,
        &header(&["term", "theory", "estimate", "std_error", "z", "pass"]),
    )?;
    let mut failed = Vec::new();
    for (name, t, e) in rows {
        let z = e.z_score(t);
        let pass = z.abs() <= Z_LIMIT;
        if !pass {
            failed.push(name);
        }
        out.row(&[name.into(), f(t), f(e.value), f(e.std_error), f(z), pass.to_string()])?;
    }
    out.finish()?;
    if !failed.is_empty() {
        return Err(CliError::Comparison(format!(
            "|z| > {Z_LIMIT} for {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn cmd_ensemble(settings: &Settings, k_p: &[usize], k_d: &[usize], simulate: bool) -> Result<(), CliError> {
    let k_p = if k_p.is_empty() { vec![1, 2] } else { k_p.to_vec() };
    let k_d = if k_d.is_empty() { vec![1, 2] } else { k_d.to_vec() };
    let mut specs = Vec::new();
    for &p in &k_p {
        for &d in &k_d {
            specs.push(EnsembleSpec::new(p, d).map_err(|e| CliError::Usage(e.to_string()))?);
        }
    }
    let m = moments_for(settings)?;
    let (axis, shapes) = if simulate {
        let exp = experiment(settings)?;
        let s = exp.config.shape();
        (SweepAxis::N1OverM, vec![(s.width_ratio(), s)])
    } else {
        sweep_shapes(settings)
    };
    let sims = if simulate {
        let exp = experiment(settings)?;
        Some(simulate_ensembles(&exp, &specs).map_err(|e| CliError::Solver(e.to_string()))?)
    } else {
        None
    };

    let mut cols = vec![axis.name(), "phi", "psi", "gamma", "sigma_eps", "k_p", "k_d"];
    cols.extend(TERM_NAMES);
    cols.extend(["E_test", "optimal_ratio"]);
    if simulate {
        cols.extend(["E_test_sim", "E_test_sim_se", "z"]);
    }
    cols.push("status");
    let mut out = CsvOut::create(settings.out.as_deref(), &settings.echo(simulate), &header(&cols))?;
    let mut failures = 0;
    for (value, shape) in shapes {
        let d: Result<Decomposition, _> = decompose_ntk(&shape, &m);
        for (i, spec) in specs.iter().enumerate() {
            let mut row = vec![
                f(value),
                f(shape.phi),
                f(shape.psi),
                f(shape.gamma),
                f(shape.sigma_eps),
                spec.k_p.to_string(),
                spec.k_d.to_string(),
            ];
            let status = match &d {
                Ok(d) => {
                    let s = scale_decomposition(d, *spec);
                    row.extend(s.terms().map(f));
                    row.push(f(ensemble_test_error(d, *spec)));
                    row.push(f(optimal_ratio(d).unwrap_or(f64::NAN)));
                    if s.diverged { "diverged".to_string() } else { "ok".to_string() }
                }
                Err(e) => {
                    failures += 1;
                    row.extend(std::iter::repeat_n(f(f64::NAN), 10));
                    format!("error: {e}")
                }
            };
            if let Some(sims) = &sims {
                let e = sims[i].e_test;
                let theory = d.as_ref().map(|d| ensemble_test_error(d, *spec)).unwrap_or(f64::NAN);
                row.extend([f(e.value), f(e.std_error), f(e.z_score(theory))]);
            }
            row.push(status);
            out.row(&row)?;
        }
    }
    out.finish()?;
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} row(s) failed; see the status column")));
    }
    Ok(())
}
