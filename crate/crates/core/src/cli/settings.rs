use std::fs;
use std::path::PathBuf;

use clap::Parser;

use super::args::{AxisArg, CommonArgs, FeatureModeArg, FileArgs, ModelArg};
use super::sweep::{parse_grid, SweepAxis, SweepSpec};
use super::CliError;
use crate::moments::{sigma_eps_for_snr, Activation};
use crate::simulator::{FeatureMode, Model, SimConfig};
use crate::tau::ModelShape;

/// Fully resolved options: flags over config file over defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub phi: f64,
    pub psi: f64,
    pub gamma: f64,
    pub sigma_w2: f64,
    pub sigma_eps: f64,
    pub snr: Option<f64>,
    pub activation: String,
    pub model: Model,
    pub centering: bool,
    pub feature_mode: FeatureMode,
    pub m: usize,
    pub n0: usize,
    pub n1: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub seed: u64,
    pub sweep: Option<SweepSpec>,
    pub out: Option<PathBuf>,
}

/// Reads `key = value` lines. `#` starts a comment; keys may use `-` or `_`.
pub fn read_config_file(path: &PathBuf) -> Result<CommonArgs, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut argv = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), no + 1)))?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        argv.push(format!("--{key}"));
        argv.push(value.trim().to_string());
    }
    FileArgs::try_parse_from(argv)
        .map(|f| f.common)
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.kind_message())))
}

trait KindMessage {
    fn kind_message(&self) -> String;
}

impl KindMessage for clap::Error {
    fn kind_message(&self) -> String {
        self.to_string().lines().next().unwrap_or("invalid config").trim_start_matches("error: ").to_string()
    }
}

impl Settings {
    pub fn resolve(flags: &CommonArgs) -> Result<Self, CliError> {
        let merged = match &flags.config {
            Some(path) => {
                let mut file = read_config_file(path)?;
                if flags.sigma_eps.is_some() || flags.snr.is_some() {
                    file.sigma_eps = None;
                    file.snr = None;
                }
                flags.over(&file)
            }
            None => flags.clone(),
        };
        Self::from_args(&merged)
    }

    fn from_args(a: &CommonArgs) -> Result<Self, CliError> {
        if a.sigma_eps.is_some() && a.snr.is_some() {
            return Err(CliError::Usage("give either sigma_eps or snr, not both".into()));
        }
        let m = a.m.unwrap_or(1024);
        let n0 = a.n0.unwrap_or(512);
        let n1 = a.n1.unwrap_or(1024);
        for (k, v) in [("m", m), ("n0", n0), ("n1", n1)] {
            if v == 0 {
                return Err(CliError::Usage(format!("--{k} must be positive")));
            }
        }
        let model = match a.model.unwrap_or(ModelArg::Rf) {
            ModelArg::Rf => Model::Rf,
            ModelArg::Ntk => Model::Ntk,
        };
        let sigma_w2 = match model {
            Model::Rf => {
                if a.sigma_w2.is_some_and(|s| s != 0.0) {
                    return Err(CliError::Usage("--sigma-w2 needs --model ntk".into()));
                }
                0.0
            }
            Model::Ntk => a.sigma_w2.unwrap_or(1.0),
        };
        let sigma_eps = match (a.sigma_eps, a.snr) {
            (Some(s), _) => s,
            (None, Some(snr)) if snr > 0.0 => sigma_eps_for_snr(snr),
            (None, Some(snr)) => return Err(CliError::Usage(format!("snr must be positive, got {snr}"))),
            (None, None) => 0.0,
        };
        let sweep = match (a.sweep_axis, &a.grid) {
            (Some(axis), Some(grid)) => Some(SweepSpec::new(axis_of(axis), parse_grid(grid)?)?),
            (None, None) => None,
            (Some(_), None) => return Err(CliError::Usage("--sweep-axis needs --grid".into())),
            (None, Some(_)) => return Err(CliError::Usage("--grid needs --sweep-axis".into())),
        };
        let s = Self {
            phi: a.phi.unwrap_or(n0 as f64 / m as f64),
            psi: a.psi.unwrap_or(n0 as f64 / n1 as f64),
            gamma: a.gamma.unwrap_or(1e-6),
            sigma_w2,
            sigma_eps,
            snr: a.snr,
            activation: a.activation.clone().unwrap_or_else(|| "tanh".into()),
            model,
            centering: a.centering.unwrap_or(false),
            feature_mode: match a.feature_mode.unwrap_or(FeatureModeArg::Exact) {
                FeatureModeArg::Exact => FeatureMode::Exact,
                FeatureModeArg::GaussianEquivalent => FeatureMode::GaussianEquivalent,
            },
            m,
            n0,
            n1,
            n_test: a.n_test.unwrap_or(512),
            replicates: a.replicates.unwrap_or(64),
            seed: a.seed.unwrap_or(0),
            sweep,
            out: a.out.clone(),
        };
        s.activation()?;
        s.shape().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }

    pub fn activation(&self) -> Result<Activation, CliError> {
        Activation::from_name(&self.activation).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            phi: self.phi,
            psi: self.psi,
            gamma: self.gamma,
            sigma_w2: self.sigma_w2,
            sigma_eps: self.sigma_eps,
            centering: self.centering,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let cfg = SimConfig {
            m: self.m,
            n0: self.n0,
            n1: self.n1,
            activation: self.activation()?,
            gamma: self.gamma,
            sigma_eps: self.sigma_eps,
            model: self.model,
            sigma_w2: self.sigma_w2,
            centering: self.centering,
            feature_mode: self.feature_mode,
            n_test: self.n_test,
            n_replicates: self.replicates,
            base_seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// The effective options as `(key, value)` pairs for the CSV preamble.
    pub fn echo(&self, simulation: bool) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = vec![
            ("activation", self.activation.clone()),
            ("model", self.model.to_string()),
        ];
        if simulation {
            out.extend([
                ("m", self.m.to_string()),
                ("n0", self.n0.to_string()),
                ("n1", self.n1.to_string()),
                ("n_test", self.n_test.to_string()),
                ("replicates", self.replicates.to_string()),
                ("seed", self.seed.to_string()),
                ("feature_mode", self.feature_mode.to_string()),
            ]);
        }
        out.extend([
            ("phi", fmt_f64(self.phi)),
            ("psi", fmt_f64(self.psi)),
            ("gamma", fmt_f64(self.gamma)),
            ("sigma_w2", fmt_f64(self.sigma_w2)),
            ("sigma_eps", fmt_f64(self.sigma_eps)),
            ("centering", self.centering.to_string()),
        ]);
        if let Some(snr) = self.snr {
            out.push(("snr", fmt_f64(snr)));
        }
        if let Some(sw) = &self.sweep {
            out.push(("sweep_axis", sw.axis.name().to_string()));
            out.push(("grid", sw.grid.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

fn axis_of(a: AxisArg) -> SweepAxis {
    match a {
        AxisArg::N1OverM => SweepAxis::N1OverM,
        AxisArg::Gamma => SweepAxis::Gamma,
        AxisArg::Snr => SweepAxis::Snr,
        AxisArg::SigmaW2 => SweepAxis::SigmaW2,
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}
