use super::CliError;
use crate::moments::sigma_eps_for_snr;
use crate::tau::ModelShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Width over sample count, `n₁/m = φ/ψ`.
    N1OverM,
    Gamma,
    Snr,
    SigmaW2,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::N1OverM => "n1_over_m",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Snr => "snr",
            SweepAxis::SigmaW2 => "sigma_w2",
        }
    }

    /// The axis value of an unswept shape.
    pub fn value_of(self, shape: &ModelShape, snr: Option<f64>) -> f64 {
        match self {
            SweepAxis::N1OverM => shape.width_ratio(),
            SweepAxis::Gamma => shape.gamma,
            SweepAxis::Snr => snr.unwrap_or(f64::INFINITY),
            SweepAxis::SigmaW2 => shape.sigma_w2,
        }
    }

    pub fn apply(self, shape: &ModelShape, value: f64) -> ModelShape {
        let mut s = *shape;
        match self {
            SweepAxis::N1OverM => s.psi = shape.phi / value,
            SweepAxis::Gamma => s.gamma = value,
            SweepAxis::Snr => s.sigma_eps = sigma_eps_for_snr(value),
            SweepAxis::SigmaW2 => s.sigma_w2 = value,
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, grid: Vec<f64>) -> Result<Self, CliError> {
        if grid.is_empty() {
            return Err(CliError::Usage("grid is empty".into()));
        }
        let up = grid.windows(2).all(|w| w[0] < w[1]);
        let down = grid.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(CliError::Usage("grid must be strictly monotone".into()));
        }
        Ok(Self { axis, grid })
    }

    /// Shapes along the grid. At `γ = 0` the exact interpolation threshold is
    /// dropped with a warning on stderr.
    pub fn shapes(&self, base: &ModelShape) -> Vec<(f64, ModelShape)> {
        self.grid
            .iter()
            .map(|&v| (v, self.axis.apply(base, v)))
            .filter(|(v, s)| {
                let skip = s.gamma == 0.0 && s.at_threshold();
                if skip {
                    eprintln!("warning: skipping {} = {v}: ridgeless interpolation threshold", self.axis.name());
                }
                !skip
            })
            .collect()
    }
}

/// `a,b,c` or `lo:hi:count[:log|linear]`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("bad grid value `{t}`")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(CliError::Usage(format!("range grid `{s}` must be lo:hi:count[:log|linear]")));
        }
        let lo = num(parts[0])?;
        let hi = num(parts[1])?;
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad grid count `{}`", parts[2])))?;
        let log = match parts.get(3).map(|p| p.trim()) {
            None | Some("linear") | Some("lin") => false,
            Some("log") => true,
            Some(other) => return Err(CliError::Usage(format!("unknown grid spacing `{other}`"))),
        };
        if n == 0 {
            return Err(CliError::Usage("grid count must be positive".into()));
        }
        if log && !(lo > 0.0 && hi > 0.0) {
            return Err(CliError::Usage("log grid needs positive bounds".into()));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        let t = |i: usize| i as f64 / (n - 1) as f64;
        Ok((0..n)
            .map(|i| {
                if log {
                    (lo.ln() + t(i) * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + t(i) * (hi - lo)
                }
            })
            .collect())
    } else {
        s.split(',').map(num).collect()
    }
}
