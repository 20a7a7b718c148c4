use faer::{Mat, Par};
use rayon::prelude::*;

use super::kernel::{fit_and_predict, ParamDraw, QuerySide};
use super::rng::{self, slot, Role};
use super::{teacher, worker_threads, Experiment, FeatureMode, Model, VAR_EPS, VAR_P, VAR_X};
use crate::anova::{mobius_variance, HTable, SubsetIndex, VarDecomp};
use crate::error::SimError;
use crate::stats::{jackknife_se, mean, mean_estimate, pairwise_sum, Estimate};

/// Replicates needed for a meaningful jackknife.
pub const MIN_REPLICATES: usize = 8;

/// Predictions of one replicate's predictors at the test points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutput {
    /// Indexed by mask; entry `s` takes the base draw of every variable in
    /// `s` and the copy of the rest.
    pub predictions: Vec<Vec<f64>>,
    /// Training loss of the base predictor.
    pub train_loss: f64,
}

/// Test predictions of every base learner of one replicate. Parameters come
/// in `k_p` members, data in `k_d` members, and each member has a base and a
/// copy draw. The noise of data member `j` is tied to that member but has
/// its own base/copy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBank {
    pub k_p: usize,
    pub k_d: usize,
    preds: Vec<Vec<f64>>,
    /// Training loss of learner (P₀, X₀, ε₀) on the base side.
    pub train_loss: f64,
}

impl PredictionBank {
    fn index(&self, p: usize, p_copy: bool, d: usize, x_copy: bool, e_copy: bool) -> usize {
        let ps = slot(p, p_copy) as usize;
        let xs = slot(d, x_copy) as usize;
        (ps * 2 * self.k_d + xs) * 2 + usize::from(e_copy)
    }

    pub fn learner(&self, p: usize, p_copy: bool, d: usize, x_copy: bool, e_copy: bool) -> &[f64] {
        &self.preds[self.index(p, p_copy, d, x_copy, e_copy)]
    }

    /// Average of the first `k_p × k_d` members. On the base side a variable
    /// in `mask` uses its base draw; on the copy side the roles are swapped.
    pub fn ensemble(&self, k_p: usize, k_d: usize, mask: SubsetIndex, base_side: bool) -> Vec<f64> {
        assert!(k_p <= self.k_p && k_d <= self.k_d, "ensemble larger than the bank");
        let copy = |var: usize| mask.contains(var) != base_side;
        let n = self.preds[0].len();
        let mut out = vec![0.0; n];
        for p in 0..k_p {
            for d in 0..k_d {
                let v = self.learner(p, copy(VAR_P), d, copy(VAR_X), copy(VAR_EPS));
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
        let w = 1.0 / (k_p * k_d) as f64;
        out.iter_mut().for_each(|o| *o *= w);
        out
    }
}

fn param_draw(exp: &Experiment, r: u32, member: usize, copy: bool) -> ParamDraw {
    let c = &exp.config;
    let s = slot(member, copy);
    let w1 = rng::normal_mat(&mut rng::stream(c.base_seed, Some(r), Role::W1, s), c.n1, c.n0);
    let w2 = match c.model {
        Model::Rf => vec![0.0; c.n1],
        Model::Ntk => rng::normal_vec(&mut rng::stream(c.base_seed, Some(r), Role::W2, s), c.n1, c.sigma_w2),
    };
    ParamDraw { w1, w2 }
}

/// All learners of replicate `r` for ensembles up to `k_p × k_d`. Member 0
/// is the same draw whatever the ensemble size.
pub fn replicate_bank(exp: &Experiment, r: u32, k_p: usize, k_d: usize) -> Result<PredictionBank, SimError> {
    let c = &exp.config;
    if k_p == 0 || k_d == 0 || k_p > 127 || k_d > 127 {
        return Err(SimError::InvalidConfig(format!("ensemble sizes ({k_p}, {k_d}) out of range")));
    }
    let gauss = c.feature_mode == FeatureMode::GaussianEquivalent;
    let seed = c.base_seed;

    let mut data = Vec::with_capacity(2 * k_d);
    for d in 0..k_d {
        for copy in [false, true] {
            let s = slot(d, copy);
            let x = rng::normal_mat(&mut rng::stream(seed, Some(r), Role::X, s), c.n0, c.m);
            let eps = rng::normal_vec(&mut rng::stream(seed, Some(r), Role::Eps, s), c.m, c.sigma_eps);
            let clean = teacher(&exp.beta, &x);
            data.push((x, clean, eps));
        }
    }

    let mut bank = PredictionBank {
        k_p,
        k_d,
        preds: vec![Vec::new(); 8 * k_p * k_d],
        train_loss: f64::NAN,
    };
    for p in 0..k_p {
        for p_copy in [false, true] {
            let ps = slot(p, p_copy);
            let param = param_draw(exp, r, p, p_copy);
            let theta_test = gauss
                .then(|| rng::normal_mat(&mut rng::stream(seed, Some(r), Role::ThetaTest, ps), c.n1, c.n_test));
            let query = QuerySide::new(c, &exp.moments, &param, &exp.test_points, theta_test.as_ref().map(|t| t.as_ref()));
            for d in 0..k_d {
                for x_copy in [false, true] {
                    let xs = slot(d, x_copy);
                    let (x, clean, _) = &data[xs as usize];
                    let eps = [&data[slot(d, false) as usize].2, &data[slot(d, true) as usize].2];
                    let labels = Mat::from_fn(c.m, 2, |i, j| clean[i] + eps[j][i]);
                    let theta_train = gauss.then(|| {
                        rng::normal_mat(
                            &mut rng::stream(seed, Some(r), Role::ThetaF, ps | (xs << 8)),
                            c.n1,
                            c.m,
                        )
                    });
                    let fit = fit_and_predict(exp, &param, &query, x, theta_train.as_ref().map(|t| t.as_ref()), &labels)?;
                    if p == 0 && d == 0 && !p_copy && !x_copy {
                        bank.train_loss = fit.train_loss[0];
                    }
                    for (e, pred) in fit.predictions.into_iter().enumerate() {
                        let i = bank.index(p, p_copy, d, x_copy, e == 1);
                        bank.preds[i] = pred;
                    }
                }
            }
        }
    }
    Ok(bank)
}

/// Draws base and copy for replicate `r` and evaluates the eight coupled
/// predictors at the test points.
pub fn run_replicate(exp: &Experiment, replicate: u32) -> Result<ReplicateOutput, SimError> {
    let bank = replicate_bank(exp, replicate, 1, 1)?;
    let predictions = (0..8).map(|s| bank.ensemble(1, 1, SubsetIndex(s), true)).collect();
    Ok(ReplicateOutput {
        predictions,
        train_loss: bank.train_loss,
    })
}

/// Prediction banks for every replicate, computed in parallel on
/// `FGDD_THREADS` workers. The result does not depend on the worker count.
pub fn simulate_banks(exp: &Experiment, k_p: usize, k_d: usize) -> Result<Vec<PredictionBank>, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| SimError::InvalidConfig(format!("thread pool: {e}")))?;
    faer::set_global_parallelism(Par::Seq);
    let n = u32::try_from(exp.config.n_replicates)
        .map_err(|_| SimError::InvalidConfig("too many replicates".into()))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|r| replicate_bank(exp, r, k_p, k_d))
            .collect()
    })
}

/// Monte Carlo estimates of the decomposition with jackknife errors.
#[derive(Debug, Clone)]
pub struct SimEstimates {
    pub h: HTable,
    pub v: VarDecomp,
    pub bias: Estimate,
    /// `H_PXε − H_∅`
    pub total_variance: Estimate,
    /// Sample variance of the independent predictors, averaged over test points.
    pub plugin_variance: Estimate,
    pub e_test: Estimate,
    pub e_train: Estimate,
    pub n_replicates: usize,
}

impl SimEstimates {
    /// Estimate for the ANOVA term of `mask`.
    pub fn variance(&self, mask: SubsetIndex) -> Estimate {
        Estimate::new(self.v.get(mask), self.v.std_error(mask))
    }

    /// `[B, V_P, V_X, V_ε, V_PX, V_Pε, V_Xε, V_PXε]`, matching the order of
    /// the theory terms.
    pub fn terms(&self) -> [Estimate; 8] {
        let v = |m: u32| self.variance(SubsetIndex(m));
        [self.bias, v(0b001), v(0b010), v(0b100), v(0b011), v(0b101), v(0b110), v(0b111)]
    }

    /// Estimates for a `k_p × k_d` ensemble from banks at least that large.
    pub fn from_banks(
        banks: &[PredictionBank],
        labels: &[f64],
        k_p: usize,
        k_d: usize,
    ) -> Result<Self, SimError> {
        let r = banks.len();
        if r < MIN_REPLICATES {
            return Err(SimError::TooFewReplicates {
                min: MIN_REPLICATES,
                got: r,
            });
        }
        let full = SubsetIndex::full(3);
        let summaries: Vec<Summary> = banks.iter().map(|b| Summary::new(b, labels, k_p, k_d)).collect();

        let mut h = HTable::new(3).expect("three variables");
        for s in 0..8u32 {
            let e = mean_estimate(&summaries.iter().map(|x| x.h[s as usize]).collect::<Vec<_>>());
            h.set(SubsetIndex(s), e.value, e.std_error);
        }
        let mut v = mobius_variance(&h).expect("complete table");
        for s in 1..8u32 {
            let mask = SubsetIndex(s);
            let contrast: Vec<f64> = summaries.iter().map(|x| mobius_term(&x.h, mask)).collect();
            v.set_std_error(mask, mean_estimate(&contrast).std_error);
        }
        let total_variance = mean_estimate(&summaries.iter().map(|x| x.h[full.0 as usize] - x.h[0]).collect::<Vec<_>>());
        let (bias, plugin_variance) = bias_and_variance(&summaries, labels);
        let e_test = mean_estimate(&summaries.iter().map(|x| x.mse).collect::<Vec<_>>());
        let e_train = mean_estimate(&banks.iter().map(|b| b.train_loss).collect::<Vec<_>>());
        Ok(Self {
            h,
            v,
            bias,
            total_variance,
            plugin_variance,
            e_test,
            e_train,
            n_replicates: r,
        })
    }
}

fn mobius_term(h: &[f64; 8], mask: SubsetIndex) -> f64 {
    mask.subsets()
        .map(|t| {
            let sign = if (mask.len() - t.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * h[t.0 as usize]
        })
        .sum()
}

struct Summary {
    /// `½(⟨ŷ, ŷ_s⟩ + ⟨ŷ̃, ŷ̃_s⟩)`: both the base and the copy predictor serve
    /// as the reference.
    h: [f64; 8],
    base: Vec<f64>,
    copy: Vec<f64>,
    mse: f64,
}

impl Summary {
    fn new(bank: &PredictionBank, labels: &[f64], k_p: usize, k_d: usize) -> Self {
        let base = bank.ensemble(k_p, k_d, SubsetIndex::full(3), true);
        let copy = bank.ensemble(k_p, k_d, SubsetIndex::full(3), false);
        let dot = |a: &[f64], b: &[f64]| mean(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
        let mut h = [0.0; 8];
        for (s, hs) in h.iter_mut().enumerate() {
            let mask = SubsetIndex(s as u32);
            let hb = dot(&base, &bank.ensemble(k_p, k_d, mask, true));
            let hc = dot(&copy, &bank.ensemble(k_p, k_d, mask, false));
            *hs = 0.5 * (hb + hc);
        }
        let sq = |p: &[f64]| mean(&p.iter().zip(labels).map(|(a, y)| (a - y).powi(2)).collect::<Vec<_>>());
        let mse = 0.5 * (sq(&base) + sq(&copy));
        Self { h, base, copy, mse }
    }
}

/// Bias of the mean predictor, corrected for the variance of the sample mean,
/// and the plug-in variance, from the `2R` independent base and copy
/// predictions. Errors by delete-one-replicate jackknife.
fn bias_and_variance(summaries: &[Summary], labels: &[f64]) -> (Estimate, Estimate) {
    let nt = labels.len();
    let r = summaries.len();
    let mut s1 = vec![0.0; nt];
    let mut s2 = vec![0.0; nt];
    for t in 0..nt {
        let a: Vec<f64> = summaries.iter().flat_map(|s| [s.base[t], s.copy[t]]).collect();
        s1[t] = pairwise_sum(&a);
        s2[t] = pairwise_sum(&a.iter().map(|x| x * x).collect::<Vec<_>>());
    }
    let stats = |drop: Option<usize>| {
        let n = (2 * r - if drop.is_some() { 2 } else { 0 }) as f64;
        let mut bias = Vec::with_capacity(nt);
        let mut var = Vec::with_capacity(nt);
        for t in 0..nt {
            let (mut a, mut b) = (s1[t], s2[t]);
            if let Some(i) = drop {
                let s = &summaries[i];
                a -= s.base[t] + s.copy[t];
                b -= s.base[t].powi(2) + s.copy[t].powi(2);
            }
            let mu = a / n;
            let s2t = ((b - a * mu) / (n - 1.0)).max(0.0);
            bias.push((mu - labels[t]).powi(2) - s2t / n);
            var.push(s2t);
        }
        (mean(&bias), mean(&var))
    };
    let (b, v) = stats(None);
    let loo: Vec<(f64, f64)> = (0..r).map(|i| stats(Some(i))).collect();
    let b_se = jackknife_se(&loo.iter().map(|x| x.0).collect::<Vec<_>>());
    let v_se = jackknife_se(&loo.iter().map(|x| x.1).collect::<Vec<_>>());
    (Estimate::new(b, b_se), Estimate::new(v, v_se))
}

/// Runs all replicates and estimates the decomposition of the single
/// predictor.
pub fn estimate_decomposition(exp: &Experiment) -> Result<SimEstimates, SimError> {
    if exp.config.n_replicates < MIN_REPLICATES {
        return Err(SimError::TooFewReplicates {
            min: MIN_REPLICATES,
            got: exp.config.n_replicates,
        });
    }
    let banks = simulate_banks(exp, 1, 1)?;
    SimEstimates::from_banks(&banks, &exp.test_labels, 1, 1)
}
