//! Rolling-window forecasting, aggregated losses and the model confidence set.

use std::fmt;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    care_filter, empirical_expectile, es_caviar_filter, es_caviar_initial_state, fit_care_sav, fit_es_caviar,
    fit_garch_t, garch_t_risk, CareParams, EsCaviarForm, EsCaviarParams, GarchTParams,
};
use crate::caviar::{check_level, derive_seed, fit_grid, initial_quantile, pinball, CaviarParams, CaviarSpec, QuantileMatrix, INIT_WINDOW};
use crate::error::{domain, Error, Result};
use crate::optimize::MultiStartConfig;
use crate::wq::{aggregate_al_loss, al_score, build_grid, fit_es_weights, forecast_es, EsVariant, EsWeightFit, Step2Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingConfig {
    /// Estimation window length `n`.
    pub in_sample_n: usize,
    /// Number of one-step forecasts `m`.
    pub out_sample_m: usize,
    /// Steps between re-estimations.
    #[serde(default = "default_refit")]
    pub refit_interval: usize,
}

fn default_refit() -> usize {
    1
}

impl RollingConfig {
    pub fn new(in_sample_n: usize, out_sample_m: usize) -> Self {
        Self { in_sample_n, out_sample_m, refit_interval: 1 }
    }

    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.refit_interval == 0 {
            return domain("refit_interval must be at least 1");
        }
        if self.in_sample_n == 0 || self.out_sample_m == 0 {
            return domain("in-sample and out-of-sample sizes must be positive");
        }
        if self.in_sample_n + self.out_sample_m > series_len {
            return domain(format!(
                "n + m = {} exceeds series length {series_len}",
                self.in_sample_n + self.out_sample_m
            ));
        }
        Ok(())
    }
}

/// A forecaster in the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum ModelSpec {
    #[serde(rename = "WQ")]
    Wq { variant: EsVariant, spec: CaviarSpec },
    #[serde(rename = "ES-CAViaR")]
    EsCaviar { form: EsCaviarForm, spec: CaviarSpec },
    #[serde(rename = "CARE-SAV")]
    CareSav { grid_size: usize },
    #[serde(rename = "GARCH-t")]
    GarchT,
}

impl ModelSpec {
    /// e.g. `WQ-Beta-3-SAV`, `ES-CAViaR-Add-AS`, `CARE-SAV`, `GARCH-t`.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Wq { variant, spec } => format!("{}-{}", variant.label(), spec.label()),
            ModelSpec::EsCaviar { form, spec } => format!("ES-CAViaR-{}-{}", form.label(), spec.label()),
            ModelSpec::CareSav { .. } => "CARE-SAV".to_string(),
            ModelSpec::GarchT => "GARCH-t".to_string(),
        }
    }

    pub fn validate(&self, alpha: f64) -> Result<()> {
        match self {
            ModelSpec::Wq { variant, .. } => build_grid(alpha, variant).map(|_| ()),
            ModelSpec::CareSav { grid_size } if *grid_size == 0 => domain("CARE expectile grid must not be empty"),
            _ => Ok(()),
        }
    }

    /// Estimates parameters on `window`.
    pub fn fit(&self, window: &[f64], settings: &FitSettings) -> Result<FittedModel> {
        let alpha = settings.alpha;
        Ok(match self {
            ModelSpec::Wq { variant, spec } => {
                let grid = build_grid(alpha, variant)?;
                let qm = fit_grid(window, &grid, *spec, &settings.caviar)?;
                let weights = fit_es_weights(window, &qm, variant, &settings.step2)?;
                FittedModel::Wq { quantile_params: qm.params.clone(), weights }
            }
            ModelSpec::EsCaviar { form, spec } => {
                FittedModel::EsCaviar(fit_es_caviar(window, alpha, *form, *spec, &settings.caviar)?.params)
            }
            ModelSpec::CareSav { grid_size } => FittedModel::Care(fit_care_sav(window, alpha, *grid_size, &settings.caviar)?.params),
            ModelSpec::GarchT => FittedModel::GarchT(fit_garch_t(window, alpha, &settings.caviar)?.params),
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Estimation settings shared by every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub alpha: f64,
    pub caviar: MultiStartConfig,
    pub step2: Step2Config,
}

impl FitSettings {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, caviar: MultiStartConfig::default(), step2: Step2Config::default() }
    }

    /// Same settings with both optimizer seeds set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            caviar: self.caviar.with_seed(seed),
            step2: Step2Config { seed, ..self.step2.clone() },
            ..self.clone()
        }
    }
}

/// Estimated parameters of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Wq { quantile_params: Vec<CaviarParams>, weights: EsWeightFit },
    EsCaviar(EsCaviarParams),
    Care(CareParams),
    GarchT(GarchTParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskForecast {
    pub var: f64,
    pub es: f64,
    /// ES came out above VaR and was set equal to it.
    pub clamped: bool,
}

impl FittedModel {
    /// One-step forecast after `window`, filtering state from the window's
    /// start with the stored parameters.
    pub fn forecast(&self, window: &[f64], alpha: f64) -> Result<RiskForecast> {
        if window.is_empty() {
            return domain("cannot forecast from an empty window");
        }
        let (var, es) = match self {
            FittedModel::Wq { quantile_params, weights } => {
                let grid = build_grid(alpha, &weights.variant)?;
                let qm = QuantileMatrix::from_params(grid, quantile_params.clone(), window)?;
                let f = forecast_es(weights, &qm.forecasts)?;
                return Ok(RiskForecast { var: f.var, es: f.es, clamped: f.clamped });
            }
            FittedModel::EsCaviar(p) => {
                let (_, x_init) = es_caviar_initial_state(window, alpha);
                let paths = es_caviar_filter(p, window, initial_quantile(window, alpha), x_init);
                (paths.var_forecast, paths.es_forecast)
            }
            FittedModel::Care(p) => {
                let head = &window[..window.len().min(INIT_WINDOW)];
                let paths = care_filter(p, window, empirical_expectile(head, p.tau));
                (paths.var_forecast, paths.es_forecast)
            }
            FittedModel::GarchT(p) => {
                let n = window.len() as f64;
                let mean = window.iter().sum::<f64>() / n;
                let s2 = window.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let (_, _, paths) = garch_t_risk(p, alpha, window, s2)?;
                (paths.var_forecast, paths.es_forecast)
            }
        };
        let clamped = es > var;
        Ok(RiskForecast { var, es: if clamped { var } else { es }, clamped })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecast {
    pub label: String,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
    pub n_refits: usize,
    /// Re-estimations that failed and kept the previous parameters.
    pub n_failed_refits: usize,
    pub n_clamped: usize,
}

/// One-step forecasts for `returns[n..n+m]` from rolling windows of length `n`.
///
/// Step `s` uses `returns[s..s+n]`. Parameters are re-estimated when
/// `s % refit_interval == 0` with seed `derive_seed(seed, s)`.
pub fn rolling_forecast(returns: &[f64], model: &ModelSpec, cfg: &RollingConfig, settings: &FitSettings) -> Result<RollingForecast> {
    cfg.validate(returns.len())?;
    check_level(settings.alpha)?;
    model.validate(settings.alpha)?;
    let n = cfg.in_sample_n;
    let label = model.label();
    let mut out = RollingForecast {
        label: label.clone(),
        var: Vec::with_capacity(cfg.out_sample_m),
        es: Vec::with_capacity(cfg.out_sample_m),
        n_refits: 0,
        n_failed_refits: 0,
        n_clamped: 0,
    };
    let mut fitted: Option<FittedModel> = None;
    for s in 0..cfg.out_sample_m {
        let window = &returns[s..s + n];
        if s % cfg.refit_interval == 0 {
            out.n_refits += 1;
            match model.fit(window, &settings.with_seed(derive_seed(settings.caviar.seed, s as u64))) {
                Ok(f) => fitted = Some(f),
                Err(e) if fitted.is_some() => {
                    out.n_failed_refits += 1;
                    warn!("{label}: re-estimation at step {s} failed ({e}); keeping previous parameters");
                }
                Err(e) => return Err(e),
            }
        }
        let f = fitted.as_ref().expect("fitted at step 0").forecast(window, settings.alpha)?;
        out.var.push(f.var);
        out.es.push(f.es);
        out.n_clamped += f.clamped as usize;
    }
    Ok(out)
}

/// `Σ (α - 1{r<Q})(r - Q)` without normalization.
pub fn aggregate_quantile_loss(returns_out: &[f64], var_series: &[f64], alpha: f64) -> Result<f64> {
    Ok(quantile_loss_steps(returns_out, var_series, alpha)?.iter().sum())
}

/// Sum of AL scores; fails at the first non-negative ES.
pub fn aggregate_joint_loss(returns_out: &[f64], var_series: &[f64], es_series: &[f64], alpha: f64) -> Result<f64> {
    aggregate_al_loss(returns_out, var_series, es_series, alpha)
}

/// Per-step quantile losses.
pub fn quantile_loss_steps(returns_out: &[f64], var_series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_level(alpha)?;
    if returns_out.len() != var_series.len() {
        return Err(Error::LengthMismatch { expected: returns_out.len(), actual: var_series.len() });
    }
    Ok(returns_out.iter().zip(var_series).map(|(&r, &q)| pinball(r, q, alpha)).collect())
}

/// Per-step AL scores.
pub fn joint_loss_steps(returns_out: &[f64], var_series: &[f64], es_series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_level(alpha)?;
    if returns_out.len() != var_series.len() || returns_out.len() != es_series.len() {
        return Err(Error::LengthMismatch {
            expected: returns_out.len(),
            actual: var_series.len().min(es_series.len()),
        });
    }
    returns_out
        .iter()
        .zip(var_series)
        .zip(es_series)
        .enumerate()
        .map(|(t, ((&r, &q), &e))| {
            if e < 0.0 {
                Ok(al_score(r, q, e, alpha))
            } else {
                Err(Error::ScoreUndefined { step: t, es: e })
            }
        })
        .collect()
}

/// Per-step losses, `m` rows by `K` models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    pub labels: Vec<String>,
    pub n_steps: usize,
    values: Vec<f64>,
}

impl LossMatrix {
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::LengthMismatch { expected: labels.len(), actual: columns.len() });
        }
        if labels.is_empty() {
            return domain("loss matrix needs at least one model");
        }
        let m = columns[0].len();
        if let Some(c) = columns.iter().find(|c| c.len() != m) {
            return Err(Error::LengthMismatch { expected: m, actual: c.len() });
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return domain("loss matrix entries must be finite");
        }
        let k = labels.len();
        let mut values = vec![0.0; m * k];
        for (j, c) in columns.iter().enumerate() {
            for (t, v) in c.iter().enumerate() {
                values[t * k + j] = *v;
            }
        }
        Ok(Self { labels, n_steps: m, values })
    }

    pub fn n_models(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.n_models();
        &self.values[t * k..(t + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_steps).map(|t| self.row(t)[j]).collect()
    }

    /// Column sums.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.n_models()).map(|j| self.column(j).iter().sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McsMethod {
    /// Largest absolute pairwise t statistic.
    R,
    /// Sum of squared pairwise t statistics.
    #[serde(rename = "SQ")]
    Sq,
}

impl std::str::FromStr for McsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(McsMethod::R),
            "SQ" => Ok(McsMethod::Sq),
            other => domain(format!("unknown MCS statistic '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Moving-block length; `None` means `ceil(m^(1/3))`.
    pub block_length: Option<usize>,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { block_length: None, n_boot: 1_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub method: McsMethod,
    pub level: f64,
    pub labels: Vec<String>,
    /// MCS p-value of each model, in column order.
    pub p_values: Vec<f64>,
    /// Eliminated models, first to last; the final survivor is not listed.
    pub elimination_order: Vec<usize>,
    /// Models with p-value at least `1 - level`, in column order.
    pub survivors: Vec<usize>,
}

impl McsResult {
    pub fn contains(&self, j: usize) -> bool {
        self.survivors.contains(&j)
    }

    pub fn survivor_labels(&self) -> Vec<&str> {
        self.survivors.iter().map(|&j| self.labels[j].as_str()).collect()
    }

    /// Survivors at another confidence level from the same p-values.
    pub fn survivors_at(&self, level: f64) -> Vec<usize> {
        (0..self.labels.len()).filter(|&j| self.p_values[j] >= 1.0 - level).collect()
    }
}

/// Orders two statistics, treating values equal up to rounding as ties.
fn near_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    if a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0) {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

fn block_bootstrap_indices(m: usize, block: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = Vec::with_capacity(m);
    while idx.len() < m {
        let start = rng.gen_range(0..=m - block);
        idx.extend((start..start + block).take(m - idx.len()));
    }
    idx
}

#[inline]
fn studentize(num: f64, var: f64) -> f64 {
    if var > 0.0 {
        num / var.sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * f64::INFINITY
    }
}

/// Sequential elimination with moving-block bootstrap studentization.
///
/// Bootstrap resamples are drawn once and reused at every elimination step.
/// A model's p-value is the running maximum of the test p-values up to its
/// elimination; the last model standing gets 1.
pub fn mcs(loss: &LossMatrix, level: f64, method: McsMethod, boot: &BootstrapConfig) -> Result<McsResult> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("confidence level must lie in (0,1), got {level}"));
    }
    let k = loss.n_models();
    let m = loss.n_steps;
    if k == 1 {
        return Ok(McsResult {
            method,
            level,
            labels: loss.labels.clone(),
            p_values: vec![1.0],
            elimination_order: vec![],
            survivors: vec![0],
        });
    }
    if m < 50 {
        return domain(format!("MCS needs at least 50 loss observations, got {m}"));
    }
    if boot.n_boot == 0 {
        return domain("n_boot must be positive");
    }
    let block = boot.block_length.unwrap_or_else(|| (m as f64).cbrt().ceil() as usize).clamp(1, m);

    let means: Vec<f64> = (0..k).map(|j| (0..m).map(|t| loss.row(t)[j]).sum::<f64>() / m as f64).collect();
    let boot_means: Vec<Vec<f64>> = (0..boot.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(boot.seed, b as u64));
            let idx = block_bootstrap_indices(m, block, &mut rng);
            let mut acc = vec![0.0; k];
            for &t in &idx {
                for (a, v) in acc.iter_mut().zip(loss.row(t)) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / m as f64).collect()
        })
        .collect();
    let nb = boot.n_boot as f64;

    let mut alive: Vec<usize> = (0..k).collect();
    let mut p_values = vec![1.0; k];
    let mut order = Vec::with_capacity(k - 1);
    let mut running = 0.0_f64;
    while alive.len() > 1 {
        let pairs: Vec<(usize, usize)> =
            alive.iter().enumerate().flat_map(|(a, &i)| alive[a + 1..].iter().map(move |&j| (i, j))).collect();
        let dbar: Vec<f64> = pairs.iter().map(|&(i, j)| means[i] - means[j]).collect();
        let var: Vec<f64> = pairs
            .iter()
            .zip(&dbar)
            .map(|(&(i, j), d)| boot_means.iter().map(|bm| (bm[i] - bm[j] - d).powi(2)).sum::<f64>() / nb)
            .collect();
        let t: Vec<f64> = dbar.iter().zip(&var).map(|(d, v)| studentize(*d, *v)).collect();
        let combine = |vals: &mut dyn Iterator<Item = f64>| match method {
            McsMethod::R => vals.map(f64::abs).fold(0.0, f64::max),
            McsMethod::Sq => vals.map(|x| x * x).sum(),
        };
        let stat = combine(&mut t.iter().copied());
        let exceed = boot_means
            .iter()
            .filter(|bm| {
                let mut it = pairs.iter().zip(&dbar).zip(&var).map(|((&(i, j), d), v)| {
                    if *v > 0.0 {
                        (bm[i] - bm[j] - d) / v.sqrt()
                    } else {
                        0.0
                    }
                });
                combine(&mut it) >= stat
            })
            .count();
        running = running.max(exceed as f64 / nb);

        let n_alive = alive.len() as f64;
        let worst = alive
            .iter()
            .map(|&i| {
                let others = |mu: &[f64]| alive.iter().filter(|&&j| j != i).map(|&j| mu[j]).sum::<f64>() / (n_alive - 1.0);
                let d = means[i] - others(&means);
                let v = boot_means.iter().map(|bm| (bm[i] - others(bm) - d).powi(2)).sum::<f64>() / nb;
                (i, studentize(d, v))
            })
            .max_by(|a, b| near_cmp(a.1, b.1).then(near_cmp(means[a.0], means[b.0])).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("at least two models alive");
        p_values[worst] = running;
        order.push(worst);
        alive.retain(|&j| j != worst);
    }
    let survivors = (0..k).filter(|&j| p_values[j] >= 1.0 - level).collect();
    Ok(McsResult { method, level, labels: loss.labels.clone(), p_values, elimination_order: order, survivors })
}
