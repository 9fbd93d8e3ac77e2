//! Monte-Carlo bias study on volatility models with Student-t innovations.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caviar::{check_level, derive_seed, fit_caviar, CaviarFit, CaviarSpec, QuantileMatrix};
use crate::error::{domain, Result};
use crate::optimize::MultiStartConfig;
use crate::special::{std_t_abs_mean, std_t_var_es, StudentTParams};
use crate::wq::{build_grid, fit_es_weights, forecast_es, EsVariant, EsVariantKind, Step2Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpForm {
    /// `σ_t = ω + γ|r_{t-1}| + δσ_{t-1}`
    #[serde(rename = "AV_GARCH_T")]
    AvGarchT,
    /// `σ²_t = ω + γr²_{t-1} + δσ²_{t-1}`
    #[serde(rename = "GARCH_T")]
    GarchT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub form: DgpForm,
    pub omega: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    pub n: usize,
    pub n_reps: usize,
    pub seed: u64,
}

impl DgpSpec {
    /// `ω = 0.02, γ = 0.10, δ = 0.85, ν = 10, n = 1900`, 1000 replications.
    pub fn new(form: DgpForm) -> Self {
        Self { form, omega: 0.02, gamma: 0.10, delta: 0.85, nu: 10.0, n: 1900, n_reps: 1000, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reps(mut self, n_reps: usize) -> Self {
        self.n_reps = n_reps;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn t_params(&self) -> Result<StudentTParams> {
        StudentTParams::new(self.nu)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t_params()?;
        if !(self.omega > 0.0) || !(self.gamma >= 0.0) || !(self.delta >= 0.0) {
            return domain("volatility coefficients need ω > 0 and γ, δ ≥ 0");
        }
        if self.n == 0 {
            return domain("series length must be positive");
        }
        let persistence = match self.form {
            DgpForm::AvGarchT => self.gamma * std_t_abs_mean(t) + self.delta,
            DgpForm::GarchT => self.gamma + self.delta,
        };
        if persistence >= 1.0 {
            return domain(format!("volatility recursion is not stationary (persistence {persistence})"));
        }
        Ok(())
    }

    /// Unconditional level of `σ_t` used to start the recursion.
    pub fn unconditional_sigma(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self.form {
            DgpForm::AvGarchT => self.omega / (1.0 - self.gamma * std_t_abs_mean(self.t_params()?) - self.delta),
            DgpForm::GarchT => (self.omega / (1.0 - self.gamma - self.delta)).sqrt(),
        })
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        self.seed ^ rep as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub returns: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_next: f64,
}

/// Unit-variance Student-t draws.
pub fn standardized_t_draws(nu: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let scale = StudentTParams::new(nu)?.unit_variance_scale();
    let dist = StudentT::new(nu).map_err(|e| crate::Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng) * scale).collect())
}

/// Simulates one series with `spec.seed`.
pub fn simulate(spec: &DgpSpec) -> Result<SimulatedPath> {
    simulate_with_seed(spec, spec.seed)
}

/// Simulates replication `rep` (seed `spec.seed ^ rep`).
pub fn simulate_replication(spec: &DgpSpec, rep: usize) -> Result<SimulatedPath> {
    simulate_with_seed(spec, spec.replication_seed(rep))
}

fn simulate_with_seed(spec: &DgpSpec, seed: u64) -> Result<SimulatedPath> {
    let sigma1 = spec.unconditional_sigma()?;
    let eps = standardized_t_draws(spec.nu, spec.n, seed)?;
    let mut returns = Vec::with_capacity(spec.n);
    let mut sigma = Vec::with_capacity(spec.n);
    let mut s = sigma1;
    for e in eps {
        let r = s * e;
        sigma.push(s);
        returns.push(r);
        s = next_sigma(spec, r, s);
    }
    Ok(SimulatedPath { returns, sigma, sigma_next: s })
}

fn next_sigma(spec: &DgpSpec, r: f64, s: f64) -> f64 {
    match spec.form {
        DgpForm::AvGarchT => spec.omega + spec.gamma * r.abs() + spec.delta * s,
        DgpForm::GarchT => (spec.omega + spec.gamma * r * r + spec.delta * s * s).sqrt(),
    }
}

/// `σ · t⁻¹_ν(α) · √((ν-2)/ν)`
pub fn true_var(sigma_next: f64, alpha: f64, nu: f64) -> Result<f64> {
    Ok(true_pair(sigma_next, alpha, nu)?.0)
}

/// `-σ · g_ν(q)/α · (ν + q²)/(ν - 1) · √((ν-2)/ν)` with `q = t⁻¹_ν(α)`.
pub fn true_es(sigma_next: f64, alpha: f64, nu: f64) -> Result<f64> {
    Ok(true_pair(sigma_next, alpha, nu)?.1)
}

fn true_pair(sigma_next: f64, alpha: f64, nu: f64) -> Result<(f64, f64)> {
    if !(sigma_next > 0.0) {
        return domain(format!("volatility must be positive, got {sigma_next}"));
    }
    let (var, es) = std_t_var_es(alpha, StudentTParams::new(nu)?)?;
    Ok((sigma_next * var, sigma_next * es))
}

/// Mean true VaR and ES over `spec.n_reps` simulated designs, without fitting.
pub fn mean_true_values(spec: &DgpSpec, alpha: f64) -> Result<(f64, f64)> {
    spec.validate()?;
    if spec.n_reps == 0 {
        return domain("at least one replication is required");
    }
    let (var1, es1) = true_pair(1.0, alpha, spec.nu)?;
    let sigmas = (0..spec.n_reps)
        .into_par_iter()
        .map(|rep| simulate_replication(spec, rep).map(|p| p.sigma_next))
        .collect::<Result<Vec<f64>>>()?;
    let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    Ok((mean_sigma * var1, mean_sigma * es1))
}

/// Estimators, grids and optimizer settings of a bias study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyConfig {
    pub alpha: f64,
    pub kinds: Vec<EsVariantKind>,
    pub m_set: Vec<usize>,
    pub alpha1_set: Vec<f64>,
    pub caviar_spec: CaviarSpec,
    pub caviar: MultiStartConfig,
    pub step2: Step2Config,
}

impl Default for BiasStudyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.025,
            kinds: EsVariantKind::ALL.to_vec(),
            m_set: vec![3, 10],
            alpha1_set: vec![0.005, 0.01, 0.015],
            caviar_spec: CaviarSpec::Sav,
            caviar: MultiStartConfig { n_candidates: 1_000, ..MultiStartConfig::default() },
            step2: Step2Config::default(),
        }
    }
}

impl BiasStudyConfig {
    pub fn variants(&self) -> Result<Vec<EsVariant>> {
        let mut out = Vec::new();
        for &alpha1 in &self.alpha1_set {
            for &m in &self.m_set {
                for &kind in &self.kinds {
                    let v = EsVariant::new(kind, m, alpha1)?;
                    build_grid(self.alpha, &v)?;
                    out.push(v);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub variant: EsVariant,
    /// Replications where this estimator produced a forecast.
    pub n_ok: usize,
    pub mean_forecast: f64,
    pub mean_true: f64,
    /// `|mean forecast - mean truth|`
    pub es_delta: f64,
    /// Mean of `|forecast - truth|`.
    pub es_mad: f64,
    pub n_clamped: usize,
}

/// Fitted WQ-Beta weights of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub rep: usize,
    pub m: usize,
    pub alpha1: f64,
    pub w0: f64,
    pub a: f64,
    pub b: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub form: DgpForm,
    pub alpha: f64,
    pub n_reps: usize,
    /// Replications dropped because the first stage failed.
    pub n_failed: usize,
    pub mean_true_var: f64,
    pub mean_true_es: f64,
    pub mean_var_forecast: f64,
    pub var_delta: f64,
    pub var_mad: f64,
    pub cells: Vec<BiasCell>,
    pub weight_samples: Vec<WeightSample>,
}

impl BiasReport {
    pub fn cell(&self, kind: EsVariantKind, m: usize, alpha1: f64) -> Option<&BiasCell> {
        self.cells
            .iter()
            .find(|c| c.variant.kind == kind && c.variant.m == m && (c.variant.alpha1 - alpha1).abs() < 1e-12)
    }
}

struct RepOutcome {
    true_var: f64,
    true_es: f64,
    var_forecast: f64,
    es: Vec<Option<(f64, bool)>>,
    weights: Vec<WeightSample>,
}

fn level_key(level: f64) -> u64 {
    (level * 1e9).round() as u64
}

/// Runs the study; each replication fits every distinct grid level once and
/// reuses the fit across the estimators that share it.
pub fn run_bias_study(spec: &DgpSpec, cfg: &BiasStudyConfig) -> Result<BiasReport> {
    spec.validate()?;
    check_level(cfg.alpha)?;
    if spec.n_reps == 0 {
        return domain("at least one replication is required");
    }
    let variants = cfg.variants()?;
    if variants.is_empty() {
        return domain("bias study needs at least one estimator");
    }
    let grids = variants.iter().map(|v| build_grid(cfg.alpha, v)).collect::<Result<Vec<_>>>()?;
    let mut levels: BTreeMap<u64, f64> = BTreeMap::new();
    levels.insert(level_key(cfg.alpha), cfg.alpha);
    for g in &grids {
        for &l in &g.levels {
            levels.entry(level_key(l)).or_insert(l);
        }
    }
    info!(
        "bias study: {:?}, {} replications, {} estimators, {} distinct levels",
        spec.form,
        spec.n_reps,
        variants.len(),
        levels.len()
    );

    let outcomes: Vec<Option<RepOutcome>> = (0..spec.n_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = spec.replication_seed(rep);
            let path = match simulate_replication(spec, rep) {
                Ok(p) => p,
                Err(e) => {
                    warn!("replication {rep}: simulation failed: {e}");
                    return None;
                }
            };
            let fits: Result<BTreeMap<u64, CaviarFit>> = levels
                .iter()
                .map(|(&k, &l)| {
                    let c = cfg.caviar.with_seed(derive_seed(seed, k));
                    fit_caviar(&path.returns, l, cfg.caviar_spec, &c).map(|f| (k, f))
                })
                .collect();
            let fits = match fits {
                Ok(f) => f,
                Err(e) => {
                    warn!("replication {rep}: first stage failed: {e}");
                    return None;
                }
            };
            let (true_var, true_es) = true_pair(path.sigma_next, cfg.alpha, spec.nu).ok()?;
            let var_forecast = fits[&level_key(cfg.alpha)].forecast;
            let mut es = Vec::with_capacity(variants.len());
            let mut weights = Vec::new();
            for (v, grid) in variants.iter().zip(&grids) {
                let level_fits: Vec<CaviarFit> = grid.levels.iter().map(|l| fits[&level_key(*l)].clone()).collect();
                let step2 = Step2Config { seed: derive_seed(seed, 0x5EED), ..cfg.step2.clone() };
                let res = QuantileMatrix::from_fits(grid.clone(), &level_fits).and_then(|qm| {
                    let fit = fit_es_weights(&path.returns, &qm, v, &step2)?;
                    let f = forecast_es(&fit, &qm.forecasts)?;
                    Ok((fit, f))
                });
                match res {
                    Ok((fit, f)) => {
                        if let Some(bp) = fit.beta_params {
                            weights.push(WeightSample {
                                rep,
                                m: v.m,
                                alpha1: v.alpha1,
                                w0: fit.w0,
                                a: bp.a,
                                b: bp.b,
                                weights: fit.derived_weights.clone(),
                            });
                        }
                        es.push(Some((f.es, f.clamped)));
                    }
                    Err(e) => {
                        warn!("replication {rep}: {} failed: {e}", v.label());
                        es.push(None);
                    }
                }
            }
            Some(RepOutcome { true_var, true_es, var_forecast, es, weights })
        })
        .collect();

    let ok: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let n_failed = spec.n_reps - ok.len();
    if ok.is_empty() {
        return Err(crate::Error::OptimizationFailed("every replication failed".into()));
    }
    let n = ok.len() as f64;
    let mean_true_var = ok.iter().map(|o| o.true_var).sum::<f64>() / n;
    let mean_true_es = ok.iter().map(|o| o.true_es).sum::<f64>() / n;
    let mean_var_forecast = ok.iter().map(|o| o.var_forecast).sum::<f64>() / n;
    let var_mad = ok.iter().map(|o| (o.var_forecast - o.true_var).abs()).sum::<f64>() / n;

    let cells = variants
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let mut n_ok = 0usize;
            let (mut sf, mut st, mut sad) = (0.0, 0.0, 0.0);
            let mut n_clamped = 0;
            for o in &ok {
                if let Some((es, clamped)) = o.es[j] {
                    n_ok += 1;
                    sf += es;
                    st += o.true_es;
                    sad += (es - o.true_es).abs();
                    n_clamped += clamped as usize;
                }
            }
            let k = n_ok.max(1) as f64;
            let (mean_forecast, mean_true) = if n_ok > 0 { (sf / k, st / k) } else { (f64::NAN, f64::NAN) };
            BiasCell {
                variant: *v,
                n_ok,
                mean_forecast,
                mean_true,
                es_delta: (mean_forecast - mean_true).abs(),
                es_mad: if n_ok > 0 { sad / k } else { f64::NAN },
                n_clamped,
            }
        })
        .collect();

    let weight_samples = ok.iter().flat_map(|o| o.weights.iter().cloned()).collect();
    Ok(BiasReport {
        form: spec.form,
        alpha: cfg.alpha,
        n_reps: spec.n_reps,
        n_failed,
        mean_true_var,
        mean_true_es,
        mean_var_forecast,
        var_delta: (mean_var_forecast - mean_true_var).abs(),
        var_mad,
        cells,
        weight_samples,
    })
}
