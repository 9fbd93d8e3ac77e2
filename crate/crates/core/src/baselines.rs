//! Competing VaR/ES forecasters: ES-CAViaR (additive and multiplicative),
//! CARE-SAV and GARCH with standardized Student-t errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caviar::{
    check_level, derive_seed, empirical_quantile, fit_caviar, initial_quantile, quantile_loss, step, CaviarParams,
    CaviarSpec, INIT_WINDOW, MAX_PERSISTENCE, MIN_FIT_OBS,
};
use crate::error::{domain, Error, Result};
use crate::optimize::{minimize_multistart_with_anchors, BoxConstraints, Diagnostics, MultiStartConfig};
use crate::special::{ln_gamma, std_t_var_es, StudentTParams};
use crate::wq::{al_score, ES_PENALTY};

fn check_series(returns: &[f64]) -> Result<()> {
    if returns.len() < MIN_FIT_OBS {
        return domain(format!("fit needs at least {MIN_FIT_OBS} observations, got {}", returns.len()));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return domain("returns contain non-finite values");
    }
    Ok(())
}

/// VaR/ES paths and one-step forecasts shared by every baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPaths {
    pub var_path: Vec<f64>,
    pub es_path: Vec<f64>,
    pub var_forecast: f64,
    pub es_forecast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EsCaviarForm {
    #[serde(rename = "Add")]
    Add,
    #[serde(rename = "Mult")]
    Mult,
}

impl EsCaviarForm {
    pub fn label(self) -> &'static str {
        match self {
            EsCaviarForm::Add => "Add",
            EsCaviarForm::Mult => "Mult",
        }
    }

    fn n_gamma(self) -> usize {
        match self {
            EsCaviarForm::Add => 3,
            EsCaviarForm::Mult => 1,
        }
    }
}

/// Quantile recursion plus the VaR-to-ES component.
///
/// Add: `ES_t = Q_t - x_t`, with `x_t = γ0 + γ1 (Q_{t-1} - r_{t-1}) + γ2 x_{t-1}`
/// after a violation and `x_t = x_{t-1}` otherwise. Mult: `ES_t = (1 + e^{γ0}) Q_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsCaviarParams {
    pub form: EsCaviarForm,
    pub quantile: CaviarParams,
    pub gamma: Vec<f64>,
}

impl EsCaviarParams {
    pub fn new(form: EsCaviarForm, quantile: CaviarParams, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != form.n_gamma() {
            return Err(Error::LengthMismatch { expected: form.n_gamma(), actual: gamma.len() });
        }
        if form == EsCaviarForm::Add && gamma.iter().any(|g| !(*g >= 0.0)) {
            return domain("additive ES-CAViaR needs non-negative γ");
        }
        Ok(Self { form, quantile, gamma })
    }

    /// `1 + e^{γ0}` for the multiplicative form.
    pub fn multiplier(&self) -> Option<f64> {
        (self.form == EsCaviarForm::Mult).then(|| 1.0 + self.gamma[0].exp())
    }
}

/// Recursion starting values: the empirical `α` quantile of the first
/// [`INIT_WINDOW`] returns and the gap between it and the mean of the returns
/// at or below it.
pub fn es_caviar_initial_state(returns: &[f64], alpha: f64) -> (f64, f64) {
    let head = &returns[..returns.len().min(INIT_WINDOW)];
    let q = empirical_quantile(head, alpha);
    let tail: Vec<f64> = head.iter().copied().filter(|r| *r <= q).collect();
    let tail_mean = if tail.is_empty() { q } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    (q, (q - tail_mean).max(0.0))
}

#[inline]
fn es_caviar_run<F: FnMut(usize, f64, f64)>(
    form: EsCaviarForm,
    spec: CaviarSpec,
    beta: &[f64],
    gamma: &[f64],
    returns: &[f64],
    q_init: f64,
    x_init: f64,
    mut visit: F,
) -> (f64, f64) {
    let mult = 1.0 + gamma.first().map_or(0.0, |g| g.exp());
    let es_of = |q: f64, x: f64| match form {
        EsCaviarForm::Add => q - x,
        EsCaviarForm::Mult => mult * q,
    };
    let (mut q, mut x) = (q_init, x_init);
    for (t, &r) in returns.iter().enumerate() {
        visit(t, q, es_of(q, x));
        if form == EsCaviarForm::Add && r <= q {
            x = gamma[0] + gamma[1] * (q - r) + gamma[2] * x;
        }
        q = step(spec, beta, r, q);
    }
    (q, es_of(q, x))
}

/// Filters VaR and ES through `returns` with fixed parameters.
pub fn es_caviar_filter(params: &EsCaviarParams, returns: &[f64], q_init: f64, x_init: f64) -> RiskPaths {
    let mut var_path = Vec::with_capacity(returns.len());
    let mut es_path = Vec::with_capacity(returns.len());
    let (var_forecast, es_forecast) = es_caviar_run(
        params.form,
        params.quantile.spec,
        &params.quantile.beta,
        &params.gamma,
        returns,
        q_init,
        x_init,
        |_, q, es| {
            var_path.push(q);
            es_path.push(es);
        },
    );
    RiskPaths { var_path, es_path, var_forecast, es_forecast }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsCaviarFit {
    pub params: EsCaviarParams,
    pub alpha: f64,
    pub q_init: f64,
    pub x_init: f64,
    pub paths: RiskPaths,
    /// Mean in-sample AL score.
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

fn es_caviar_objective(
    form: EsCaviarForm,
    spec: CaviarSpec,
    theta: &[f64],
    returns: &[f64],
    q_init: f64,
    x_init: f64,
    alpha: f64,
) -> f64 {
    let nb = spec.n_params();
    let (beta, gamma) = theta.split_at(nb);
    let mut total = 0.0;
    let mut bad = false;
    es_caviar_run(form, spec, beta, gamma, returns, q_init, x_init, |t, q, es| {
        if !(es < 0.0) {
            bad = true;
        } else if !bad {
            total += al_score(returns[t], q, es, alpha);
        }
    });
    let mean = total / returns.len() as f64;
    if bad || !mean.is_finite() {
        ES_PENALTY
    } else {
        mean
    }
}

/// Joint fit of the quantile and ES components by minimizing the AL score.
///
/// The quantile coefficients start from a CAViaR fit with `cfg`; the ES
/// component is then searched with `cfg.n_candidates` draws (Add) or a tenth
/// of that (Mult) while the quantile coefficients stay at that fit, and the
/// best draws are refined over all coordinates.
pub fn fit_es_caviar(
    returns: &[f64],
    alpha: f64,
    form: EsCaviarForm,
    spec: CaviarSpec,
    cfg: &MultiStartConfig,
) -> Result<EsCaviarFit> {
    check_level(alpha)?;
    check_series(returns)?;
    let first = fit_caviar(returns, alpha, spec, &cfg.with_sampler(Vec::new()))?;
    let (_, x_init) = es_caviar_initial_state(returns, alpha);
    let q_init = first.q_init;
    let nb = spec.n_params();

    let qb = spec.bounds();
    let mut lower = qb.lower.clone();
    let mut upper = qb.upper.clone();
    let mut sampler: Vec<(f64, f64)> = first.params.beta.iter().map(|&b| (b, b)).collect();
    let anchor_gamma: Vec<f64> = match form {
        EsCaviarForm::Add => {
            lower.extend([0.0, 0.0, 0.0]);
            upper.extend([f64::INFINITY, f64::INFINITY, MAX_PERSISTENCE]);
            sampler.extend([(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]);
            vec![0.0, 0.0, 1.0 - 1e-3]
        }
        EsCaviarForm::Mult => {
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
            sampler.push((-3.0, 1.0));
            vec![-1.0]
        }
    };
    let bounds = BoxConstraints::new(lower, upper)?;
    let n_candidates = match form {
        EsCaviarForm::Add => cfg.n_candidates,
        EsCaviarForm::Mult => (cfg.n_candidates / 10).max(cfg.n_refine),
    };
    let ms = MultiStartConfig { n_candidates, sampler, seed: derive_seed(cfg.seed, 0xE5), ..cfg.clone() };
    let mut anchor = first.params.beta.clone();
    anchor.extend(anchor_gamma);

    let objective = |theta: &[f64]| es_caviar_objective(form, spec, theta, returns, q_init, x_init, alpha);
    let best = minimize_multistart_with_anchors(&objective, nb + form.n_gamma(), &ms, &bounds, &[anchor])?;
    if best.value >= ES_PENALTY {
        return Err(Error::OptimizationFailed("ES-CAViaR: no parameter vector keeps ES negative".into()));
    }
    let quantile = CaviarParams::from_slice(spec, &best.x[..nb])?;
    let params = EsCaviarParams::new(form, quantile, best.x[nb..].to_vec())?;
    let paths = es_caviar_filter(&params, returns, q_init, x_init);
    Ok(EsCaviarFit { params, alpha, q_init, x_init, paths, loss: best.value, diagnostics: best.diagnostics })
}

/// `1 + τ / ((1 - 2τ) α)`
pub fn care_scale(tau: f64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if !(tau > 0.0 && tau < 0.5) {
        return domain(format!("expectile level must lie in (0, 0.5), got {tau}"));
    }
    Ok(1.0 + tau / ((1.0 - 2.0 * tau) * alpha))
}

/// Mean asymmetric least squares loss `|τ - 1{r<μ}| (r - μ)²`.
pub fn als_loss(returns: &[f64], mu: &[f64], tau: f64) -> Result<f64> {
    if returns.len() != mu.len() {
        return Err(Error::LengthMismatch { expected: returns.len(), actual: mu.len() });
    }
    if returns.is_empty() {
        return domain("empty series");
    }
    Ok(returns.iter().zip(mu).map(|(&r, &m)| als(r, m, tau)).sum::<f64>() / returns.len() as f64)
}

#[inline]
fn als(r: f64, mu: f64, tau: f64) -> f64 {
    let w = if r < mu { 1.0 - tau } else { tau };
    w * (r - mu) * (r - mu)
}

/// Sample `τ` expectile: the fixed point of the asymmetrically weighted mean.
pub fn empirical_expectile(data: &[f64], tau: f64) -> f64 {
    let mut mu = data.iter().sum::<f64>() / data.len() as f64;
    for _ in 0..200 {
        let (mut num, mut den) = (0.0, 0.0);
        for &r in data {
            let w = if r < mu { 1.0 - tau } else { tau };
            num += w * r;
            den += w;
        }
        let next = num / den;
        if (next - mu).abs() <= 1e-14 * (1.0 + mu.abs()) {
            return next;
        }
        mu = next;
    }
    mu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareParams {
    pub expectile: CaviarParams,
    pub tau: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareFit {
    pub params: CareParams,
    pub alpha: f64,
    pub mu_init: f64,
    pub paths: RiskPaths,
    pub violation_rate: f64,
    /// Mean ALS loss at the selected `τ`.
    pub loss: f64,
}

/// Expectile path and ES path `scale · μ` with fixed parameters.
pub fn care_filter(params: &CareParams, returns: &[f64], mu_init: f64) -> RiskPaths {
    let beta = &params.expectile.beta;
    let mut var_path = Vec::with_capacity(returns.len());
    let mut mu = mu_init;
    for &r in returns {
        var_path.push(mu);
        mu = step(CaviarSpec::Sav, beta, r, mu);
    }
    let es_path = var_path.iter().map(|m| params.scale * m).collect();
    RiskPaths { var_path, es_path, var_forecast: mu, es_forecast: params.scale * mu }
}

/// `grid_size` equally spaced expectile levels on `[α/grid_size, α]`.
pub fn care_tau_grid(alpha: f64, grid_size: usize) -> Result<Vec<f64>> {
    check_level(alpha)?;
    if grid_size == 0 {
        return domain("expectile grid must not be empty");
    }
    let step = alpha / grid_size as f64;
    Ok((1..=grid_size).map(|i| i as f64 * step).filter(|t| *t < 0.5).collect())
}

/// Fits the SAV expectile recursion at every grid level and keeps the level
/// whose in-sample violation rate is closest to `α` (ties go to the lower
/// quantile loss).
pub fn fit_care_sav(returns: &[f64], alpha: f64, grid_size: usize, cfg: &MultiStartConfig) -> Result<CareFit> {
    check_series(returns)?;
    let taus = care_tau_grid(alpha, grid_size)?;
    if taus.is_empty() {
        return domain("expectile grid is degenerate");
    }
    let spec = CaviarSpec::Sav;
    let bounds = spec.bounds();
    let mu_anchor = initial_quantile(returns, alpha);
    let head = &returns[..returns.len().min(INIT_WINDOW)];

    let candidates: Vec<CareFit> = taus
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let mu_init = empirical_expectile(head, tau);
            let ms = MultiStartConfig {
                sampler: if cfg.sampler.is_empty() { spec.default_sampler() } else { cfg.sampler.clone() },
                seed: derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            let objective = |beta: &[f64]| {
                let mut mu = mu_init;
                let mut total = 0.0;
                for &r in returns {
                    total += als(r, mu, tau);
                    mu = step(spec, beta, r, mu);
                }
                total / returns.len() as f64
            };
            let anchor = vec![mu_anchor * 0.05, 0.0, 0.95];
            let best = minimize_multistart_with_anchors(&objective, 3, &ms, &bounds, &[anchor])?;
            let params = CareParams {
                expectile: CaviarParams::from_slice(spec, &best.x)?,
                tau,
                scale: care_scale(tau, alpha)?,
            };
            let paths = care_filter(&params, returns, mu_init);
            let hits = returns.iter().zip(&paths.var_path).filter(|(r, q)| r < q).count();
            Ok(CareFit {
                params,
                alpha,
                mu_init,
                violation_rate: hits as f64 / returns.len() as f64,
                paths,
                loss: best.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<(f64, f64)> = candidates
        .iter()
        .map(|c| {
            let ql = quantile_loss(returns, &c.paths.var_path, alpha).unwrap_or(f64::INFINITY);
            ((c.violation_rate - alpha).abs(), ql)
        })
        .collect();
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            let (da, qa) = scored[a];
            let (db, qb) = scored[b];
            let tie = (da - db).abs() <= 1e-12;
            if tie {
                qa.total_cmp(&qb).then(a.cmp(&b))
            } else {
                da.total_cmp(&db)
            }
        })
        .expect("non-empty grid");
    Ok(candidates.into_iter().nth(best).expect("index in range"))
}

/// `σ²_t = ω + γ r²_{t-1} + δ σ²_{t-1}` with standardized Student-t(ν) errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchTParams {
    pub omega: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
}

impl GarchTParams {
    pub fn new(omega: f64, gamma: f64, delta: f64, nu: f64) -> Result<Self> {
        if !(omega > 0.0 && gamma >= 0.0 && delta >= 0.0 && gamma + delta < 1.0) {
            return domain("GARCH needs ω > 0, γ, δ ≥ 0 and γ + δ < 1");
        }
        StudentTParams::new(nu)?;
        Ok(Self { omega, gamma, delta, nu })
    }
}

/// Conditional variances `σ²_1..σ²_N` and `σ²_{N+1}`.
pub fn garch_variance_path(p: &GarchTParams, returns: &[f64], sigma2_init: f64) -> (Vec<f64>, f64) {
    let mut path = Vec::with_capacity(returns.len());
    let mut s2 = sigma2_init;
    for &r in returns {
        path.push(s2);
        s2 = p.omega + p.gamma * r * r + p.delta * s2;
    }
    (path, s2)
}

/// Mean negative log-likelihood.
pub fn garch_t_nll(p: &GarchTParams, returns: &[f64], sigma2_init: f64) -> f64 {
    let nu = p.nu;
    let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
    let mut s2 = sigma2_init;
    let mut total = 0.0;
    for &r in returns {
        total += c - 0.5 * s2.ln() - 0.5 * (nu + 1.0) * (r * r / ((nu - 2.0) * s2)).ln_1p();
        s2 = p.omega + p.gamma * r * r + p.delta * s2;
    }
    -total / returns.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchTFit {
    pub params: GarchTParams,
    pub alpha: f64,
    pub sigma2_init: f64,
    pub sigma_path: Vec<f64>,
    pub sigma_next: f64,
    pub paths: RiskPaths,
    /// Mean negative log-likelihood.
    pub nll: f64,
    pub diagnostics: Diagnostics,
}

/// VaR and ES paths implied by a volatility path.
pub fn garch_t_risk(p: &GarchTParams, alpha: f64, returns: &[f64], sigma2_init: f64) -> Result<(Vec<f64>, f64, RiskPaths)> {
    let (var1, es1) = std_t_var_es(alpha, StudentTParams::new(p.nu)?)?;
    let (s2, s2_next) = garch_variance_path(p, returns, sigma2_init);
    let sigma: Vec<f64> = s2.iter().map(|v| v.sqrt()).collect();
    let sigma_next = s2_next.sqrt();
    let paths = RiskPaths {
        var_path: sigma.iter().map(|s| s * var1).collect(),
        es_path: sigma.iter().map(|s| s * es1).collect(),
        var_forecast: sigma_next * var1,
        es_forecast: sigma_next * es1,
    };
    Ok((sigma, sigma_next, paths))
}

/// Maximum likelihood with `σ²_1` set to the sample variance.
pub fn fit_garch_t(returns: &[f64], alpha: f64, cfg: &MultiStartConfig) -> Result<GarchTFit> {
    check_level(alpha)?;
    check_series(returns)?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let s2 = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(s2 > 0.0) {
        return domain("returns have zero variance");
    }
    let bounds = BoxConstraints::new(vec![1e-8 * s2, 0.0, 0.0, 2.05], vec![10.0 * s2, 1.0, 1.0, 500.0])?;
    let sampler = vec![(0.001 * s2, 0.2 * s2), (0.0, 0.3), (0.5, 0.99), (3.0, 30.0)];
    let ms = MultiStartConfig { sampler, ..cfg.clone() };
    let objective = |x: &[f64]| {
        if x[1] + x[2] >= 1.0 {
            return f64::INFINITY;
        }
        let p = GarchTParams { omega: x[0], gamma: x[1], delta: x[2], nu: x[3] };
        garch_t_nll(&p, returns, s2)
    };
    let anchor = vec![0.05 * s2, 0.1, 0.85, 8.0];
    let best = minimize_multistart_with_anchors(&objective, 4, &ms, &bounds, &[anchor])?;
    if !best.value.is_finite() {
        return Err(Error::OptimizationFailed(format!("GARCH-t likelihood did not converge: {:?}", best.diagnostics)));
    }
    let params = GarchTParams::new(best.x[0], best.x[1], best.x[2], best.x[3])?;
    let (sigma_path, sigma_next, paths) = garch_t_risk(&params, alpha, returns, s2)?;
    Ok(GarchTFit {
        params,
        alpha,
        sigma2_init: s2,
        sigma_path,
        sigma_next,
        paths,
        nll: best.value,
        diagnostics: best.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-2.0..2.0) + rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn care_scale_examples() {
        assert_abs_diff_eq!(care_scale(0.01, 0.025).unwrap(), 1.408163265, epsilon = 1e-8);
        for tau in [1e-4, 0.01, 0.2, 0.49] {
            assert!(care_scale(tau, 0.025).unwrap() > 1.0);
        }
        assert!(care_scale(0.5, 0.025).is_err());
        assert!(care_scale(0.0, 0.025).is_err());
    }

    #[test]
    fn tau_grid_shape() {
        let g = care_tau_grid(0.025, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert_abs_diff_eq!(g[0], 0.0005, epsilon = 1e-15);
        assert_abs_diff_eq!(g[49], 0.025, epsilon = 1e-15);
        assert!(care_tau_grid(0.025, 0).is_err());
    }

    #[test]
    fn expectile_limits() {
        let d = [-2.0, -1.0, 0.0, 4.0];
        assert_abs_diff_eq!(empirical_expectile(&d, 0.5), 0.25, epsilon = 1e-12);
        let lo = empirical_expectile(&d, 0.05);
        assert!(lo < 0.25 && lo > -2.0);
        let mu = lo;
        let grad: f64 = d.iter().map(|&r| (if r < mu { 0.95 } else { 0.05 }) * (r - mu)).sum();
        assert_abs_diff_eq!(grad, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn mult_path_is_scalar_multiple() {
        let r = noisy(300, 1);
        let p = EsCaviarParams::new(EsCaviarForm::Mult, CaviarParams::sav(-0.1, -0.2, 0.8), vec![-1.2]).unwrap();
        let paths = es_caviar_filter(&p, &r, -2.0, 0.0);
        let k = p.multiplier().unwrap();
        for (q, es) in paths.var_path.iter().zip(&paths.es_path) {
            assert_eq!(*es, k * q);
        }
        assert_eq!(paths.es_forecast, k * paths.var_forecast);
    }

    #[test]
    fn add_gap_stays_nonnegative() {
        let r = noisy(300, 2);
        let p = EsCaviarParams::new(EsCaviarForm::Add, CaviarParams::sav(-0.1, -0.2, 0.8), vec![0.05, 0.3, 0.6]).unwrap();
        let paths = es_caviar_filter(&p, &r, -2.0, 0.4);
        assert!(paths.var_path.iter().zip(&paths.es_path).all(|(q, es)| es <= q));
        assert!(EsCaviarParams::new(EsCaviarForm::Add, CaviarParams::sav(0.0, 0.0, 0.0), vec![-0.1, 0.0, 0.0]).is_err());
    }

    #[test]
    fn add_gap_updates_only_after_violation() {
        let p = EsCaviarParams::new(EsCaviarForm::Add, CaviarParams::sav(0.0, 0.0, 1.0), vec![0.1, 0.5, 0.5]).unwrap();
        let paths = es_caviar_filter(&p, &[0.0, -3.0, 0.0], -1.0, 0.2);
        let gaps: Vec<f64> = paths.var_path.iter().zip(&paths.es_path).map(|(q, e)| q - e).collect();
        assert_abs_diff_eq!(gaps[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(gaps[1], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(gaps[2], 0.1 + 0.5 * 2.0 + 0.5 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn initial_gap_is_tail_distance() {
        let r: Vec<f64> = (0..200).map(|i| -10.0 + 0.1 * i as f64).collect();
        let (q, x) = es_caviar_initial_state(&r, 0.05);
        assert!(x > 0.0);
        let tail: Vec<f64> = r[..100].iter().copied().filter(|v| *v <= q).collect();
        assert_abs_diff_eq!(x, q - tail.iter().sum::<f64>() / tail.len() as f64, epsilon = 1e-12);
    }

    #[test]
    fn mult_loss_flattens_towards_var() {
        let r = noisy(400, 3);
        let q0 = initial_quantile(&r, 0.025);
        let scan: Vec<f64> = (0..8)
            .map(|k| {
                let theta = [-0.05, -0.05, 0.9, -2.0 - 2.0 * k as f64];
                es_caviar_objective(EsCaviarForm::Mult, CaviarSpec::Sav, &theta, &r, q0, 0.0, 0.025)
            })
            .collect();
        let diffs: Vec<f64> = scan.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(diffs.windows(2).all(|d| d[1] <= d[0] + 1e-12), "{scan:?}");
    }

    #[test]
    fn garch_forecast_at_unit_sigma() {
        let p = GarchTParams::new(0.02, 0.1, 0.85, 10.0).unwrap();
        let r = vec![0.0; 300];
        let s2_init = 1.0 - 0.02;
        let s2_star = (1.0 - p.omega) / p.delta;
        let (_, _, paths) = garch_t_risk(&p, 0.025, &r[..1], s2_star).unwrap();
        assert_abs_diff_eq!(paths.var_forecast, -1.993, epsilon = 5e-4);
        assert!(paths.es_forecast < paths.var_forecast);
        let (path, _) = garch_variance_path(&p, &r[..3], s2_init);
        assert_abs_diff_eq!(path[1], 0.02 + 0.85 * s2_init, epsilon = 1e-15);
        assert!(GarchTParams::new(0.02, 0.2, 0.85, 10.0).is_err());
        assert!(GarchTParams::new(0.02, 0.1, 0.85, 2.0).is_err());
    }

    #[test]
    fn garch_nll_matches_density() {
        let p = GarchTParams::new(0.1, 0.1, 0.8, 6.0).unwrap();
        let r = [0.3, -1.2];
        let t = StudentTParams::new(6.0).unwrap();
        let s2_1 = 1.5;
        let s2_2 = 0.1 + 0.1 * 0.09 + 0.8 * s2_1;
        let ll = |x: f64, s2: f64| (crate::special::std_t_pdf(x / s2.sqrt(), t) / s2.sqrt()).ln();
        let want = -(ll(0.3, s2_1) + ll(-1.2, s2_2)) / 2.0;
        assert_abs_diff_eq!(garch_t_nll(&p, &r, s2_1), want, epsilon = 1e-12);
    }

    #[test]
    fn short_series_rejected() {
        let r = noisy(100, 4);
        let cfg = MultiStartConfig { n_candidates: 10, ..MultiStartConfig::default() };
        assert!(fit_garch_t(&r, 0.025, &cfg).is_err());
        assert!(fit_care_sav(&r, 0.025, 50, &cfg).is_err());
        assert!(fit_es_caviar(&r, 0.025, EsCaviarForm::Add, CaviarSpec::Sav, &cfg).is_err());
    }
}
