//! Second stage: ES as an affine combination of first-stage tail quantiles.
//!
//! Five estimators share one form, `ES_t = w0 + Σ w_i Q_{t,α_i}`, and differ in
//! how the weights are parameterized:
//!
//! | variant  | free parameters        | weights `w_i`                  |
//! |----------|------------------------|--------------------------------|
//! | WQ-Beta  | `w0, a, b`             | `beta_weight(i/G; a, b)`       |
//! | WQ-EW    | `w0, w1`               | `w1` for every level           |
//! | WQ-UNC   | `w0, s_1..s_M`         | `s_i^2` (non-negative)         |
//! | SA-BC    | `w0`                   | `1/M`                          |
//! | SA-No-BC | none                   | `1/M`, `w0 = 0`                |
//!
//! WQ-Beta runs on an `M+1` grid whose extra level sits one step above the
//! target, where the Beta weight vanishes for `b > 1`.
//!
//! Free parameters minimize the aggregate AL log score against the target
//! level quantile path of the first stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caviar::{check_level, QuantileGrid, QuantileMatrix};
use crate::error::{domain, Error, Result};
use crate::optimize::{minimize_multistart_with_anchors, BoxConstraints, Diagnostics, MultiStartConfig};
use crate::special::{beta_weight, BetaWeightParams};

/// Objective value returned while the search visits a non-negative ES.
pub const ES_PENALTY: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EsVariantKind {
    #[serde(rename = "WQ-Beta")]
    WqBeta,
    #[serde(rename = "WQ-EW")]
    WqEw,
    #[serde(rename = "WQ-UNC")]
    WqUnc,
    #[serde(rename = "SA-BC")]
    SaBc,
    #[serde(rename = "SA-No-BC")]
    SaNoBc,
}

impl EsVariantKind {
    pub const ALL: [EsVariantKind; 5] = [
        EsVariantKind::WqBeta,
        EsVariantKind::WqEw,
        EsVariantKind::WqUnc,
        EsVariantKind::SaBc,
        EsVariantKind::SaNoBc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EsVariantKind::WqBeta => "WQ-Beta",
            EsVariantKind::WqEw => "WQ-EW",
            EsVariantKind::WqUnc => "WQ-UNC",
            EsVariantKind::SaBc => "SA-BC",
            EsVariantKind::SaNoBc => "SA-No-BC",
        }
    }
}

impl std::str::FromStr for EsVariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "wqbeta" => Ok(EsVariantKind::WqBeta),
            "wqew" => Ok(EsVariantKind::WqEw),
            "wqunc" => Ok(EsVariantKind::WqUnc),
            "sabc" => Ok(EsVariantKind::SaBc),
            "sanobc" => Ok(EsVariantKind::SaNoBc),
            _ => domain(format!("unknown ES estimator '{s}'")),
        }
    }
}

/// An estimator together with its grid size `M` and lower level `alpha1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsVariant {
    pub kind: EsVariantKind,
    pub m: usize,
    pub alpha1: f64,
}

impl EsVariant {
    pub fn new(kind: EsVariantKind, m: usize, alpha1: f64) -> Result<Self> {
        if m < 2 {
            return domain(format!("grid size M must be at least 2, got {m}"));
        }
        if !(alpha1 > 0.0 && alpha1 < 1.0) {
            return domain(format!("alpha1 must lie in (0,1), got {alpha1}"));
        }
        Ok(Self { kind, m, alpha1 })
    }

    /// e.g. `WQ-Beta-3`
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind.label(), self.m)
    }

    /// Number of grid levels the estimator consumes.
    pub fn grid_size(&self) -> usize {
        match self.kind {
            EsVariantKind::WqBeta => self.m + 1,
            _ => self.m,
        }
    }
}

/// Equally spaced levels `alpha1, ..., alpha` (plus `alpha + eta` for WQ-Beta).
pub fn build_grid(alpha: f64, variant: &EsVariant) -> Result<QuantileGrid> {
    check_level(alpha)?;
    let EsVariant { m, alpha1, .. } = *variant;
    if m < 2 {
        return domain(format!("grid size M must be at least 2, got {m}"));
    }
    if !(alpha1 > 0.0 && alpha1 < alpha) {
        return domain(format!("alpha1 ({alpha1}) must lie in (0, alpha = {alpha})"));
    }
    let eta = (alpha - alpha1) / (m - 1) as f64;
    let mut levels: Vec<f64> = (0..m).map(|i| alpha1 + i as f64 * eta).collect();
    levels[m - 1] = alpha;
    if variant.kind == EsVariantKind::WqBeta {
        let extra = alpha + eta;
        if extra >= 1.0 {
            return domain("extended grid level reaches 1");
        }
        levels.push(extra);
    }
    QuantileGrid::new(levels, m - 1)
}

/// `w_i = beta_weight(i / G; a, b)` for `i = 1..G`.
pub fn weights_from_beta(p: BetaWeightParams, g: usize) -> Result<Vec<f64>> {
    if g < 2 {
        return domain(format!("weight grid needs at least 2 points, got {g}"));
    }
    (1..=g).map(|i| beta_weight(i as f64 / g as f64, p)).collect()
}

/// AL log score `-log((α-1)/es) - (r-q)(α - 1{r<=q}) / (α es)`.
pub fn al_joint_loss(r: f64, q: f64, es: f64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if !(es < 0.0) {
        return Err(Error::ScoreUndefined { step: 0, es });
    }
    Ok(al_score(r, q, es, alpha))
}

#[inline]
pub(crate) fn al_score(r: f64, q: f64, es: f64, alpha: f64) -> f64 {
    let hit = if r <= q { 1.0 } else { 0.0 };
    -((alpha - 1.0) / es).ln() - (r - q) * (alpha - hit) / (alpha * es)
}

/// Fitted (or fixed) weights of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsWeightFit {
    pub variant: EsVariant,
    pub alpha: f64,
    pub w0: f64,
    pub beta_params: Option<BetaWeightParams>,
    pub w_scalar: Option<f64>,
    pub w_vector: Option<Vec<f64>>,
    /// Weight applied to each grid level, in grid order.
    pub derived_weights: Vec<f64>,
    /// Sum of the applied weights.
    pub theta: f64,
    /// Mean in-sample AL score at the fitted weights.
    pub loss: f64,
    #[serde(skip)]
    pub diagnostics: Option<Diagnostics>,
}

impl EsWeightFit {
    /// Builds the estimator from its free-parameter vector.
    ///
    /// Layouts: WQ-Beta `[w0, a, b]`, WQ-EW `[w0, w1]`, WQ-UNC
    /// `[w0, w_1..w_M]` (weights, not square roots), SA-BC `[w0]`,
    /// SA-No-BC `[]`.
    pub fn from_params(variant: EsVariant, alpha: f64, params: &[f64]) -> Result<Self> {
        let expected = n_free_params(&variant);
        if params.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: params.len() });
        }
        let m = variant.m;
        let mut fit = Self {
            variant,
            alpha,
            w0: 0.0,
            beta_params: None,
            w_scalar: None,
            w_vector: None,
            derived_weights: Vec::new(),
            theta: 0.0,
            loss: f64::NAN,
            diagnostics: None,
        };
        match variant.kind {
            EsVariantKind::WqBeta => {
                let bp = BetaWeightParams::new(params[1], params[2])?;
                fit.w0 = params[0];
                fit.beta_params = Some(bp);
                fit.derived_weights = weights_from_beta(bp, m + 1)?;
            }
            EsVariantKind::WqEw => {
                fit.w0 = params[0];
                fit.w_scalar = Some(params[1]);
                fit.derived_weights = vec![params[1]; m];
            }
            EsVariantKind::WqUnc => {
                if params[1..].iter().any(|w| *w < 0.0) {
                    return domain("WQ-UNC weights must be non-negative");
                }
                fit.w0 = params[0];
                fit.w_vector = Some(params[1..].to_vec());
                fit.derived_weights = params[1..].to_vec();
            }
            EsVariantKind::SaBc => {
                fit.w0 = params[0];
                fit.derived_weights = vec![1.0 / m as f64; m];
            }
            EsVariantKind::SaNoBc => {
                fit.derived_weights = vec![1.0 / m as f64; m];
            }
        }
        fit.theta = fit.derived_weights.iter().sum();
        Ok(fit)
    }

    /// Index of the target level within the estimator's grid.
    pub fn target_index(&self) -> usize {
        self.variant.m - 1
    }

    /// `(θ, w̃)` with `w̃ = w / θ` summing to one.
    pub fn normalized_weights(&self) -> (f64, Vec<f64>) {
        let theta = self.theta;
        (theta, self.derived_weights.iter().map(|w| w / theta).collect())
    }

    /// Same estimator with its applied weights replaced.
    pub fn with_weights(&self, w0: f64, weights: Vec<f64>) -> Self {
        let theta = weights.iter().sum();
        Self { w0, derived_weights: weights, theta, ..self.clone() }
    }
}

fn n_free_params(variant: &EsVariant) -> usize {
    match variant.kind {
        EsVariantKind::WqBeta => 3,
        EsVariantKind::WqEw => 2,
        EsVariantKind::WqUnc => variant.m + 1,
        EsVariantKind::SaBc => 1,
        EsVariantKind::SaNoBc => 0,
    }
}

/// `w0 + Σ w_i q_i` over one row of grid quantiles.
pub fn es_estimate(fit: &EsWeightFit, q_row: &[f64]) -> Result<f64> {
    if q_row.len() != fit.derived_weights.len() {
        return Err(Error::LengthMismatch { expected: fit.derived_weights.len(), actual: q_row.len() });
    }
    Ok(affine(fit.w0, &fit.derived_weights, q_row))
}

#[inline]
fn affine(w0: f64, weights: &[f64], row: &[f64]) -> f64 {
    w0 + weights.iter().zip(row).map(|(w, q)| w * q).sum::<f64>()
}

/// In-sample ES path implied by `fit` over a quantile matrix.
pub fn es_path(fit: &EsWeightFit, qm: &QuantileMatrix) -> Result<Vec<f64>> {
    (0..qm.n_obs).map(|t| es_estimate(fit, qm.row(t))).collect()
}

/// Aggregate AL score of an ES path against returns and a VaR path.
pub fn aggregate_al_loss(returns: &[f64], var: &[f64], es: &[f64], alpha: f64) -> Result<f64> {
    if returns.len() != var.len() {
        return Err(Error::LengthMismatch { expected: returns.len(), actual: var.len() });
    }
    if returns.len() != es.len() {
        return Err(Error::LengthMismatch { expected: returns.len(), actual: es.len() });
    }
    check_level(alpha)?;
    let mut total = 0.0;
    for (t, ((&r, &q), &e)) in returns.iter().zip(var).zip(es).enumerate() {
        if !(e < 0.0) {
            return Err(Error::ScoreUndefined { step: t, es: e });
        }
        total += al_score(r, q, e, alpha);
    }
    Ok(total)
}

/// Settings of the second-stage weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Config {
    /// Random restarts drawn around the default starting point.
    pub n_random: usize,
    pub n_refine: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for Step2Config {
    fn default() -> Self {
        Self { n_random: 100, n_refine: 2, seed: 0, max_iterations: 2_000, gradient_tolerance: 1e-6 }
    }
}

/// One-step forecast of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsForecast {
    pub es: f64,
    pub var: f64,
    /// `w_i Q̂_{N+1,α_i}` per grid level.
    pub components: Vec<f64>,
    /// ES came out above VaR and was set equal to it.
    pub clamped: bool,
}

/// Fits the weights of `variant` given first-stage quantiles.
///
/// The VaR fed to the score is the target-level column of `qm`.
pub fn fit_es_weights(returns: &[f64], qm: &QuantileMatrix, variant: &EsVariant, cfg: &Step2Config) -> Result<EsWeightFit> {
    let alpha = qm.grid.target();
    let grid = build_grid(alpha, variant)?;
    if grid.len() != qm.n_levels() || grid.levels.iter().zip(&qm.grid.levels).any(|(a, b)| (a - b).abs() > 1e-9) {
        return domain(format!("quantile matrix grid does not match estimator {}", variant.label()));
    }
    if returns.len() != qm.n_obs {
        return Err(Error::LengthMismatch { expected: qm.n_obs, actual: returns.len() });
    }
    let target = qm.target_path();
    let g = qm.n_levels();
    let m = variant.m;
    let rows: Vec<f64> = (0..qm.n_obs).flat_map(|t| qm.row(t).to_vec()).collect();

    let score = |w0: f64, weights: &[f64]| -> f64 {
        let mut total = 0.0;
        for (t, (&r, &q)) in returns.iter().zip(&target).enumerate() {
            let es = affine(w0, weights, &rows[t * g..(t + 1) * g]);
            if !(es < 0.0) {
                return ES_PENALTY;
            }
            total += al_score(r, q, es, alpha);
        }
        let mean = total / returns.len() as f64;
        if mean.is_finite() {
            mean
        } else {
            ES_PENALTY
        }
    };

    if variant.kind == EsVariantKind::SaNoBc {
        let mut fit = EsWeightFit::from_params(*variant, alpha, &[])?;
        fit.loss = score(0.0, &fit.derived_weights);
        if fit.loss >= ES_PENALTY {
            return Err(Error::OptimizationFailed("simple average yields a non-negative ES".into()));
        }
        return Ok(fit);
    }

    // Search coordinates, their bounds, and the map back to fit parameters.
    let inv_m = 1.0 / m as f64;
    let (center, bounds): (Vec<f64>, BoxConstraints) = match variant.kind {
        EsVariantKind::WqBeta => (
            vec![0.0, 1.0, 2.0],
            BoxConstraints::new(vec![f64::NEG_INFINITY, 1e-2, 1.0], vec![f64::INFINITY, 100.0, 100.0])?,
        ),
        EsVariantKind::WqEw => (vec![0.0, inv_m], BoxConstraints::unbounded(2)),
        EsVariantKind::WqUnc => {
            let mut c = vec![inv_m.sqrt(); m + 1];
            c[0] = 0.0;
            (c, BoxConstraints::unbounded(m + 1))
        }
        EsVariantKind::SaBc => (vec![0.0], BoxConstraints::unbounded(1)),
        EsVariantKind::SaNoBc => unreachable!(),
    };
    let to_weights = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        match variant.kind {
            EsVariantKind::WqBeta => {
                let bp = BetaWeightParams { a: x[1], b: x[2] };
                weights_from_beta(bp, g).ok().map(|w| (x[0], w))
            }
            EsVariantKind::WqEw => Some((x[0], vec![x[1]; m])),
            EsVariantKind::WqUnc => Some((x[0], x[1..].iter().map(|s| s * s).collect())),
            EsVariantKind::SaBc => Some((x[0], vec![inv_m; m])),
            EsVariantKind::SaNoBc => None,
        }
    };
    let objective = |x: &[f64]| match to_weights(x) {
        Some((w0, w)) => score(w0, &w),
        None => ES_PENALTY,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut anchors = vec![center.clone()];
    for _ in 0..cfg.n_random {
        let mut x: Vec<f64> = center
            .iter()
            .map(|&c| {
                let half = 0.5 * c.abs().max(0.5);
                c + rng.gen_range(-half..half)
            })
            .collect();
        bounds.project(&mut x);
        anchors.push(x);
    }
    let ms = MultiStartConfig {
        n_candidates: cfg.n_refine.max(1),
        n_refine: cfg.n_refine.max(1),
        sampler: center.iter().map(|&c| (c, c)).collect(),
        seed: cfg.seed,
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
    };
    let best = minimize_multistart_with_anchors(&objective, center.len(), &ms, &bounds, &anchors)?;
    if best.value >= ES_PENALTY {
        return Err(Error::OptimizationFailed(format!(
            "{}: every starting point implies a non-negative ES",
            variant.label()
        )));
    }

    let params: Vec<f64> = match variant.kind {
        EsVariantKind::WqUnc => {
            let mut p = vec![best.x[0]];
            p.extend(best.x[1..].iter().map(|s| s * s));
            p
        }
        _ => best.x.clone(),
    };
    let mut fit = EsWeightFit::from_params(*variant, alpha, &params)?;
    fit.loss = best.value;
    fit.diagnostics = Some(best.diagnostics);
    Ok(fit)
}

/// One-step ES forecast from the first-stage forecast row.
pub fn forecast_es(fit: &EsWeightFit, q_forecast_row: &[f64]) -> Result<EsForecast> {
    let es = es_estimate(fit, q_forecast_row)?;
    let var = q_forecast_row[fit.target_index()];
    let components = fit.derived_weights.iter().zip(q_forecast_row).map(|(w, q)| w * q).collect();
    let clamped = es > var;
    Ok(EsForecast { es: if clamped { var } else { es }, var, components, clamped })
}
