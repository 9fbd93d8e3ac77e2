//! CAViaR quantile recursions and their quantile-loss fits over a grid of
//! tail levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optimize::{minimize_multistart_with_anchors, BoxConstraints, Diagnostics, MultiStartConfig};

/// Shortest in-sample window accepted by the fitters.
pub const MIN_FIT_OBS: usize = 250;

/// Number of leading observations used for the recursion's starting value.
pub const INIT_WINDOW: usize = 100;

/// Bound on the autoregressive coefficient during fitting.
pub const MAX_PERSISTENCE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaviarSpec {
    /// Symmetric absolute value: `Q_t = b0 + b1 |r_{t-1}| + b2 Q_{t-1}`.
    #[serde(rename = "SAV")]
    Sav,
    /// Asymmetric slope: separate responses to positive and negative returns.
    #[serde(rename = "AS")]
    As,
}

impl CaviarSpec {
    pub fn n_params(self) -> usize {
        match self {
            CaviarSpec::Sav => 3,
            CaviarSpec::As => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CaviarSpec::Sav => "SAV",
            CaviarSpec::As => "AS",
        }
    }

    /// Stage-1 sampling intervals: intercept and slopes drawn from `[-1, 0]`
    /// (lower-tail quantiles are negative and fall with `|r|`), persistence
    /// from `[0, 1]`.
    pub fn default_sampler(self) -> Vec<(f64, f64)> {
        match self {
            CaviarSpec::Sav => vec![(-1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)],
            CaviarSpec::As => vec![(-1.0, 0.0), (-1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)],
        }
    }

    pub fn bounds(self) -> BoxConstraints {
        let n = self.n_params();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        lower[n - 1] = -MAX_PERSISTENCE;
        upper[n - 1] = MAX_PERSISTENCE;
        BoxConstraints { lower, upper }
    }
}

impl std::str::FromStr for CaviarSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SAV" => Ok(CaviarSpec::Sav),
            "AS" => Ok(CaviarSpec::As),
            other => domain(format!("unknown CAViaR specification '{other}'")),
        }
    }
}

/// Recursion coefficients. SAV holds `(b0, b1, b2)`; AS holds
/// `(b0, b1_pos, b1_neg, b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviarParams {
    pub spec: CaviarSpec,
    pub beta: Vec<f64>,
}

impl CaviarParams {
    pub fn sav(b0: f64, b1: f64, b2: f64) -> Self {
        Self { spec: CaviarSpec::Sav, beta: vec![b0, b1, b2] }
    }

    pub fn asymmetric(b0: f64, b1_pos: f64, b1_neg: f64, b2: f64) -> Self {
        Self { spec: CaviarSpec::As, beta: vec![b0, b1_pos, b1_neg, b2] }
    }

    pub fn from_slice(spec: CaviarSpec, beta: &[f64]) -> Result<Self> {
        if beta.len() != spec.n_params() {
            return Err(Error::LengthMismatch { expected: spec.n_params(), actual: beta.len() });
        }
        Ok(Self { spec, beta: beta.to_vec() })
    }

    pub fn persistence(&self) -> f64 {
        *self.beta.last().expect("non-empty coefficients")
    }

    /// One step of the recursion.
    #[inline]
    pub fn step(&self, r_prev: f64, q_prev: f64) -> f64 {
        step(self.spec, &self.beta, r_prev, q_prev)
    }
}

#[inline]
pub(crate) fn step(spec: CaviarSpec, beta: &[f64], r_prev: f64, q_prev: f64) -> f64 {
    match spec {
        CaviarSpec::Sav => beta[0] + beta[1] * r_prev.abs() + beta[2] * q_prev,
        CaviarSpec::As => beta[0] + beta[1] * r_prev.max(0.0) + beta[2] * (-r_prev).max(0.0) + beta[3] * q_prev,
    }
}

/// Ordered tail probability levels with the target level marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub levels: Vec<f64>,
    pub target_index: usize,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>, target_index: usize) -> Result<Self> {
        if levels.is_empty() {
            return domain("quantile grid is empty");
        }
        if target_index >= levels.len() {
            return domain(format!("target index {target_index} outside grid of {}", levels.len()));
        }
        if levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return domain("grid levels must lie in (0,1)");
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return domain("grid levels must be strictly increasing");
        }
        if levels.len() > 2 {
            let eta = levels[1] - levels[0];
            if levels.windows(2).any(|w| ((w[1] - w[0]) - eta).abs() > 1e-9) {
                return domain("grid levels must be equally spaced");
            }
        }
        Ok(Self { levels, target_index })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn target(&self) -> f64 {
        self.levels[self.target_index]
    }
}

/// Mean quantile ("pinball") loss `(1/N) Σ (α - 1{r<Q}) (r - Q)`.
pub fn quantile_loss(returns: &[f64], quantiles: &[f64], alpha: f64) -> Result<f64> {
    if returns.len() != quantiles.len() {
        return Err(Error::LengthMismatch { expected: returns.len(), actual: quantiles.len() });
    }
    if returns.is_empty() {
        return domain("quantile loss of an empty series");
    }
    check_level(alpha)?;
    let total: f64 = returns.iter().zip(quantiles).map(|(&r, &q)| pinball(r, q, alpha)).sum();
    Ok(total / returns.len() as f64)
}

#[inline]
pub(crate) fn pinball(r: f64, q: f64, alpha: f64) -> f64 {
    let hit = if r < q { 1.0 } else { 0.0 };
    (alpha - hit) * (r - q)
}

pub(crate) fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("probability level must lie in (0,1), got {alpha}"));
    }
    Ok(())
}

/// Runs the recursion over `returns` from `Q_1 = q_init`.
pub fn filter(params: &CaviarParams, returns: &[f64], q_init: f64) -> Vec<f64> {
    let mut path = Vec::with_capacity(returns.len());
    if returns.is_empty() {
        return path;
    }
    let mut q = q_init;
    path.push(q);
    for &r in &returns[..returns.len() - 1] {
        q = params.step(r, q);
        path.push(q);
    }
    path
}

fn filtered_loss(spec: CaviarSpec, beta: &[f64], returns: &[f64], q_init: f64, alpha: f64) -> f64 {
    let mut q = q_init;
    let mut total = pinball(returns[0], q, alpha);
    for t in 1..returns.len() {
        q = step(spec, beta, returns[t - 1], q);
        total += pinball(returns[t], q, alpha);
    }
    total / returns.len() as f64
}

/// Linear-interpolation (type 7) empirical quantile.
pub fn empirical_quantile(data: &[f64], p: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Starting value of a recursion: empirical `alpha` quantile of the first
/// [`INIT_WINDOW`] returns.
pub fn initial_quantile(returns: &[f64], alpha: f64) -> f64 {
    empirical_quantile(&returns[..returns.len().min(INIT_WINDOW)], alpha)
}

/// A fitted single-level CAViaR model.
#[derive(Debug, Clone, PartialEq)]
pub struct CaviarFit {
    pub level: f64,
    pub params: CaviarParams,
    pub q_init: f64,
    /// In-sample quantile path.
    pub path: Vec<f64>,
    /// One-step-ahead quantile forecast.
    pub forecast: f64,
    /// Mean in-sample quantile loss.
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

/// Fits one level by multi-start minimization of the quantile loss.
///
/// An empty `cfg.sampler` is replaced by [`CaviarSpec::default_sampler`].
/// AS fits are anchored at the nested solution of an SAV fit, so the AS loss
/// never exceeds the SAV loss.
pub fn fit_caviar(returns: &[f64], alpha: f64, spec: CaviarSpec, cfg: &MultiStartConfig) -> Result<CaviarFit> {
    fit_caviar_anchored(returns, alpha, spec, cfg, &[])
}

/// [`fit_caviar`] with extra stage-1 starting points.
pub fn fit_caviar_anchored(
    returns: &[f64],
    alpha: f64,
    spec: CaviarSpec,
    cfg: &MultiStartConfig,
    anchors: &[Vec<f64>],
) -> Result<CaviarFit> {
    check_level(alpha)?;
    if returns.len() < MIN_FIT_OBS {
        return domain(format!("CAViaR fit needs at least {MIN_FIT_OBS} observations, got {}", returns.len()));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return domain("returns contain non-finite values");
    }
    let q_init = initial_quantile(returns, alpha);

    let mut anchors = anchors.to_vec();
    if spec == CaviarSpec::As {
        let sav = fit_caviar(returns, alpha, CaviarSpec::Sav, cfg)?;
        let b = &sav.params.beta;
        anchors.push(vec![b[0], b[1], b[1], b[2]]);
    }

    let cfg = if cfg.sampler.is_empty() { cfg.with_sampler(spec.default_sampler()) } else { cfg.clone() };
    let objective = |beta: &[f64]| filtered_loss(spec, beta, returns, q_init, alpha);
    let best = minimize_multistart_with_anchors(&objective, spec.n_params(), &cfg, &spec.bounds(), &anchors)?;

    let params = CaviarParams::from_slice(spec, &best.x)?;
    let path = filter(&params, returns, q_init);
    let forecast = params.step(returns[returns.len() - 1], path[path.len() - 1]);
    Ok(CaviarFit { level: alpha, params, q_init, path, forecast, loss: best.value, diagnostics: best.diagnostics })
}

/// Monotone rearrangement of a row of quantiles ordered by level.
pub fn rearrange(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// In-sample quantiles (`n_obs` rows by `G` levels, row-major) and the
/// one-step forecasts, after per-row rearrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMatrix {
    pub grid: QuantileGrid,
    pub n_obs: usize,
    values: Vec<f64>,
    pub forecasts: Vec<f64>,
    /// Per-level coefficients, in grid order.
    pub params: Vec<CaviarParams>,
}

impl QuantileMatrix {
    /// Assembles per-level fits (in grid order) and rearranges every row.
    pub fn from_fits(grid: QuantileGrid, fits: &[CaviarFit]) -> Result<Self> {
        if fits.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: fits.len() });
        }
        let paths: Vec<&[f64]> = fits.iter().map(|f| f.path.as_slice()).collect();
        let forecasts: Vec<f64> = fits.iter().map(|f| f.forecast).collect();
        let params = fits.iter().map(|f| f.params.clone()).collect();
        Self::assemble(grid, &paths, &forecasts, params)
    }

    /// Re-filters `returns` with fixed per-level coefficients, restarting each
    /// recursion from the window's empirical quantile.
    pub fn from_params(grid: QuantileGrid, params: Vec<CaviarParams>, returns: &[f64]) -> Result<Self> {
        if params.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: params.len() });
        }
        if returns.is_empty() {
            return domain("cannot filter an empty series");
        }
        let last = returns[returns.len() - 1];
        let mut paths = Vec::with_capacity(grid.len());
        let mut forecasts = Vec::with_capacity(grid.len());
        for (p, &level) in params.iter().zip(&grid.levels) {
            let path = filter(p, returns, initial_quantile(returns, level));
            forecasts.push(p.step(last, path[path.len() - 1]));
            paths.push(path);
        }
        let refs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
        Self::assemble(grid, &refs, &forecasts, params)
    }

    fn assemble(grid: QuantileGrid, paths: &[&[f64]], forecasts: &[f64], params: Vec<CaviarParams>) -> Result<Self> {
        let n_obs = paths.first().map_or(0, |p| p.len());
        if let Some(p) = paths.iter().find(|p| p.len() != n_obs) {
            return Err(Error::LengthMismatch { expected: n_obs, actual: p.len() });
        }
        let g = grid.len();
        let mut values = vec![0.0; n_obs * g];
        let mut row = vec![0.0; g];
        for t in 0..n_obs {
            for (i, p) in paths.iter().enumerate() {
                row[i] = p[t];
            }
            row.sort_by(f64::total_cmp);
            values[t * g..(t + 1) * g].copy_from_slice(&row);
        }
        Ok(Self { grid, n_obs, values, forecasts: rearrange(forecasts), params })
    }

    pub fn n_levels(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[t * g..(t + 1) * g]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_obs).map(|t| self.row(t)[i]).collect()
    }

    /// In-sample quantile path at the target level.
    pub fn target_path(&self) -> Vec<f64> {
        self.column(self.grid.target_index)
    }

    pub fn target_forecast(&self) -> f64 {
        self.forecasts[self.grid.target_index]
    }
}

/// SplitMix64 mixing of a base seed with a stream index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits every grid level independently and rearranges the result.
///
/// Level `i` uses seed `derive_seed(cfg.seed, i)`, so the output does not
/// depend on scheduling.
pub fn fit_grid(returns: &[f64], grid: &QuantileGrid, spec: CaviarSpec, cfg: &MultiStartConfig) -> Result<QuantileMatrix> {
    let fits = fit_levels(returns, &grid.levels, spec, cfg)?;
    QuantileMatrix::from_fits(grid.clone(), &fits)
}

/// Independent fits at each level, in the given order.
pub fn fit_levels(returns: &[f64], levels: &[f64], spec: CaviarSpec, cfg: &MultiStartConfig) -> Result<Vec<CaviarFit>> {
    levels
        .par_iter()
        .enumerate()
        .map(|(i, &level)| fit_caviar(returns, level, spec, &cfg.with_seed(derive_seed(cfg.seed, i as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_loss_examples() {
        assert_abs_diff_eq!(quantile_loss(&[-1.0], &[-2.0], 0.025).unwrap(), 0.025, epsilon = 1e-15);
        assert_eq!(quantile_loss(&[-2.0], &[-2.0], 0.025).unwrap(), 0.0);
        assert_abs_diff_eq!(quantile_loss(&[-3.0], &[-2.0], 0.025).unwrap(), 0.975, epsilon = 1e-15);
        assert!(matches!(quantile_loss(&[1.0, 2.0], &[0.0], 0.1), Err(Error::LengthMismatch { .. })));
        assert!(quantile_loss(&[1.0], &[0.0], 1.5).is_err());
    }

    #[test]
    fn filter_examples() {
        let p = CaviarParams::sav(0.0, 0.0, 0.9);
        let r = [0.3, -2.0, 1.1, 0.0, 5.0];
        let path = filter(&p, &r, -1.0);
        for (t, q) in path.iter().enumerate() {
            assert_abs_diff_eq!(*q, -(0.9f64.powi(t as i32)), epsilon = 1e-15);
        }
        let p = CaviarParams::sav(-0.05, -0.1, 0.9);
        assert_abs_diff_eq!(p.step(2.0, -1.0), -1.15, epsilon = 1e-15);
    }

    #[test]
    fn as_nests_sav_path() {
        let r: Vec<f64> = (0..200).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.3).collect();
        let sav = CaviarParams::sav(-0.04, -0.21, 0.86);
        let asy = CaviarParams::asymmetric(-0.04, -0.21, -0.21, 0.86);
        assert_eq!(filter(&sav, &r, -1.3), filter(&asy, &r, -1.3));
    }

    #[test]
    fn rearrange_examples() {
        assert_eq!(rearrange(&[-2.1, -2.3, -1.9]), vec![-2.3, -2.1, -1.9]);
        let mono = [-3.0, -2.5, -2.5, -1.0];
        assert_eq!(rearrange(&mono), mono.to_vec());
        let row = [0.4, -1.2, 3.3, -0.7];
        let s: f64 = rearrange(&row).iter().sum();
        assert_abs_diff_eq!(s, row.iter().sum::<f64>(), epsilon = 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![0.01, 0.02, 0.025], 2).is_err());
        assert!(QuantileGrid::new(vec![0.02, 0.01], 1).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.01], 1).is_err());
        assert!(QuantileGrid::new(vec![0.01, 0.02], 2).is_err());
        let g = QuantileGrid::new(vec![0.01, 0.02, 0.03], 1).unwrap();
        assert_eq!(g.target(), 0.02);
    }

    #[test]
    fn fit_rejects_short_series() {
        let r = vec![-0.5; 100];
        assert!(fit_caviar(&r, 0.025, CaviarSpec::Sav, &MultiStartConfig::default()).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn matrix_rows_are_monotone() {
        let grid = QuantileGrid::new(vec![0.01, 0.02, 0.03], 2).unwrap();
        let r: Vec<f64> = (0..300).map(|i| ((i * 7919 % 101) as f64 / 50.0 - 1.0) * 1.5).collect();
        // deliberately crossing recursions
        let params = vec![
            CaviarParams::sav(-0.1, -0.3, 0.8),
            CaviarParams::sav(-0.3, -0.05, 0.7),
            CaviarParams::sav(-0.05, -0.4, 0.85),
        ];
        let qm = QuantileMatrix::from_params(grid, params, &r).unwrap();
        for t in 0..qm.n_obs {
            assert!(qm.row(t).windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(qm.forecasts.windows(2).all(|w| w[0] <= w[1]));
    }
}
