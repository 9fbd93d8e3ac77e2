//! Bounded minimization with a two-stage multi-start protocol.
//!
//! Stage 1 evaluates the objective on a cloud of random candidates. Stage 2
//! refines the best few: a Nelder-Mead simplex pass (robust on the kinks of
//! piecewise-linear losses) alternated with a projected quasi-Newton (BFGS)
//! polish driven by central-difference gradients.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Elementwise bounds, possibly infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConstraints {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch { expected: lower.len(), actual: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return domain("box constraints require lower <= upper elementwise");
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(l, u);
        }
    }

    fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        self.project(&mut v);
        v
    }
}

/// Settings of the multi-start search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartConfig {
    /// Number of random candidates evaluated in stage 1.
    pub n_candidates: usize,
    /// Number of best candidates refined in stage 2.
    pub n_refine: usize,
    /// Per-parameter sampling intervals. Empty means `[0, 1]` for every
    /// parameter; a degenerate interval pins that coordinate.
    #[serde(default)]
    pub sampler: Vec<(f64, f64)>,
    pub seed: u64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for MultiStartConfig {
    fn default() -> Self {
        Self {
            n_candidates: 10_000,
            n_refine: 2,
            sampler: Vec::new(),
            seed: 0,
            max_iterations: 2_000,
            gradient_tolerance: 1e-6,
        }
    }
}

impl MultiStartConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_sampler(&self, sampler: Vec<(f64, f64)>) -> Self {
        Self { sampler, ..self.clone() }
    }

    pub fn local_tolerances(&self) -> LocalTolerances {
        LocalTolerances {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            ..LocalTolerances::default()
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.n_candidates == 0 || self.n_refine == 0 {
            return domain("multi-start needs at least one candidate and one refinement");
        }
        if self.n_refine > self.n_candidates {
            return domain(format!(
                "n_refine ({}) exceeds n_candidates ({})",
                self.n_refine, self.n_candidates
            ));
        }
        if !self.sampler.is_empty() && self.sampler.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, actual: self.sampler.len() });
        }
        if self.sampler.iter().any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
            return domain("sampler intervals must be finite with lower <= upper");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTolerances {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Relative objective change below which a method stops.
    pub f_tolerance: f64,
    /// Simplex diameter below which Nelder-Mead stops.
    pub x_tolerance: f64,
}

impl Default for LocalTolerances {
    fn default() -> Self {
        Self { max_iterations: 2_000, gradient_tolerance: 1e-6, f_tolerance: 1e-12, x_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub iterations: usize,
    /// Stationarity (or simplex collapse) reached before the iteration cap.
    pub converged: bool,
    /// Stage-1 candidates with a finite objective.
    pub finite_candidates: usize,
    /// Best stage-1 objective value.
    pub best_candidate_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub diagnostics: Diagnostics,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Multi-start minimization over random candidates only.
pub fn minimize_multistart<F>(
    objective: &F,
    dim: usize,
    cfg: &MultiStartConfig,
    bounds: &BoxConstraints,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    minimize_multistart_with_anchors(objective, dim, cfg, bounds, &[])
}

/// Multi-start minimization where `anchors` are always part of the stage-1
/// candidate set, ahead of the random draws.
pub fn minimize_multistart_with_anchors<F>(
    objective: &F,
    dim: usize,
    cfg: &MultiStartConfig,
    bounds: &BoxConstraints,
    anchors: &[Vec<f64>],
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate(dim)?;
    if bounds.dim() != dim {
        return Err(Error::LengthMismatch { expected: dim, actual: bounds.dim() });
    }
    if let Some(a) = anchors.iter().find(|a| a.len() != dim) {
        return Err(Error::LengthMismatch { expected: dim, actual: a.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut candidates: Vec<Vec<f64>> = anchors.iter().map(|a| bounds.projected(a)).collect();
    for _ in 0..cfg.n_candidates {
        let mut x: Vec<f64> = (0..dim)
            .map(|i| {
                let (lo, hi) = cfg.sampler.get(i).copied().unwrap_or((0.0, 1.0));
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        bounds.project(&mut x);
        candidates.push(x);
    }

    let values: Vec<f64> = candidates.par_iter().map(|x| sanitize(objective(x))).collect();
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| values[i].is_finite()).collect();
    let finite = order.len();
    if finite == 0 {
        return Err(Error::OptimizationFailed(format!(
            "objective non-finite at all {} candidates",
            candidates.len()
        )));
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let best_candidate_value = values[order[0]];

    let tol = cfg.local_tolerances();
    let refined: Vec<Minimum> = order
        .iter()
        .take(cfg.n_refine)
        .copied()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| refine(objective, &candidates[i], values[i], bounds, &tol))
        .collect();

    let mut best = refined
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.value.total_cmp(&b.value).then(ia.cmp(ib)))
        .map(|(_, m)| m)
        .expect("at least one refinement");
    best.diagnostics.evaluations += candidates.len();
    best.diagnostics.finite_candidates = finite;
    best.diagnostics.best_candidate_value = best_candidate_value;
    Ok(best)
}

/// Alternates simplex descent and quasi-Newton polish until neither improves.
fn refine<F>(objective: &F, start: &[f64], start_value: f64, bounds: &BoxConstraints, tol: &LocalTolerances) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let mut cur = Minimum { x: start.to_vec(), value: start_value, diagnostics: Diagnostics::default() };
    let mut evaluations = 0;
    let mut iterations = 0;
    for _round in 0..4 {
        let before = cur.value;
        if let Ok(nm) = nelder_mead(objective, &cur.x, bounds, tol) {
            evaluations += nm.diagnostics.evaluations;
            iterations += nm.diagnostics.iterations;
            if nm.value <= cur.value {
                cur = nm;
            }
        }
        if let Ok(qn) = minimize_local(objective, &cur.x, bounds, tol) {
            evaluations += qn.diagnostics.evaluations;
            iterations += qn.diagnostics.iterations;
            if qn.value <= cur.value {
                cur = qn;
            }
        }
        if before - cur.value <= 1e-10 * (1.0 + before.abs()) {
            break;
        }
    }
    cur.diagnostics.evaluations = evaluations;
    cur.diagnostics.iterations = iterations;
    cur
}

/// Bounded Nelder-Mead with adaptive coefficients; vertices are projected
/// onto the box.
pub fn nelder_mead<F>(objective: &F, start: &[f64], bounds: &BoxConstraints, tol: &LocalTolerances) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    if bounds.dim() != n {
        return Err(Error::LengthMismatch { expected: n, actual: bounds.dim() });
    }
    let evals = Cell::new(0usize);
    let f = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(objective(x))
    };

    let x0 = bounds.projected(start);
    let f0 = f(&x0);
    if !f0.is_finite() {
        return domain("objective is not finite at the simplex start");
    }
    let nf = n as f64;
    let (rho, chi, gamma, sigma) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let step = if x0[i].abs() > 1e-8 { 0.05 * x0[i].abs() } else { 0.000_25 };
        let mut v = x0.clone();
        v[i] += step;
        bounds.project(&mut v);
        if v[i] == x0[i] {
            v[i] -= step;
            bounds.project(&mut v);
        }
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < tol.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fbest = simplex[0].1;
        let fspread = simplex.iter().map(|s| (s.1 - fbest).abs()).fold(0.0, f64::max);
        let xspread = simplex[1..]
            .iter()
            .flat_map(|s| s.0.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if fspread <= tol.f_tolerance * (1.0 + fbest.abs()) && xspread <= tol.x_tolerance * 1e1 {
            converged = true;
            break;
        }
        if xspread <= tol.x_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for s in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(&s.0) {
                *c += xi / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut v: Vec<f64> =
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect();
            bounds.project(&mut v);
            v
        };

        let xr = along(rho);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(rho * chi);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(rho * gamma);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-gamma);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = best.iter().zip(&s.0).map(|(b, x)| b + sigma * (x - b)).collect();
            bounds.project(&mut v);
            let fv = f(&v);
            *s = (v, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(Minimum {
        x,
        value,
        diagnostics: Diagnostics { evaluations: evals.get(), iterations, converged, ..Default::default() },
    })
}

fn numerical_gradient<F>(f: &F, x: &[f64], fx: f64, bounds: &BoxConstraints) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = (1e-6 * x[i].abs()).max(1e-6);
        let up_ok = x[i] + h <= bounds.upper[i];
        let down_ok = x[i] - h >= bounds.lower[i];
        let mut eval = |v: f64| {
            probe[i] = v;
            let r = f(&probe);
            probe[i] = x[i];
            r
        };
        let fp = if up_ok { eval(x[i] + h) } else { f64::INFINITY };
        let fm = if down_ok { eval(x[i] - h) } else { f64::INFINITY };
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

/// Projected BFGS with backtracking line search and numerical gradients.
///
/// The returned value never exceeds the objective at the (projected) start.
pub fn minimize_local<F>(objective: &F, start: &[f64], bounds: &BoxConstraints, tol: &LocalTolerances) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    if bounds.dim() != n {
        return Err(Error::LengthMismatch { expected: n, actual: bounds.dim() });
    }
    let evals = Cell::new(0usize);
    let f = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(objective(x))
    };

    let mut x = bounds.projected(start);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return domain("objective is not finite at the start point");
    }
    let mut g = numerical_gradient(&f, &x, fx, bounds);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < tol.max_iterations {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();
        let pg: Vec<f64> = g.iter().zip(&free).map(|(gi, &fr)| if fr { *gi } else { 0.0 }).collect();
        if pg.iter().all(|v| v.abs() <= tol.gradient_tolerance) {
            converged = true;
            break;
        }

        let mut d: Vec<f64> = (0..n)
            .map(|i| if free[i] { -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * pg[j]).sum::<f64>() } else { 0.0 })
            .collect();
        if dot(&d, &pg) >= 0.0 {
            h = identity(n);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-20 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            bounds.project(&mut xn);
            let fxn = f(&xn);
            let decrease: f64 = pg.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fxn.is_finite() && fxn <= fx + 1e-4 * decrease && fxn <= fx {
                accepted = Some((xn, fxn));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;

        let Some((xn, fxn)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let gn = numerical_gradient(&f, &xn, fxn, bounds);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n).into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect();
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }

        let small_step = s.iter().zip(&xn).all(|(si, xi)| si.abs() <= 1e-14 * (1.0 + xi.abs()));
        let small_gain = fx - fxn <= tol.f_tolerance * (1.0 + fx.abs());
        x = xn;
        fx = fxn;
        g = gn;
        if small_step && small_gain {
            converged = true;
            break;
        }
    }

    Ok(Minimum {
        x,
        value: fx,
        diagnostics: Diagnostics { evaluations: evals.get(), iterations, converged, ..Default::default() },
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
    }

    #[test]
    fn multistart_finds_quadratic_minimum() {
        let target = [0.3, 0.7];
        let obj = |x: &[f64]| (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2);
        let cfg = MultiStartConfig { n_candidates: 500, seed: 11, ..Default::default() };
        let bounds = BoxConstraints::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let m = minimize_multistart(&obj, 2, &cfg, &bounds).unwrap();
        assert!((m.x[0] - 0.3).abs() < 1e-6 && (m.x[1] - 0.7).abs() < 1e-6, "{:?}", m.x);
        assert!(m.value <= m.diagnostics.best_candidate_value);
    }

    #[test]
    fn multistart_is_deterministic() {
        let obj = |x: &[f64]| (x[0] - 0.2).abs() + (x[1] * x[0] - 0.1).powi(2) + 0.3 * (5.0 * x[1]).sin();
        let cfg = MultiStartConfig { n_candidates: 300, seed: 5, ..Default::default() };
        let bounds = BoxConstraints::new(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let a = minimize_multistart(&obj, 2, &cfg, &bounds).unwrap();
        let b = minimize_multistart(&obj, 2, &cfg, &bounds).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn multistart_all_nonfinite_fails() {
        let obj = |_: &[f64]| f64::NAN;
        let cfg = MultiStartConfig { n_candidates: 20, ..Default::default() };
        let err = minimize_multistart(&obj, 1, &cfg, &BoxConstraints::unbounded(1)).unwrap_err();
        assert!(matches!(err, Error::OptimizationFailed(_)));
    }

    #[test]
    fn config_validation() {
        let cfg = MultiStartConfig { n_candidates: 1, n_refine: 2, ..Default::default() };
        let obj = |x: &[f64]| x[0];
        assert!(minimize_multistart(&obj, 1, &cfg, &BoxConstraints::unbounded(1)).is_err());
        assert!(BoxConstraints::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let tol = LocalTolerances { max_iterations: 5_000, gradient_tolerance: 1e-8, ..Default::default() };
        let m = minimize_local(&rosenbrock, &[-1.2, 1.0], &BoxConstraints::unbounded(2), &tol).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!(m.diagnostics.converged);
    }

    #[test]
    fn bfgs_at_minimum_does_not_move() {
        let obj = |x: &[f64]| (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2);
        let m = minimize_local(&obj, &[2.0, -1.0], &BoxConstraints::unbounded(2), &LocalTolerances::default()).unwrap();
        assert_eq!(m.x, vec![2.0, -1.0]);
        assert_eq!(m.value, 0.0);
        assert_eq!(m.diagnostics.iterations, 0);
    }

    #[test]
    fn bfgs_respects_box() {
        // analytic minimum (2, -3) projected onto [0,1]x[-1,1] is (1, -1)
        let obj = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2);
        let bounds = BoxConstraints::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let m = minimize_local(&obj, &[0.5, 0.5], &bounds, &LocalTolerances::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-9 && (m.x[1] + 1.0).abs() < 1e-9, "{:?}", m.x);
    }

    #[test]
    fn bfgs_rejects_nonfinite_start() {
        let obj = |x: &[f64]| if x[0] > 0.0 { f64::INFINITY } else { x[0] * x[0] };
        assert!(minimize_local(&obj, &[1.0], &BoxConstraints::unbounded(1), &LocalTolerances::default()).is_err());
    }

    #[test]
    fn nelder_mead_handles_kinks() {
        let obj = |x: &[f64]| (x[0] - 0.25).abs() + 2.0 * (x[1] + 0.5).abs();
        let m = nelder_mead(&obj, &[1.0, 1.0], &BoxConstraints::unbounded(2), &LocalTolerances::default()).unwrap();
        assert!((m.x[0] - 0.25).abs() < 1e-6 && (m.x[1] + 0.5).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn local_never_increases_objective() {
        let obj = |x: &[f64]| (x[0] * 3.0).sin() + x[0] * x[0] * 0.1 + (x[1] - x[0]).abs();
        for s in [-2.0, -0.3, 0.8, 2.5] {
            let start = [s, -s];
            let f0 = obj(&start);
            let tol = LocalTolerances::default();
            let a = minimize_local(&obj, &start, &BoxConstraints::unbounded(2), &tol).unwrap();
            let b = nelder_mead(&obj, &start, &BoxConstraints::unbounded(2), &tol).unwrap();
            assert!(a.value <= f0 && b.value <= f0);
        }
    }
}
