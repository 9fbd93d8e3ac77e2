//! Command implementations. Each returns the artifacts it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use wqes::backtest::{
    joint_loss_steps, mcs, quantile_loss_steps, rolling_forecast, BootstrapConfig, FittedModel, LossMatrix, McsMethod,
    McsResult, ModelSpec, RollingForecast,
};
use wqes::caviar::derive_seed;
use wqes::simulate::{run_bias_study, simulate_replication, BiasReport};
use wqes::special::{beta_weight, BetaWeightParams};

use crate::config::{Command, LossKind, RunConfig};
use crate::data::{business_dates, load_forecasts, load_returns, write_forecasts, write_returns, ForecastSeries, ReturnSeries};
use crate::error::{CliError, CliResult};
use crate::format::{fmt_num, quantize};

/// Validates `cfg` for `command`, then runs it on a pool of the configured size.
pub fn run(cfg: &RunConfig, command: Command) -> CliResult<Vec<PathBuf>> {
    cfg.validate(command)?;
    let workers = cfg.effective_workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::validation(format!("cannot start {workers} workers: {e}")))?;
    info!("{command:?} with {} worker(s)", pool.current_num_threads());
    pool.install(|| match command {
        Command::Simulate => simulate(cfg).map(|(_, p)| p),
        Command::Fit => fit(cfg),
        Command::Backtest => backtest(cfg).map(|(_, p)| p),
        Command::Mcs => mcs_tables(cfg).map(|(_, p)| p),
        Command::WeightsPlot => weights_plot(cfg),
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Rounds every number in a JSON tree to 10 significant digits.
fn quantize_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                if let Some(q) = n.as_f64().map(quantize).and_then(serde_json::Number::from_f64) {
                    *n = q;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(quantize_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(quantize_json),
        _ => {}
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    quantize_json(&mut v);
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Bias study: `bias_table.csv`, `truth.csv`, `weights.csv`.
pub fn simulate(cfg: &RunConfig) -> CliResult<(BiasReport, Vec<PathBuf>)> {
    let spec = cfg.dgp_spec();
    let study = cfg.bias_config()?;
    create_dir(&cfg.output_dir)?;
    let mut written = Vec::new();
    if cfg.simulate.export_series > 0 {
        let dir = cfg.output_dir.join("series");
        create_dir(&dir)?;
        for rep in 0..cfg.simulate.export_series {
            let path = simulate_replication(&spec, rep)?;
            let series = ReturnSeries { dates: business_dates("2000-01-03", path.returns.len())?, returns: path.returns };
            let file = dir.join(format!("sim_{rep}.csv"));
            write_returns(&file, &series)?;
            written.push(file);
        }
    }
    info!("bias study: {} replications, {} estimators", spec.n_reps, study.variants()?.len());
    let report = run_bias_study(&spec, &study)?;
    if report.n_failed > 0 {
        warn!("{} of {} replications failed and were excluded", report.n_failed, report.n_reps);
    }

    let header = strings(&[
        "variant", "M", "alpha1", "var_delta", "es_delta", "es_mad", "var_mad", "mean_es_forecast", "mean_true_es",
        "n_ok", "n_clamped",
    ]);
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.variant.kind.label().to_string(),
                c.variant.m.to_string(),
                fmt_num(c.variant.alpha1),
                fmt_num(report.var_delta),
                fmt_num(c.es_delta),
                fmt_num(c.es_mad),
                fmt_num(report.var_mad),
                fmt_num(c.mean_forecast),
                fmt_num(c.mean_true),
                c.n_ok.to_string(),
                c.n_clamped.to_string(),
            ]
        })
        .collect();
    let table = cfg.output_dir.join("bias_table.csv");
    write_rows(&table, &header, &rows)?;
    written.push(table);

    let truth = cfg.output_dir.join("truth.csv");
    let dgp = serde_json::to_value(report.form).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    write_rows(
        &truth,
        &strings(&["dgp", "alpha", "n_reps", "n_failed", "mean_true_var", "mean_true_es", "mean_var_forecast", "var_delta", "var_mad"]),
        &[vec![
            dgp,
            fmt_num(report.alpha),
            report.n_reps.to_string(),
            report.n_failed.to_string(),
            fmt_num(report.mean_true_var),
            fmt_num(report.mean_true_es),
            fmt_num(report.mean_var_forecast),
            fmt_num(report.var_delta),
            fmt_num(report.var_mad),
        ]],
    )?;
    written.push(truth);

    let mut rows = Vec::new();
    for s in &report.weight_samples {
        for (i, w) in s.weights.iter().enumerate() {
            rows.push(vec![
                s.rep.to_string(),
                s.m.to_string(),
                fmt_num(s.alpha1),
                fmt_num(s.w0),
                fmt_num(s.a),
                fmt_num(s.b),
                (i + 1).to_string(),
                fmt_num(*w),
            ]);
        }
    }
    let weights = cfg.output_dir.join("weights.csv");
    write_rows(&weights, &strings(&["rep", "M", "alpha1", "w0", "a", "b", "level", "weight"]), &rows)?;
    written.push(weights);
    Ok((report, written))
}

fn load_all_series(cfg: &RunConfig) -> CliResult<Vec<ReturnSeries>> {
    cfg.series.iter().map(|s| load_returns(&s.path).map_err(|e| e.context(format!("series '{}'", s.name)))).collect()
}

#[derive(Serialize)]
struct FitRecord {
    series: String,
    model: String,
    n_obs: usize,
    params: FittedModel,
}

/// Full-sample estimation: `fit_params.json` and next-step `fit_forecasts.csv`.
pub fn fit(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let models = cfg.model_specs()?;
    let data = load_all_series(cfg)?;
    create_dir(&cfg.output_dir)?;
    let base = cfg.fit_settings();
    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|s| (0..models.len()).map(move |m| (s, m))).collect();
    let results = jobs
        .par_iter()
        .map(|&(s, m)| {
            let settings = base.with_seed(derive_seed(cfg.seed, s as u64));
            let returns = &data[s].returns;
            let ctx = format!("{} on {}", models[m].label(), cfg.series[s].name);
            let fitted = models[m].fit(returns, &settings).map_err(|e| CliError::from(e).context(&ctx))?;
            let f = fitted.forecast(returns, cfg.alpha).map_err(|e| CliError::from(e).context(&ctx))?;
            Ok((fitted, f))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (&(s, m), (fitted, f)) in jobs.iter().zip(results) {
        let label = models[m].label();
        let name = &cfg.series[s].name;
        let next = data[s].dates.last().cloned().unwrap_or_default();
        rows.push(vec![name.clone(), label.clone(), next, fmt_num(f.var), fmt_num(f.es), (f.clamped as u8).to_string()]);
        records.push(FitRecord { series: name.clone(), model: label, n_obs: data[s].len(), params: fitted });
    }
    let params = cfg.output_dir.join("fit_params.json");
    write_json(&params, &records)?;
    let forecasts = cfg.output_dir.join("fit_forecasts.csv");
    write_rows(&forecasts, &strings(&["series", "model", "after_date", "var", "es", "clamped"]), &rows)?;
    Ok(vec![params, forecasts])
}

/// Out-of-sample forecasts of every model on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBacktest {
    pub name: String,
    pub dates: Vec<String>,
    pub returns: Vec<f64>,
    /// Forecasts rounded as written to disk, in model order.
    pub forecasts: Vec<RollingForecast>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutcome {
    pub labels: Vec<String>,
    pub series: Vec<SeriesBacktest>,
    /// `[series][model]` summed quantile loss.
    pub quantile_loss: Vec<Vec<f64>>,
    /// `[series][model]` summed joint loss; NaN where ES was non-negative.
    pub joint_loss: Vec<Vec<f64>>,
}

impl SeriesBacktest {
    pub fn loss_matrix(&self, labels: &[String], kind: LossKind, alpha: f64) -> CliResult<LossMatrix> {
        let pairs: Vec<(&[f64], &[f64])> = self.forecasts.iter().map(|f| (f.var.as_slice(), f.es.as_slice())).collect();
        loss_matrix(&self.returns, labels, &pairs, kind, alpha)
    }
}

/// Per-step losses with one column per `(var, es)` forecast pair.
pub fn loss_matrix(returns: &[f64], labels: &[String], forecasts: &[(&[f64], &[f64])], kind: LossKind, alpha: f64) -> CliResult<LossMatrix> {
    let columns = forecasts
        .iter()
        .zip(labels)
        .map(|(&(var, es), label)| {
            match kind {
                LossKind::Quantile => quantile_loss_steps(returns, var, alpha),
                LossKind::Joint => joint_loss_steps(returns, var, es, alpha),
            }
            .map_err(|e| CliError::from(e).context(label))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(LossMatrix::from_columns(labels.to_vec(), columns)?)
}

/// Average ranks (1 = lowest); NaN entries are ranked after every finite one.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| if values[i].is_nan() { f64::INFINITY } else { values[i] };
    idx.sort_by(|&i, &j| key(i).total_cmp(&key(j)).then(i.cmp(&j)));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && key(idx[end]) == key(idx[start]) {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

fn summary_rows(labels: &[String], losses: &[Vec<f64>]) -> Vec<Vec<String>> {
    let per_series_ranks: Vec<Vec<f64>> = losses.iter().map(|l| ranks(l)).collect();
    labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let vals: Vec<f64> = losses.iter().map(|l| l[j]).collect();
            let avg_loss = vals.iter().sum::<f64>() / vals.len() as f64;
            let avg_rank = per_series_ranks.iter().map(|r| r[j]).sum::<f64>() / losses.len() as f64;
            let mut row = vec![label.clone()];
            row.extend(vals.iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(avg_loss));
            row.push(fmt_num(avg_rank));
            row
        })
        .collect()
}

/// Rolling backtest: forecast files, loss summaries and diagnostics.
pub fn backtest(cfg: &RunConfig) -> CliResult<(BacktestOutcome, Vec<PathBuf>)> {
    let models = cfg.model_specs()?;
    let rolling = cfg.rolling.expect("validated");
    let data = load_all_series(cfg)?;
    for (s, d) in data.iter().enumerate() {
        rolling.validate(d.len()).map_err(|e| CliError::from(e).context(format!("series '{}'", cfg.series[s].name)))?;
    }
    let labels: Vec<String> = models.iter().map(ModelSpec::label).collect();
    let base = cfg.fit_settings();
    let (n, m) = (rolling.in_sample_n, rolling.out_sample_m);
    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|s| (0..models.len()).map(move |j| (s, j))).collect();
    info!("backtest: {} series x {} models, n = {n}, m = {m}, refit every {}", data.len(), models.len(), rolling.refit_interval);
    let results = jobs
        .par_iter()
        .map(|&(s, j)| {
            let settings = base.with_seed(derive_seed(cfg.seed, s as u64));
            let mut f = rolling_forecast(&data[s].returns, &models[j], &rolling, &settings)
                .map_err(|e| CliError::from(e).context(format!("{} on {}", labels[j], cfg.series[s].name)))?;
            f.var.iter_mut().for_each(|v| *v = quantize(*v));
            f.es.iter_mut().for_each(|v| *v = quantize(*v));
            info!("{} on {}: {} refits, {} failed, {} clamped", f.label, cfg.series[s].name, f.n_refits, f.n_failed_refits, f.n_clamped);
            Ok(f)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut results = results.into_iter();
    let series: Vec<SeriesBacktest> = data
        .iter()
        .zip(&cfg.series)
        .map(|(d, entry)| SeriesBacktest {
            name: entry.name.clone(),
            dates: d.dates[n..n + m].to_vec(),
            returns: d.returns[n..n + m].to_vec(),
            forecasts: results.by_ref().take(models.len()).collect(),
        })
        .collect();

    let mut written = Vec::new();
    let forecast_root = cfg.output_dir.join("forecasts");
    for sb in &series {
        let dir = forecast_root.join(&sb.name);
        create_dir(&dir)?;
        for f in &sb.forecasts {
            let path = dir.join(format!("{}.csv", f.label));
            write_forecasts(&path, &ForecastSeries { dates: sb.dates.clone(), var: f.var.clone(), es: f.es.clone() })?;
            written.push(path);
        }
    }

    let mut quantile_loss = Vec::new();
    let mut joint_loss = Vec::new();
    for sb in &series {
        let q = sb.loss_matrix(&labels, LossKind::Quantile, cfg.alpha)?.totals();
        let jl: Vec<f64> = sb
            .forecasts
            .iter()
            .map(|f| match joint_loss_steps(&sb.returns, &f.var, &f.es, cfg.alpha) {
                Ok(steps) => steps.iter().sum(),
                Err(e) => {
                    warn!("{} on {}: joint loss undefined ({e})", f.label, sb.name);
                    f64::NAN
                }
            })
            .collect();
        quantile_loss.push(q);
        joint_loss.push(jl);
    }

    let mut header = vec!["model".to_string()];
    header.extend(cfg.series.iter().map(|s| s.name.clone()));
    header.extend(strings(&["avg_loss", "avg_rank"]));
    for (name, losses) in [("summary_quantile.csv", &quantile_loss), ("summary_joint.csv", &joint_loss)] {
        let path = cfg.output_dir.join(name);
        write_rows(&path, &header, &summary_rows(&labels, losses))?;
        written.push(path);
    }

    let mut rows = Vec::new();
    for sb in &series {
        for f in &sb.forecasts {
            let hits = sb.returns.iter().zip(&f.var).filter(|(r, q)| r < q).count();
            rows.push(vec![
                sb.name.clone(),
                f.label.clone(),
                f.n_refits.to_string(),
                f.n_failed_refits.to_string(),
                f.n_clamped.to_string(),
                fmt_num(hits as f64 / sb.returns.len() as f64),
            ]);
        }
    }
    let diag = cfg.output_dir.join("diagnostics.csv");
    write_rows(&diag, &strings(&["series", "model", "n_refits", "n_failed_refits", "n_clamped", "violation_rate"]), &rows)?;
    written.push(diag);

    Ok((BacktestOutcome { labels, series, quantile_loss, joint_loss }, written))
}

/// MCS results for one loss on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct McsCell {
    pub series: String,
    pub loss: LossKind,
    pub matrix: LossMatrix,
    pub results: Vec<McsResult>,
}

fn method_label(m: McsMethod) -> &'static str {
    match m {
        McsMethod::R => "R",
        McsMethod::Sq => "SQ",
    }
}

/// Model labels for the MCS: the configured models, or every forecast file found.
fn mcs_labels(cfg: &RunConfig, dir: &Path) -> CliResult<Vec<String>> {
    if !cfg.models.is_empty() {
        return Ok(cfg.model_specs()?.iter().map(ModelSpec::label).collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::validation(format!("{}: {e}", dir.display())))?;
    let mut labels = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                labels.push(stem.to_string());
            }
        }
    }
    labels.sort();
    if labels.is_empty() {
        return Err(CliError::validation(format!("no forecast files in {}", dir.display())));
    }
    Ok(labels)
}

/// Returns aligned with the forecast dates.
fn align(series: &ReturnSeries, dates: &[String], name: &str) -> CliResult<Vec<f64>> {
    let first = dates.first().ok_or_else(|| CliError::validation(format!("{name}: empty forecast file")))?;
    let start = series
        .dates
        .iter()
        .position(|d| d == first)
        .ok_or_else(|| CliError::validation(format!("{name}: forecast date {first} not in the return series")))?;
    let end = start + dates.len();
    if end > series.len() || series.dates[start..end] != *dates {
        return Err(CliError::validation(format!("{name}: forecast dates do not match consecutive return dates")));
    }
    Ok(series.returns[start..end].to_vec())
}

/// Reloads forecast files and runs the MCS per series, loss and method.
/// Writes `mcs_<loss>.csv` (1 = in the set) and `mcs_pvalues_<loss>.csv`.
pub fn mcs_tables(cfg: &RunConfig) -> CliResult<(Vec<McsCell>, Vec<PathBuf>)> {
    let methods = cfg.mcs_methods()?;
    let root = cfg.mcs.forecast_dir.clone().unwrap_or_else(|| cfg.output_dir.join("forecasts"));
    let data = load_all_series(cfg)?;
    let mut inputs = Vec::new();
    let mut labels_per_series = Vec::new();
    for (entry, series) in cfg.series.iter().zip(&data) {
        let dir = root.join(&entry.name);
        let labels = mcs_labels(cfg, &dir)?;
        let forecasts =
            labels.iter().map(|l| load_forecasts(&dir.join(format!("{l}.csv")))).collect::<CliResult<Vec<_>>>()?;
        let dates = &forecasts[0].dates;
        if forecasts.iter().any(|f| f.dates != *dates) {
            return Err(CliError::validation(format!("{}: forecast files cover different dates", entry.name)));
        }
        let returns = align(series, dates, &entry.name)?;
        inputs.push((returns, forecasts));
        labels_per_series.push(labels);
    }
    let all_labels: Vec<String> = {
        let mut v: Vec<String> = Vec::new();
        for l in labels_per_series.iter().flatten() {
            if !v.contains(l) {
                v.push(l.clone());
            }
        }
        v
    };

    create_dir(&cfg.output_dir)?;
    let mut cells = Vec::new();
    let mut written = Vec::new();
    for &kind in &cfg.mcs.losses {
        let mut kind_cells = Vec::new();
        for (s, ((returns, forecasts), labels)) in inputs.iter().zip(&labels_per_series).enumerate() {
            let pairs: Vec<(&[f64], &[f64])> = forecasts.iter().map(|f| (f.var.as_slice(), f.es.as_slice())).collect();
            let matrix = loss_matrix(returns, labels, &pairs, kind, cfg.alpha)
                .map_err(|e| e.context(format!("{} loss on {}", kind.label(), cfg.series[s].name)))?;
            let boot = BootstrapConfig { block_length: cfg.mcs.block_length, n_boot: cfg.mcs.n_boot, seed: derive_seed(cfg.seed, s as u64) };
            let results = methods.iter().map(|&m| mcs(&matrix, cfg.mcs.level, m, &boot)).collect::<Result<Vec<_>, _>>()?;
            kind_cells.push(McsCell { series: cfg.series[s].name.clone(), loss: kind, matrix, results });
        }

        let mut header = vec!["model".to_string()];
        for c in &kind_cells {
            for &m in &methods {
                header.push(format!("{}_{}", c.series, method_label(m)));
            }
        }
        let mut member_rows = Vec::new();
        let mut p_rows = Vec::new();
        for label in &all_labels {
            let mut member = vec![label.clone()];
            let mut pv = vec![label.clone()];
            for c in &kind_cells {
                let j = c.matrix.labels.iter().position(|l| l == label);
                for r in &c.results {
                    match j {
                        Some(j) => {
                            member.push((r.contains(j) as u8).to_string());
                            pv.push(fmt_num(r.p_values[j]));
                        }
                        None => {
                            member.push(String::new());
                            pv.push(String::new());
                        }
                    }
                }
            }
            member_rows.push(member);
            p_rows.push(pv);
        }
        let path = cfg.output_dir.join(format!("mcs_{}.csv", kind.label()));
        write_rows(&path, &header, &member_rows)?;
        written.push(path);
        let path = cfg.output_dir.join(format!("mcs_pvalues_{}.csv", kind.label()));
        write_rows(&path, &header, &p_rows)?;
        written.push(path);
        cells.extend(kind_cells);
    }
    Ok((cells, written))
}

/// Beta weight curves at interior abscissae.
pub fn weight_curves(params: &[(f64, f64)], points: usize) -> CliResult<Vec<(f64, f64, f64, f64)>> {
    let mut out = Vec::with_capacity(params.len() * points);
    for &(a, b) in params {
        let p = BetaWeightParams::new(a, b)?;
        for i in 1..=points {
            let x = i as f64 / (points + 1) as f64;
            out.push((a, b, x, beta_weight(x, p)?));
        }
    }
    Ok(out)
}

/// `weights_plot.csv` with columns `a, b, x, weight`.
pub fn weights_plot(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let curves = weight_curves(&cfg.weights_plot.params, cfg.weights_plot.points)?;
    create_dir(&cfg.output_dir)?;
    let rows: Vec<Vec<String>> =
        curves.iter().map(|&(a, b, x, w)| vec![fmt_num(a), fmt_num(b), fmt_num(x), fmt_num(w)]).collect();
    let path = cfg.output_dir.join("weights_plot.csv");
    write_rows(&path, &strings(&["a", "b", "x", "weight"]), &rows)?;
    Ok(vec![path])
}
