//! `date,return` series files and forecast files.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{CliError, CliResult};
use crate::format::fmt_num;

/// Returns in percent units with their ISO dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<String>,
    pub returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

fn parse_date(s: &str, line: u64) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| CliError::validation(format!("line {line}: invalid date '{s}' (expected YYYY-MM-DD)")))
}

fn parse_value(s: &str, what: &str, line: u64) -> CliResult<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::validation(format!("line {line}: invalid {what} '{s}'"))),
    }
}

fn reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str], path: &Path) -> CliResult<()> {
    let header = rdr.headers()?.clone();
    let names: Vec<String> = header.iter().map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    if names.len() != expected.len() || names.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(CliError::validation(format!(
            "{}: header must be '{}', found '{}'",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Reads a two-column `date,return` CSV with strictly ascending dates.
pub fn load_returns(path: &Path) -> CliResult<ReturnSeries> {
    let mut rdr = reader(path)?;
    if rdr.headers()?.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    check_header(&mut rdr, &["date", "return"], path)?;
    let mut dates = Vec::new();
    let mut returns = Vec::new();
    let mut prev: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let d = parse_date(&rec[0], line)?;
        if let Some(p) = prev {
            if d <= p {
                return Err(CliError::validation(format!(
                    "{}: line {line}: date {d} is not after the previous date {p}",
                    path.display()
                )));
            }
        }
        prev = Some(d);
        returns.push(parse_value(&rec[1], "return", line).map_err(|e| e.context(path.display()))?);
        dates.push(rec[0].to_string());
    }
    if returns.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    Ok(ReturnSeries { dates, returns })
}

pub fn write_returns(path: &Path, series: &ReturnSeries) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "return"])?;
    for (d, r) in series.dates.iter().zip(&series.returns) {
        w.write_record([d.as_str(), fmt_num(*r).as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// One-step VaR and ES forecasts by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub dates: Vec<String>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
}

pub fn write_forecasts(path: &Path, f: &ForecastSeries) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "var", "es"])?;
    for ((d, v), e) in f.dates.iter().zip(&f.var).zip(&f.es) {
        w.write_record([d.as_str(), fmt_num(*v).as_str(), fmt_num(*e).as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_forecasts(path: &Path) -> CliResult<ForecastSeries> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, &["date", "var", "es"], path)?;
    let mut out = ForecastSeries { dates: Vec::new(), var: Vec::new(), es: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let ctx = |e: CliError| e.context(path.display());
        out.var.push(parse_value(&rec[1], "VaR", line).map_err(ctx)?);
        out.es.push(parse_value(&rec[2], "ES", line).map_err(ctx)?);
        out.dates.push(rec[0].to_string());
    }
    if out.var.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

/// `count` consecutive weekdays starting at `start` (YYYY-MM-DD).
pub fn business_dates(start: &str, count: usize) -> CliResult<Vec<String>> {
    use chrono::{Datelike, Weekday};
    let mut d = parse_date(start, 0)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.format("%Y-%m-%d").to_string());
        }
        d = d.succ_opt().ok_or_else(|| CliError::validation("date overflow"))?;
    }
    Ok(out)
}
