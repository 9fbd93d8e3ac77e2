//! TOML run manifest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wqes::backtest::{FitSettings, McsMethod, ModelSpec, RollingConfig};
use wqes::baselines::EsCaviarForm;
use wqes::caviar::CaviarSpec;
use wqes::optimize::MultiStartConfig;
use wqes::simulate::{BiasStudyConfig, DgpForm, DgpSpec};
use wqes::wq::{EsVariant, EsVariantKind, Step2Config};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Fit,
    Backtest,
    Mcs,
    WeightsPlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Used by `wqes run`; the explicit subcommands ignore it.
    pub command: Option<Command>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core. `WQES_WORKERS` overrides it.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub series: Vec<SeriesEntry>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub step2: Step2Section,
    pub rolling: Option<RollingConfig>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub mcs: McsSection,
    #[serde(default)]
    pub weights_plot: WeightsPlotSection,
}

fn default_alpha() -> f64 {
    0.025
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesEntry {
    pub name: String,
    /// `date,return` CSV, relative to the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub n_candidates: usize,
    pub n_refine: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = MultiStartConfig::default();
        Self {
            n_candidates: d.n_candidates,
            n_refine: d.n_refine,
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Step2Section {
    pub n_random: usize,
    pub n_refine: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for Step2Section {
    fn default() -> Self {
        let d = Step2Config::default();
        Self {
            n_random: d.n_random,
            n_refine: d.n_refine,
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
        }
    }
}

/// One forecaster, e.g. `kind = "WQ-Beta", m = 3, alpha1 = 0.015, spec = "SAV"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// WQ-Beta, WQ-EW, WQ-UNC, SA-BC, SA-No-BC, ES-CAViaR-Add,
    /// ES-CAViaR-Mult, CARE-SAV or GARCH-t.
    pub kind: String,
    #[serde(default = "default_m")]
    pub m: usize,
    pub alpha1: Option<f64>,
    #[serde(default = "default_spec")]
    pub spec: String,
    /// Expectile grid of CARE-SAV.
    #[serde(default = "default_care_grid")]
    pub grid_size: usize,
}

fn default_m() -> usize {
    3
}

fn default_spec() -> String {
    "SAV".to_string()
}

fn default_care_grid() -> usize {
    50
}

impl ModelEntry {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), m: default_m(), alpha1: None, spec: default_spec(), grid_size: default_care_grid() }
    }

    pub fn wq(kind: &str, m: usize, alpha1: f64, spec: &str) -> Self {
        Self { m, alpha1: Some(alpha1), spec: spec.to_string(), ..Self::new(kind) }
    }

    pub fn to_spec(&self) -> CliResult<ModelSpec> {
        let norm: String = self.kind.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let spec = CaviarSpec::from_str(&self.spec)?;
        Ok(match norm.as_str() {
            "escaviaradd" => ModelSpec::EsCaviar { form: EsCaviarForm::Add, spec },
            "escaviarmult" => ModelSpec::EsCaviar { form: EsCaviarForm::Mult, spec },
            "care" | "caresav" => ModelSpec::CareSav { grid_size: self.grid_size },
            "garcht" | "garch" => ModelSpec::GarchT,
            _ => {
                let kind = EsVariantKind::from_str(&self.kind).map_err(|_| {
                    CliError::validation(format!("unknown model kind '{}'", self.kind))
                })?;
                let alpha1 = self
                    .alpha1
                    .ok_or_else(|| CliError::validation(format!("model '{}' needs alpha1", self.kind)))?;
                ModelSpec::Wq { variant: EsVariant::new(kind, self.m, alpha1)?, spec }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub dgp: DgpForm,
    pub n: usize,
    pub n_reps: usize,
    pub omega: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    pub variants: Vec<String>,
    pub m_set: Vec<usize>,
    pub alpha1_set: Vec<f64>,
    pub spec: String,
    /// Optimizer candidates for the quantile fits of the study.
    pub n_candidates: usize,
    /// Also write the first `export_series` simulated paths as return CSVs.
    pub export_series: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = DgpSpec::new(DgpForm::AvGarchT);
        let b = BiasStudyConfig::default();
        Self {
            dgp: d.form,
            n: d.n,
            n_reps: 200,
            omega: d.omega,
            gamma: d.gamma,
            delta: d.delta,
            nu: d.nu,
            variants: b.kinds.iter().map(|k| k.label().to_string()).collect(),
            m_set: b.m_set,
            alpha1_set: b.alpha1_set,
            spec: "SAV".to_string(),
            n_candidates: b.caviar.n_candidates,
            export_series: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quantile,
    Joint,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Quantile => "quantile",
            LossKind::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McsSection {
    pub level: f64,
    pub methods: Vec<String>,
    pub losses: Vec<LossKind>,
    pub n_boot: usize,
    pub block_length: Option<usize>,
    /// Defaults to `<output_dir>/forecasts`.
    pub forecast_dir: Option<PathBuf>,
}

impl Default for McsSection {
    fn default() -> Self {
        Self {
            level: 0.75,
            methods: vec!["R".to_string(), "SQ".to_string()],
            losses: vec![LossKind::Quantile, LossKind::Joint],
            n_boot: 1_000,
            block_length: None,
            forecast_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsPlotSection {
    /// `(a, b)` shape pairs.
    pub params: Vec<(f64, f64)>,
    /// Interior abscissae `i / (points + 1)`.
    pub points: usize,
}

impl Default for WeightsPlotSection {
    fn default() -> Self {
        Self { params: vec![(1.0, 4.0), (1.0, 10.0), (2.0, 5.0), (1.0, 1.0), (0.5, 3.0)], points: 99 }
    }
}

impl RunConfig {
    /// Every default, with no series or models.
    pub fn empty() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("invalid config: {e}")))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for s in &mut self.series {
            fix(&mut s.path);
        }
        if let Some(d) = self.mcs.forecast_dir.as_mut() {
            fix(d);
        }
    }

    /// Worker count after the `WQES_WORKERS` override; 0 means all cores.
    pub fn effective_workers(&self) -> CliResult<usize> {
        match std::env::var("WQES_WORKERS") {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .map_err(|_| CliError::validation(format!("WQES_WORKERS must be a non-negative integer, got '{v}'"))),
            _ => Ok(self.workers),
        }
    }

    pub fn fit_settings(&self) -> FitSettings {
        let o = &self.optimizer;
        let s = &self.step2;
        FitSettings {
            alpha: self.alpha,
            caviar: MultiStartConfig {
                n_candidates: o.n_candidates,
                n_refine: o.n_refine,
                sampler: Vec::new(),
                seed: self.seed,
                max_iterations: o.max_iterations,
                gradient_tolerance: o.gradient_tolerance,
            },
            step2: Step2Config {
                n_random: s.n_random,
                n_refine: s.n_refine,
                seed: self.seed,
                max_iterations: s.max_iterations,
                gradient_tolerance: s.gradient_tolerance,
            },
        }
    }

    /// Parsed model list; labels must be unique.
    pub fn model_specs(&self) -> CliResult<Vec<ModelSpec>> {
        let mut specs = Vec::with_capacity(self.models.len());
        for entry in &self.models {
            let spec = entry.to_spec()?;
            spec.validate(self.alpha).map_err(|e| CliError::from(e).context(format!("model {}", spec.label())))?;
            if specs.iter().any(|s: &ModelSpec| s.label() == spec.label()) {
                return Err(CliError::validation(format!("model {} is listed twice", spec.label())));
            }
            specs.push(spec);
        }
        Ok(specs)
    }

    pub fn mcs_methods(&self) -> CliResult<Vec<McsMethod>> {
        self.mcs.methods.iter().map(|m| McsMethod::from_str(m).map_err(CliError::from)).collect()
    }

    pub fn dgp_spec(&self) -> DgpSpec {
        let s = &self.simulate;
        DgpSpec {
            form: s.dgp,
            omega: s.omega,
            gamma: s.gamma,
            delta: s.delta,
            nu: s.nu,
            n: s.n,
            n_reps: s.n_reps,
            seed: self.seed,
        }
    }

    pub fn bias_config(&self) -> CliResult<BiasStudyConfig> {
        let s = &self.simulate;
        let kinds = s.variants.iter().map(|v| EsVariantKind::from_str(v)).collect::<Result<Vec<_>, _>>()?;
        let settings = self.fit_settings();
        Ok(BiasStudyConfig {
            alpha: self.alpha,
            kinds,
            m_set: s.m_set.clone(),
            alpha1_set: s.alpha1_set.clone(),
            caviar_spec: CaviarSpec::from_str(&s.spec)?,
            caviar: MultiStartConfig { n_candidates: s.n_candidates, ..settings.caviar },
            step2: settings.step2,
        })
    }

    fn check_alpha(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::validation(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }

    fn check_series(&self) -> CliResult<()> {
        if self.series.is_empty() {
            return Err(CliError::validation("no [[series]] entries"));
        }
        for (i, s) in self.series.iter().enumerate() {
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return Err(CliError::validation(format!("invalid series name '{}'", s.name)));
            }
            if self.series[..i].iter().any(|o| o.name == s.name) {
                return Err(CliError::validation(format!("series '{}' is listed twice", s.name)));
            }
            if !s.path.is_file() {
                return Err(CliError::validation(format!("series '{}': file {} does not exist", s.name, s.path.display())));
            }
        }
        Ok(())
    }

    fn check_models(&self) -> CliResult<()> {
        if self.models.is_empty() {
            return Err(CliError::validation("no [[models]] entries"));
        }
        self.model_specs().map(|_| ())
    }

    /// Everything that can be checked without loading data or fitting.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        self.check_alpha()?;
        self.effective_workers()?;
        match command {
            Command::Simulate => {
                self.dgp_spec().validate()?;
                if self.simulate.n_reps == 0 {
                    return Err(CliError::validation("simulate.n_reps must be positive"));
                }
                let cfg = self.bias_config()?;
                if cfg.variants()?.is_empty() {
                    return Err(CliError::validation("simulate needs at least one variant, M and alpha1"));
                }
            }
            Command::Fit => {
                self.check_series()?;
                self.check_models()?;
            }
            Command::Backtest => {
                self.check_series()?;
                self.check_models()?;
                let r = self.rolling.ok_or_else(|| CliError::validation("backtest needs a [rolling] section"))?;
                if r.refit_interval == 0 || r.in_sample_n == 0 || r.out_sample_m == 0 {
                    return Err(CliError::validation("rolling sizes and refit_interval must be positive"));
                }
            }
            Command::Mcs => {
                self.check_series()?;
                if !(self.mcs.level > 0.0 && self.mcs.level < 1.0) {
                    return Err(CliError::validation(format!("mcs.level must lie in (0,1), got {}", self.mcs.level)));
                }
                if self.mcs.n_boot == 0 || self.mcs.block_length == Some(0) {
                    return Err(CliError::validation("mcs.n_boot and mcs.block_length must be positive"));
                }
                if self.mcs_methods()?.is_empty() || self.mcs.losses.is_empty() {
                    return Err(CliError::validation("mcs needs at least one method and one loss"));
                }
                self.model_specs()?;
            }
            Command::WeightsPlot => {
                if self.weights_plot.points == 0 || self.weights_plot.params.is_empty() {
                    return Err(CliError::validation("weights_plot needs points > 0 and at least one (a, b) pair"));
                }
                for &(a, b) in &self.weights_plot.params {
                    wqes::special::BetaWeightParams::new(a, b)?;
                }
            }
        }
        Ok(())
    }
}
