//! Configured experiments: one run per figure kind, writing CSV tables,
//! SVG plots and a summary with monotonicity verdicts.

pub mod output;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conjecture::{
    battery_instances, default_trials, run_battery, write_battery_csv, Verdict,
};
use crate::counterexample::{
    exact_expected_risk, optimal_counterexample, simulate_risk, TwoPointDistribution,
};
use crate::error::{Error, Result};
use crate::features::{
    load_idx_dataset, relu_sweep, synthetic_dataset, FeatureScale, SweepPoint, SweepSpec,
};
use crate::general::{GeneralBank, RegularizerSpec};
use crate::problem::GaussianProblem;
use crate::projection::{sweep_model_size, ProjectionLambda};
use crate::spectrum::{sweep_iso, IsoModel};
use crate::stream::trial_seed;
use crate::tuner::{default_upper_bound, log_grid, minimize_over_lambda, TunerOptions};

pub use output::{
    check_monotone, emit_csv, emit_svg_plot, read_csv, Curve, CurvePoint, MonotonicityCheck, Panel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SamplewiseIso,
    SamplewiseNoniso,
    ModelwiseProj,
    Counterexample,
    Conjecture,
    ReluSamplewise,
    ReluModelwise,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::SamplewiseIso,
        ExperimentKind::SamplewiseNoniso,
        ExperimentKind::ModelwiseProj,
        ExperimentKind::Counterexample,
        ExperimentKind::Conjecture,
        ExperimentKind::ReluSamplewise,
        ExperimentKind::ReluModelwise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SamplewiseIso => "samplewise-iso",
            ExperimentKind::SamplewiseNoniso => "samplewise-noniso",
            ExperimentKind::ModelwiseProj => "modelwise-proj",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::Conjecture => "conjecture",
            ExperimentKind::ReluSamplewise => "relu-samplewise",
            ExperimentKind::ReluModelwise => "relu-modelwise",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::config(
                    "kind",
                    format!("unknown kind `{s}`, expected one of {}", names.join(", ")),
                )
            })
    }
}

/// Integer sweep values: an explicit list or an inclusive range.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum IntGrid {
    List(Vec<usize>),
    Range {
        start: usize,
        end: usize,
        #[serde(default = "one")]
        step: usize,
    },
}

fn one() -> usize {
    1
}

impl IntGrid {
    pub fn values(&self) -> Vec<usize> {
        match self {
            IntGrid::List(v) => v.clone(),
            IntGrid::Range { start, end, step } => {
                (*start..=*end).step_by((*step).max(1)).collect()
            }
        }
    }
}

/// Ridge parameters: an explicit list, or `points` log-spaced values from
/// `min` to `max`, optionally preceded by `0`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RealGrid {
    List(Vec<f64>),
    Log {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default)]
        include_zero: bool,
    },
}

impl RealGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            RealGrid::List(v) => v.clone(),
            RealGrid::Log {
                min,
                max,
                points,
                include_zero,
            } => {
                let mut v = if *include_zero { vec![0.0] } else { vec![] };
                if *points > 0 && *min > 0.0 && *max >= *min {
                    v.extend(log_grid(*min, *max, *points));
                }
                v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerChoice {
    #[default]
    Identity,
    Covariance,
    InverseCovariance,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub sigma: Option<f64>,
    pub beta_norm: Option<f64>,
    pub theta_norm: Option<f64>,
    /// Diagonal of the covariance.
    pub covariance_diag: Option<Vec<f64>>,
    /// `[count, value]` blocks of the covariance diagonal.
    pub covariance_blocks: Option<Vec<(usize, f64)>>,
    pub beta_star: Option<Vec<f64>>,
    /// `[index, value]` non-zero entries of `β*`, zero-based.
    pub beta_entries: Option<Vec<(usize, f64)>>,
    #[serde(default)]
    pub regularizer: RegularizerChoice,
    /// Two-point distribution location.
    pub a: Option<f64>,
    /// Two-point distribution noise probability.
    pub eps: Option<f64>,
    /// Number of random conjecture instances.
    pub instances: Option<usize>,
    /// Random feature count for sample-wise sweeps.
    pub features: Option<usize>,
    pub scale: Option<FeatureScale>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<IntGrid>,
    pub d: Option<IntGrid>,
    pub features: Option<IntGrid>,
    pub lambda: Option<RealGrid>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSection {
    pub title: Option<String>,
    pub x_label: Option<String>,
    pub y_label: Option<String>,
    pub log_x: Option<bool>,
    pub log_y: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory with `train-*` and `t10k-*` IDX files.
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default = "default_synthetic_train")]
    pub synthetic_train: usize,
    #[serde(default = "default_synthetic_test")]
    pub synthetic_test: usize,
    /// Evaluate on a random subset of this many test rows.
    pub test_size: Option<usize>,
}

fn default_synthetic_train() -> usize {
    4000
}

fn default_synthetic_test() -> usize {
    1000
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: false,
            synthetic_train: default_synthetic_train(),
            synthetic_test: default_synthetic_test(),
            test_size: None,
        }
    }
}

/// An experiment manifest, normally read from TOML.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo trials (or repeats for random-feature kinds). Zero means
    /// unset, which only the conjecture kind accepts.
    #[serde(default)]
    pub trials: usize,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub plot: PlotSection,
    #[serde(default)]
    pub dataset: DatasetSection,
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub synthetic: bool,
}

fn required<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "required for this experiment kind"))
}

fn check_int_grid(grid: &Option<IntGrid>, field: &str, min: usize) -> Result<Vec<usize>> {
    let g = grid
        .as_ref()
        .ok_or_else(|| Error::config(field, "required for this experiment kind"))?;
    let v = g.values();
    if v.is_empty() {
        return Err(Error::config(field, "grid must be non-empty"));
    }
    if let Some(bad) = v.iter().find(|&&x| x < min) {
        return Err(Error::config(
            field,
            format!("value {bad} is below the minimum {min}"),
        ));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            field,
            "grid must be sorted in strictly increasing order",
        ));
    }
    Ok(v)
}

fn check_real_grid(grid: &Option<RealGrid>, field: &str) -> Result<Vec<f64>> {
    let g = grid
        .as_ref()
        .ok_or_else(|| Error::config(field, "required for this experiment kind"))?;
    let v = g.values();
    if v.is_empty() {
        return Err(Error::config(field, "grid must be non-empty"));
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::config(
            field,
            format!("value {bad} is not a finite non-negative number"),
        ));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            field,
            "grid must be sorted in strictly increasing order",
        ));
    }
    Ok(v)
}

fn check_positive(v: f64, field: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

fn check_non_negative(v: f64, field: &str) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::config(
            field,
            format!("must be non-negative, got {v}"),
        ))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.to_string().trim().to_string())
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Applies overrides. A kind given both in the file and on the command
    /// line must agree.
    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(k) = o.kind {
            match self.kind {
                Some(c) if c != k => {
                    return Err(Error::config(
                        "kind",
                        format!("config is for `{c}` but `{k}` was requested"),
                    ));
                }
                _ => self.kind = Some(k),
            }
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.trials {
            self.trials = t;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if o.synthetic {
            self.dataset.synthetic = true;
        }
        Ok(self)
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| Error::config("kind", "missing experiment kind"))
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        Ok(self.out.clone().unwrap_or_else(|| {
            PathBuf::from("out").join(self.kind.map(|k| k.name()).unwrap_or("run"))
        }))
    }

    /// Checks every field the configured kind needs.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if self.trials == 0 && kind != ExperimentKind::Conjecture {
            return Err(Error::config("trials", "required, must be at least 1"));
        }
        let p = &self.problem;
        match kind {
            ExperimentKind::SamplewiseIso => {
                required(p.d, "problem.d")?;
                check_non_negative(required(p.sigma, "problem.sigma")?, "problem.sigma")?;
                check_non_negative(
                    required(p.beta_norm, "problem.beta_norm")?,
                    "problem.beta_norm",
                )?;
                check_int_grid(&self.grid.n, "grid.n", 1)?;
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
                self.iso_model()?;
            }
            ExperimentKind::SamplewiseNoniso => {
                self.gaussian_problem()?;
                check_int_grid(&self.grid.n, "grid.n", 1)?;
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
            }
            ExperimentKind::ModelwiseProj => {
                let pp = required(p.p, "problem.p")?;
                required(p.n, "problem.n")?;
                check_non_negative(required(p.sigma, "problem.sigma")?, "problem.sigma")?;
                check_positive(
                    required(p.theta_norm, "problem.theta_norm")?,
                    "problem.theta_norm",
                )?;
                let ds = check_int_grid(&self.grid.d, "grid.d", 1)?;
                if ds.last().is_some_and(|&d| d > pp) {
                    return Err(Error::config(
                        "grid.d",
                        format!("model sizes must not exceed problem.p = {pp}"),
                    ));
                }
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
            }
            ExperimentKind::Counterexample => {
                self.two_point()?;
                check_int_grid(&self.grid.n, "grid.n", 1)?;
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
            }
            ExperimentKind::Conjecture => {
                if p.instances == Some(0) {
                    return Err(Error::config("problem.instances", "must be at least 1"));
                }
                let l = check_real_grid(&self.grid.lambda, "grid.lambda")?;
                if l[0] <= 0.0 {
                    return Err(Error::config(
                        "grid.lambda",
                        "conjecture checks need positive λ values",
                    ));
                }
            }
            ExperimentKind::ReluSamplewise => {
                let f = required(p.features, "problem.features")?;
                if f == 0 {
                    return Err(Error::config("problem.features", "must be at least 1"));
                }
                check_int_grid(&self.grid.n, "grid.n", 1)?;
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
                self.check_dataset()?;
            }
            ExperimentKind::ReluModelwise => {
                let n = required(p.n, "problem.n")?;
                if n == 0 {
                    return Err(Error::config("problem.n", "must be at least 1"));
                }
                check_int_grid(&self.grid.features, "grid.features", 1)?;
                check_real_grid(&self.grid.lambda, "grid.lambda")?;
                self.check_dataset()?;
            }
        }
        Ok(())
    }

    fn check_dataset(&self) -> Result<()> {
        let ds = &self.dataset;
        if ds.synthetic {
            if ds.synthetic_train == 0 || ds.synthetic_test == 0 {
                return Err(Error::config(
                    "dataset.synthetic_train",
                    "synthetic splits must be non-empty",
                ));
            }
        } else if ds.dir.is_none() {
            return Err(Error::config(
                "dataset.dir",
                "no dataset directory given; set dataset.dir or pass --synthetic",
            ));
        }
        if ds.test_size == Some(0) {
            return Err(Error::config("dataset.test_size", "must be at least 1"));
        }
        Ok(())
    }

    fn iso_model(&self) -> Result<IsoModel> {
        let p = &self.problem;
        IsoModel::new(
            required(p.d, "problem.d")?,
            required(p.beta_norm, "problem.beta_norm")?,
            required(p.sigma, "problem.sigma")?,
        )
        .map_err(|e| Error::config("problem", e.to_string()))
    }

    fn gaussian_problem(&self) -> Result<GaussianProblem> {
        let p = &self.problem;
        let diag: Vec<f64> = match (&p.covariance_diag, &p.covariance_blocks) {
            (Some(d), None) => d.clone(),
            (None, Some(b)) => b
                .iter()
                .flat_map(|&(count, v)| std::iter::repeat_n(v, count))
                .collect(),
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "problem.covariance_diag",
                    "give either covariance_diag or covariance_blocks, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "problem.covariance_diag",
                    "required for this experiment kind",
                ));
            }
        };
        let d = diag.len();
        if d == 0 {
            return Err(Error::config(
                "problem.covariance_diag",
                "covariance must have at least one entry",
            ));
        }
        if let Some(v) = diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::config(
                "problem.covariance_diag",
                format!("entries must be positive, got {v}"),
            ));
        }
        if p.d.is_some_and(|pd| pd != d) {
            return Err(Error::config(
                "problem.d",
                format!("covariance has dimension {d}"),
            ));
        }
        let beta = match (&p.beta_star, &p.beta_entries) {
            (Some(b), None) => {
                if b.len() != d {
                    return Err(Error::config(
                        "problem.beta_star",
                        format!("length {} but d = {d}", b.len()),
                    ));
                }
                DVector::from_vec(b.clone())
            }
            (None, Some(entries)) => {
                let mut b = DVector::zeros(d);
                for &(i, v) in entries {
                    if i >= d {
                        return Err(Error::config(
                            "problem.beta_entries",
                            format!("index {i} out of range for d = {d}"),
                        ));
                    }
                    b[i] = v;
                }
                b
            }
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "problem.beta_star",
                    "give either beta_star or beta_entries, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "problem.beta_star",
                    "required for this experiment kind",
                ))
            }
        };
        let sigma = check_non_negative(required(p.sigma, "problem.sigma")?, "problem.sigma")?;
        GaussianProblem::new(
            DMatrix::from_diagonal(&DVector::from_vec(diag)),
            beta,
            sigma,
        )
        .map_err(|e| Error::config("problem", e.to_string()))
    }

    fn two_point(&self) -> Result<TwoPointDistribution> {
        let std = TwoPointDistribution::standard();
        TwoPointDistribution::new(
            self.problem.a.unwrap_or(std.a),
            self.problem.eps.unwrap_or(std.eps),
        )
        .map_err(|e| Error::config("problem", e.to_string()))
    }

    fn panel(&self, name: &str, sweep: &str, x_label: &str, y_label: &str, log_y: bool) -> Panel {
        let plot = &self.plot;
        Panel {
            name: name.to_string(),
            title: match &plot.title {
                Some(t) => format!("{t}: {name}"),
                None => name.to_string(),
            },
            sweep: sweep.to_string(),
            x_label: plot.x_label.clone().unwrap_or_else(|| x_label.to_string()),
            y_label: plot.y_label.clone().unwrap_or_else(|| y_label.to_string()),
            log_x: plot.log_x.unwrap_or(false),
            log_y: plot.log_y.unwrap_or(log_y),
            curves: Vec::new(),
            envelope: None,
        }
    }
}

/// What a run produced.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
    pub checks: Vec<MonotonicityCheck>,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Summary {
    /// Human-readable report.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} (seed {}, trials {})\n",
            self.kind, self.seed, self.trials
        );
        for c in &self.checks {
            s += &format!(
                "monotone[{}]: {} (max adjacent increase {:.3e}, worst excess over 2 SE {:.3e} at {})\n",
                c.curve,
                if c.pass { "pass" } else { "fail" },
                c.max_increase,
                c.worst_excess,
                c.at
            );
        }
        for (k, v) in &self.values {
            s += &format!("{k} = {v}\n");
        }
        for n in &self.notes {
            s += &format!("note: {n}\n");
        }
        for p in self.csv.iter().chain(&self.svg) {
            s += &format!("wrote {}\n", p.display());
        }
        s
    }
}

/// Panels and derived values before anything is written.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub panels: Vec<Panel>,
    /// Panels whose envelope gets a monotonicity check.
    pub monotone: Vec<usize>,
    pub extra_checks: Vec<MonotonicityCheck>,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Trial count actually used, when it differs from the configured one.
    pub trials: Option<usize>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs a validated configuration and writes its artifacts.
pub fn run(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let kind = config.kind()?;
    let out_dir = config.out_dir()?;
    let mut outcome = compute(config)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut summary = Summary {
        kind,
        seed: config.seed,
        trials: outcome.trials.unwrap_or(config.trials),
        csv: Vec::new(),
        svg: Vec::new(),
        checks: Vec::new(),
        values: std::mem::take(&mut outcome.values),
        notes: std::mem::take(&mut outcome.notes),
    };
    for (i, panel) in outcome.panels.iter().enumerate() {
        let stem = file_stem(&panel.name);
        let csv = out_dir.join(format!("{stem}.csv"));
        emit_csv(&panel.curves, &panel.sweep, &csv)?;
        summary.csv.push(csv);
        if let Some(env) = &panel.envelope {
            let csv = out_dir.join(format!("{stem}_optimal.csv"));
            emit_csv(std::slice::from_ref(env), &panel.sweep, &csv)?;
            summary.csv.push(csv);
            if outcome.monotone.contains(&i) {
                let mut c = check_monotone(env, 2.0);
                c.curve = format!("{}/{}", panel.name, env.label);
                summary.checks.push(c);
            }
        }
        let svg = out_dir.join(format!("{stem}.svg"));
        emit_svg_plot(panel, &svg)?;
        summary.svg.push(svg);
    }
    summary.checks.extend(outcome.extra_checks);
    if kind == ExperimentKind::Conjecture {
        summary.csv.push(out_dir.join("battery.csv"));
    }
    let json = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::config("summary", e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| Error::io(json.display().to_string(), e))?;
    Ok(summary)
}

/// Computes every panel of an experiment without writing files, except the
/// conjecture battery table which is written straight to the output
/// directory.
pub fn compute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    match config.kind()? {
        ExperimentKind::SamplewiseIso => samplewise_iso(config),
        ExperimentKind::SamplewiseNoniso => samplewise_noniso(config),
        ExperimentKind::ModelwiseProj => modelwise_proj(config),
        ExperimentKind::Counterexample => counterexample(config),
        ExperimentKind::Conjecture => conjecture(config),
        ExperimentKind::ReluSamplewise | ExperimentKind::ReluModelwise => relu(config),
    }
}

fn lambda_label(l: f64) -> String {
    format!("lambda={l}")
}

fn peak_values(panel: &Panel, values: &mut BTreeMap<String, f64>) {
    for c in &panel.curves {
        if let Some(p) = c.points.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)) {
            values.insert(format!("peak_{}", c.label), p.mean);
            values.insert(format!("peak_at_{}", c.label), p.x);
        }
    }
}

fn samplewise_iso(config: &ExperimentConfig) -> Result<Outcome> {
    let model = config.iso_model()?;
    let ns = check_int_grid(&config.grid.n, "grid.n", 1)?;
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let sweep = sweep_iso(model, &ns, &lambdas, config.trials, config.seed)?;
    let mut panel = config.panel("test_risk", "n", "Num. Samples", "Test Risk", false);
    let point = |x: usize, r: &crate::stats::RiskEstimate| CurvePoint {
        x: x as f64,
        lambda: r.lambda,
        mean: r.mean,
        se: r.std_error,
    };
    for (j, &l) in lambdas.iter().enumerate() {
        panel.curves.push(Curve {
            label: lambda_label(l),
            points: ns
                .iter()
                .zip(&sweep.risks)
                .map(|(&n, row)| point(n, &row[j]))
                .collect(),
        });
    }
    panel.envelope = Some(Curve {
        label: "optimal".into(),
        points: ns
            .iter()
            .zip(&sweep.optimal)
            .map(|(&n, r)| point(n, r))
            .collect(),
    });
    let mut out = Outcome::default();
    let lstar = model.optimal_lambda();
    out.values.insert("lambda_opt".into(), lstar);
    out.values.insert("null_risk".into(), model.null_risk());
    peak_values(&panel, &mut out.values);
    for c in panel.curves.iter().filter(|c| c.points[0].lambda >= lstar) {
        let mut check = check_monotone(c, 2.0);
        check.curve = format!("test_risk/{}", c.label);
        out.extra_checks.push(check);
    }
    out.panels.push(panel);
    out.monotone.push(0);
    Ok(out)
}

fn samplewise_noniso(config: &ExperimentConfig) -> Result<Outcome> {
    let problem = config.gaussian_problem()?;
    let reg = match config.problem.regularizer {
        RegularizerChoice::Identity => RegularizerSpec::identity(problem.d()),
        RegularizerChoice::Covariance => RegularizerSpec::covariance(&problem),
        RegularizerChoice::InverseCovariance => RegularizerSpec::inverse_covariance(&problem)?,
    };
    let ns = check_int_grid(&config.grid.n, "grid.n", 1)?;
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let mut test = config.panel("test_risk", "n", "Num. Samples", "Test Risk", false);
    let mut train = config.panel("train_mse", "n", "Num. Samples", "Train MSE", false);
    test.curves = lambdas
        .iter()
        .map(|&l| Curve {
            label: lambda_label(l),
            points: vec![],
        })
        .collect();
    train.curves = test.curves.clone();
    let mut env_test = Curve {
        label: "optimal".into(),
        points: vec![],
    };
    let mut env_train = env_test.clone();
    let hi = default_upper_bound(problem.d(), problem.sigma(), problem.beta_star().norm())
        * problem.covariance().diagonal().max().max(1.0);
    for &n in &ns {
        let bank = GeneralBank::draw(&problem, &reg, n, config.trials, config.seed)?;
        for (j, &l) in lambdas.iter().enumerate() {
            let r = bank.risk(l);
            test.curves[j].points.push(CurvePoint {
                x: n as f64,
                lambda: l,
                mean: r.test.mean,
                se: r.test.std_error,
            });
            train.curves[j].points.push(CurvePoint {
                x: n as f64,
                lambda: l,
                mean: r.train.mean,
                se: r.train.std_error,
            });
        }
        let search = minimize_over_lambda(
            |l| bank.risk(l).test.mean,
            0.0,
            hi,
            TunerOptions::default().with_null_risk(bank.null_risk()),
        )?;
        // The null estimator is approximated by the upper end of the search range.
        let l = if search.is_infinite() {
            hi
        } else {
            search.lambda_opt
        };
        let r = bank.risk(l);
        let x = n as f64;
        let t = CurvePoint {
            x,
            lambda: search.lambda_opt,
            mean: search.risk_at_opt.min(r.test.mean),
            se: r.test.std_error,
        };
        let tr = CurvePoint {
            x,
            lambda: search.lambda_opt,
            mean: r.train.mean,
            se: r.train.std_error,
        };
        env_test.points.push(t);
        env_train.points.push(tr);
    }
    test.envelope = Some(env_test);
    train.envelope = Some(env_train);
    let mut out = Outcome::default();
    out.values.insert("null_risk".into(), problem.null_risk());
    peak_values(&test, &mut out.values);
    out.panels.push(test);
    out.panels.push(train);
    out.monotone.push(0);
    Ok(out)
}

fn modelwise_proj(config: &ExperimentConfig) -> Result<Outcome> {
    let p = &config.problem;
    let (pp, n) = (required(p.p, "problem.p")?, required(p.n, "problem.n")?);
    let (sigma, theta) = (
        required(p.sigma, "problem.sigma")?,
        required(p.theta_norm, "problem.theta_norm")?,
    );
    let ds = check_int_grid(&config.grid.d, "grid.d", 1)?;
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let mut panel = config.panel("test_risk", "d", "Model Size (d)", "Test Risk", false);
    let to_curve = |label: String, pts: Vec<crate::projection::ProjectedRiskPoint>| Curve {
        label,
        points: pts
            .iter()
            .map(|q| CurvePoint {
                x: q.d as f64,
                lambda: q.lambda,
                mean: q.risk.mean,
                se: q.risk.std_error,
            })
            .collect(),
    };
    for &l in &lambdas {
        let pts = sweep_model_size(
            pp,
            n,
            &ds,
            ProjectionLambda::Fixed(l),
            theta,
            sigma,
            config.trials,
            config.seed,
        )?;
        panel.curves.push(to_curve(lambda_label(l), pts));
    }
    let opt = sweep_model_size(
        pp,
        n,
        &ds,
        ProjectionLambda::Optimal,
        theta,
        sigma,
        config.trials,
        config.seed,
    )?;
    panel.envelope = Some(to_curve("optimal".into(), opt));
    let mut out = Outcome::default();
    out.values
        .insert("null_risk".into(), theta * theta + sigma * sigma);
    peak_values(&panel, &mut out.values);
    out.panels.push(panel);
    out.monotone.push(0);
    Ok(out)
}

fn counterexample(config: &ExperimentConfig) -> Result<Outcome> {
    let dist = config.two_point()?;
    let ns = check_int_grid(&config.grid.n, "grid.n", 1)?;
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let mut panel = config.panel("test_risk", "n", "Num. Samples", "Test Risk", false);
    let risk_at = |n: usize, l: f64| -> Result<(f64, f64)> {
        if n <= 2 {
            Ok((exact_expected_risk(n, l, &dist)?, 0.0))
        } else {
            let r = simulate_risk(
                n,
                l,
                &dist,
                config.trials,
                trial_seed(config.seed, n as u64),
            )?;
            Ok((r.mean, r.std_error))
        }
    };
    for &l in &lambdas {
        let mut c = Curve {
            label: lambda_label(l),
            points: vec![],
        };
        for &n in &ns {
            let (mean, se) = risk_at(n, l)?;
            c.points.push(CurvePoint {
                x: n as f64,
                lambda: l,
                mean,
                se,
            });
        }
        panel.curves.push(c);
    }
    let mut env = Curve {
        label: "optimal".into(),
        points: vec![],
    };
    let mut out = Outcome::default();
    for &n in &ns {
        let (lambda, mean, se) = if n <= 2 {
            let o = optimal_counterexample(n, &dist)?;
            out.values
                .insert(format!("lambda_{n}"), o.search.lambda_opt);
            out.values.insert(format!("risk_{n}"), o.search.risk_at_opt);
            (o.search.lambda_opt, o.search.risk_at_opt, 0.0)
        } else {
            let seed = trial_seed(config.seed, n as u64);
            let s = minimize_over_lambda(
                |l| {
                    simulate_risk(n, l, &dist, config.trials, seed)
                        .map(|r| r.mean)
                        .unwrap_or(f64::NAN)
                },
                0.0,
                1e6 * (1.0 + dist.a * dist.a),
                TunerOptions::default().with_null_risk(dist.null_risk()),
            )?;
            let se = if s.is_infinite() {
                0.0
            } else {
                simulate_risk(n, s.lambda_opt, &dist, config.trials, seed)?.std_error
            };
            (s.lambda_opt, s.risk_at_opt, se)
        };
        env.points.push(CurvePoint {
            x: n as f64,
            lambda,
            mean,
            se,
        });
    }
    if let (Some(r1), Some(r2)) = (
        out.values.get("risk_1").copied(),
        out.values.get("risk_2").copied(),
    ) {
        out.values.insert("gap".into(), r2 - r1);
        if r2 > r1 {
            out.notes.push(format!(
                "optimally tuned risk increases from n=1 ({r1:.6}) to n=2 ({r2:.6}): not sample-monotone"
            ));
        }
    }
    out.values.insert("null_risk".into(), dist.null_risk());
    panel.envelope = Some(env);
    out.panels.push(panel);
    out.monotone.push(0);
    Ok(out)
}

fn conjecture(config: &ExperimentConfig) -> Result<Outcome> {
    let count = config.problem.instances.unwrap_or(50);
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let instances = battery_instances(count, config.seed);
    let mut out = Outcome::default();
    let trials = if config.trials == 0 {
        let max_d = instances.iter().map(|i| i.d).max().unwrap_or(1);
        let (trials, warning) = default_trials(max_d);
        if let Some(w) = warning {
            eprintln!("warning: {w}");
            out.notes.push(w);
        }
        out.trials = Some(trials);
        trials
    } else {
        config.trials
    };
    let rows = run_battery(&instances, &lambdas, trials, trial_seed(config.seed, 1))?;
    let out_dir = config.out_dir()?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_battery_csv(&rows, &out_dir.join("battery.csv"))?;
    for condition in [1u8, 2] {
        let name = if condition == 1 {
            "condition_one"
        } else {
            "condition_two"
        };
        let mut panel = config.panel(name, "instance", "Instance", "Minimum Eigenvalue", false);
        for &l in &lambdas {
            let points = rows
                .iter()
                .filter(|r| r.condition == condition && r.lambda == l)
                .map(|r| CurvePoint {
                    x: r.instance as f64,
                    lambda: l,
                    mean: r.min_eigenvalue,
                    se: r.std_error,
                })
                .collect();
            panel.curves.push(Curve {
                label: lambda_label(l),
                points,
            });
        }
        for verdict in [Verdict::Holds, Verdict::Violated, Verdict::Inconclusive] {
            let c = rows
                .iter()
                .filter(|r| r.condition == condition && r.verdict == verdict)
                .count();
            out.values.insert(format!("{name}_{verdict}"), c as f64);
        }
        out.panels.push(panel);
    }
    Ok(out)
}

fn relu(config: &ExperimentConfig) -> Result<Outcome> {
    let kind = config.kind()?;
    let ds = &config.dataset;
    let split = if ds.synthetic {
        synthetic_dataset(
            ds.synthetic_train,
            ds.synthetic_test,
            trial_seed(config.seed, 7),
        )?
    } else {
        let dir = ds
            .dir
            .as_ref()
            .ok_or_else(|| Error::config("dataset.dir", "no dataset directory given"))?;
        if !dir.is_dir() {
            return Err(Error::config(
                "dataset.dir",
                format!(
                    "dataset directory {} not found; download it or pass --synthetic",
                    dir.display()
                ),
            ));
        }
        load_idx_dataset(dir)?
    };
    let test = match ds.test_size {
        Some(k) if k < split.test.len() => split.test.subsample(k, trial_seed(config.seed, 8))?,
        _ => split.test,
    };
    let lambdas = check_real_grid(&config.grid.lambda, "grid.lambda")?;
    let scale = config.problem.scale.unwrap_or(FeatureScale::InvSqrtDim);
    let (spec, sweep_name, x_label) = if kind == ExperimentKind::ReluSamplewise {
        let ns = check_int_grid(&config.grid.n, "grid.n", 1)?;
        if let Some(&n) = ns.last().filter(|&&n| n > split.train.len()) {
            return Err(Error::config(
                "grid.n",
                format!("{n} exceeds the {} training rows", split.train.len()),
            ));
        }
        let f = required(config.problem.features, "problem.features")?;
        (
            SweepSpec {
                ns,
                features: vec![f],
                lambdas: lambdas.clone(),
                scale,
                repeats: config.trials,
                seed: config.seed,
            },
            "n",
            "Num. Samples",
        )
    } else {
        let n = required(config.problem.n, "problem.n")?;
        if n > split.train.len() {
            return Err(Error::config(
                "problem.n",
                format!("{n} exceeds the {} training rows", split.train.len()),
            ));
        }
        let features = check_int_grid(&config.grid.features, "grid.features", 1)?;
        (
            SweepSpec {
                ns: vec![n],
                features,
                lambdas: lambdas.clone(),
                scale,
                repeats: config.trials,
                seed: config.seed,
            },
            "features",
            "Num. Random Features",
        )
    };
    let points = relu_sweep(&split.train, &test, &spec)?;
    let xs: Vec<usize> = if kind == ExperimentKind::ReluSamplewise {
        spec.ns.clone()
    } else {
        spec.features.clone()
    };
    let x_of = |p: &SweepPoint| {
        if kind == ExperimentKind::ReluSamplewise {
            p.n
        } else {
            p.features
        }
    };
    let at = |x: usize, l: f64| {
        points
            .iter()
            .find(|p| x_of(p) == x && p.lambda == l)
            .expect("full grid")
    };

    type Metric = fn(&SweepPoint) -> (f64, f64);
    let metrics: [(&str, &str, Metric, Metric); 4] = [
        (
            "test_error",
            "Test Classification Error",
            |p| (p.test_error, p.test_error_se),
            |p| (p.test_error, p.test_error_se),
        ),
        (
            "test_mse",
            "Test MSE",
            |p| (p.test_mse, p.test_mse_se),
            |p| (p.test_mse, p.test_mse_se),
        ),
        (
            "train_error",
            "Train Classification Error",
            |p| (p.train_error, 0.0),
            |p| (p.test_error, p.test_error_se),
        ),
        (
            "train_mse",
            "Train MSE",
            |p| (p.train_mse, 0.0),
            |p| (p.test_mse, p.test_mse_se),
        ),
    ];
    let mut out = Outcome::default();
    for (name, y_label, metric, tuning) in metrics {
        let mut panel = config.panel(name, sweep_name, x_label, y_label, false);
        for &l in &lambdas {
            panel.curves.push(Curve {
                label: lambda_label(l),
                points: xs
                    .iter()
                    .map(|&x| {
                        let (mean, se) = metric(at(x, l));
                        CurvePoint {
                            x: x as f64,
                            lambda: l,
                            mean,
                            se,
                        }
                    })
                    .collect(),
            });
        }
        let env = xs
            .iter()
            .map(|&x| {
                let best = lambdas
                    .iter()
                    .map(|&l| at(x, l))
                    .min_by(|a, b| tuning(a).0.total_cmp(&tuning(b).0))
                    .expect("non-empty grid");
                let (mean, se) = metric(best);
                CurvePoint {
                    x: x as f64,
                    lambda: best.lambda,
                    mean,
                    se,
                }
            })
            .collect();
        panel.envelope = Some(Curve {
            label: "optimal".into(),
            points: env,
        });
        out.panels.push(panel);
    }
    out.values
        .insert("train_rows".into(), split.train.len() as f64);
    out.values.insert("test_rows".into(), test.len() as f64);
    if ds.synthetic {
        out.notes
            .push("synthetic ten-class mixture used in place of an image dataset".into());
    }
    peak_values(&out.panels[0], &mut out.values);
    out.monotone.push(0);
    Ok(out)
}
