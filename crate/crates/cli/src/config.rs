//! Flat `key=value` configuration shared by every command.
//!
//! A config file and command-line flags set the same keys; flags are applied
//! after the file so they win. Lines starting with `#` and blank lines are
//! ignored.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shapefda::classify::ClassifierKind;
use shapefda::pipelines::{PipelineId, PipelineSettings};
use shapefda::simgen::SimConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub pipelines: Vec<PipelineId>,
    pub classifiers: Vec<ClassifierKind>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core. Never affects results.
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub labels: Option<PathBuf>,
    pub folds: usize,
    /// Specimens whose reconstructions are written; `None` means all of them.
    pub recon: Option<Vec<String>>,
    pub svg: bool,
    pub settings: PipelineSettings,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: SimConfig::default().seed,
            pipelines: PipelineId::ALL.to_vec(),
            classifiers: ClassifierKind::ALL.to_vec(),
            out: PathBuf::from("out"),
            threads: 0,
            inputs: Vec::new(),
            labels: None,
            folds: 5,
            recon: None,
            svg: true,
            settings: PipelineSettings::default(),
            sim: SimConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Input(format!("bad value for {key}: {value:?} ({e})")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn fixed<T: FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[T; N], CliError>
where
    T::Err: Display,
{
    let items: Vec<T> = list(key, value)?;
    if items.len() != N {
        return Err(CliError::Input(format!("{key} needs {N} comma-separated values, got {}", items.len())));
    }
    let mut out = [T::default(); N];
    out.copy_from_slice(&items);
    Ok(out)
}

fn pair(key: &str, value: &str) -> Result<(f64, f64), CliError> {
    let [a, b] = fixed::<f64, 2>(key, value)?;
    Ok((a, b))
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(CliError::Input(format!("bad value for {key}: {other:?} (expected true or false)"))),
    }
}

fn named<T: FromStr>(key: &str, value: &str, all: &[T]) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
    T: Clone,
{
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let items: Vec<T> = list(key, value)?;
    if items.is_empty() {
        return Err(CliError::Input(format!("{key} is empty")));
    }
    Ok(items)
}

impl RunConfig {
    /// Sets one key; `base` resolves relative paths found in a config file.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), CliError> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v.trim());
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let s = &mut self.settings;
        match key.trim() {
            "seed" => {
                self.seed = parse(key, value)?;
                self.sim.seed = self.seed;
            }
            "pipelines" => self.pipelines = named(key, value, &PipelineId::ALL)?,
            "classifiers" => self.classifiers = named(key, value, &ClassifierKind::ALL)?,
            "out" => self.out = path(value),
            "threads" => self.threads = parse(key, value)?,
            "input" => self.inputs = value.split(',').map(str::trim).filter(|v| !v.is_empty()).map(path).collect(),
            "labels" => self.labels = Some(path(value)).filter(|p| !p.as_os_str().is_empty()),
            "folds" => self.folds = parse(key, value)?,
            "recon" => {
                self.recon = match value.trim() {
                    "all" => None,
                    "none" => Some(Vec::new()),
                    v => Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
                }
            }
            "svg" => self.svg = boolean(key, value)?,
            "n_points" => s.n_points = parse(key, value)?,
            "n_basis" => s.n_basis = parse(key, value)?,
            "variance_threshold" => s.variance_threshold = parse(key, value)?,
            "alpha_soft" => s.alpha_soft = parse(key, value)?,
            "lambda_soft" => s.lambda_soft = parse(key, value)?,
            "m_target" => s.m_target = parse(key, value)?,
            "gpa_tol" => s.gpa_tol = parse(key, value)?,
            "gpa_max_iter" => s.gpa_max_iter = parse(key, value)?,
            "karcher_max_iter" => s.karcher_max_iter = parse(key, value)?,
            "karcher_tol" => s.karcher_tol = parse(key, value)?,
            "n_reps" => self.sim.n_reps = parse(key, value)?,
            "n_landmarks" => self.sim.n_points = parse(key, value)?,
            "group_sizes" => self.sim.group_sizes = fixed(key, value)?,
            "sigmas" => self.sim.sigmas = fixed(key, value)?,
            "phase_range" => self.sim.phase_range = pair(key, value)?,
            "warp_range" => self.sim.warp_range = pair(key, value)?,
            other => return Err(CliError::Input(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(key, value, base)
                .map_err(|e| CliError::Input(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        config.apply_text(&text, path.parent())?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.settings.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.sim.validate().map_err(|e| CliError::Input(e.to_string()))?;
        if self.folds < 2 {
            return Err(CliError::Input("folds must be at least 2".into()));
        }
        if self.pipelines.is_empty() || self.classifiers.is_empty() {
            return Err(CliError::Input("pipeline and classifier lists must not be empty".into()));
        }
        Ok(())
    }

    /// Every result-affecting key, in a fixed order, as written to manifests.
    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let s = &self.settings;
        let join = |v: Vec<String>| v.join(",");
        let fmt = |x: f64| format!("{x}");
        vec![
            ("seed".into(), self.seed.to_string()),
            ("pipelines".into(), join(self.pipelines.iter().map(|p| p.name().to_string()).collect())),
            ("classifiers".into(), join(self.classifiers.iter().map(|c| c.name().to_string()).collect())),
            ("input".into(), join(self.inputs.iter().map(|p| p.display().to_string()).collect())),
            ("labels".into(), self.labels.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("folds".into(), self.folds.to_string()),
            ("recon".into(), self.recon.as_ref().map_or("all".to_string(), |r| if r.is_empty() { "none".into() } else { r.join(",") })),
            ("svg".into(), self.svg.to_string()),
            ("n_points".into(), s.n_points.to_string()),
            ("n_basis".into(), s.n_basis.to_string()),
            ("variance_threshold".into(), fmt(s.variance_threshold)),
            ("alpha_soft".into(), fmt(s.alpha_soft)),
            ("lambda_soft".into(), fmt(s.lambda_soft)),
            ("m_target".into(), s.m_target.to_string()),
            ("gpa_tol".into(), fmt(s.gpa_tol)),
            ("gpa_max_iter".into(), s.gpa_max_iter.to_string()),
            ("karcher_max_iter".into(), s.karcher_max_iter.to_string()),
            ("karcher_tol".into(), fmt(s.karcher_tol)),
            ("n_reps".into(), self.sim.n_reps.to_string()),
            ("n_landmarks".into(), self.sim.n_points.to_string()),
            ("group_sizes".into(), join(self.sim.group_sizes.iter().map(|v| v.to_string()).collect())),
            ("sigmas".into(), join(self.sim.sigmas.iter().map(|v| fmt(*v)).collect())),
            ("phase_range".into(), format!("{},{}", self.sim.phase_range.0, self.sim.phase_range.1)),
            ("warp_range".into(), format!("{},{}", self.sim.warp_range.0, self.sim.warp_range.1)),
        ]
    }
}
