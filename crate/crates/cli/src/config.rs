//! Run configuration: one TOML file with `[gauge]`, `[field]`, `[run]` and
//! `[output]` tables. Command-line flags override file keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qfield_core::covar::DEFAULT_MAX_GRID_POINTS;
use qfield_core::{FieldModel, GaugeParams, GaugeSpec, QuadSettings, SamplerKind};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gauge: GaugeParams,
    pub field: FieldSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either one bound shared by every axis or one bound per axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

impl Bound {
    fn expand(&self, d: usize, name: &str) -> Result<Vec<f64>, CliError> {
        match self {
            Bound::Uniform(v) => Ok(vec![*v; d]),
            Bound::PerAxis(v) if v.len() == d => Ok(v.clone()),
            Bound::PerAxis(v) => Err(CliError::Config(format!(
                "field.{name} has {} entries but d = {d}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub d: usize,
    /// Lower corner; defaults to the origin.
    #[serde(default)]
    pub lower: Option<Bound>,
    /// Upper corner; defaults to `T` on every axis.
    #[serde(default)]
    pub upper: Option<Bound>,
    #[serde(default)]
    pub rtol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Q1,
    Q2,
    Q3,
    KernelMonotone,
    Isotropy,
    Lnd,
    Anderson,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    pub threads: Option<usize>,
    /// Checks to run for `gauge-check` and `verify`; each command picks the
    /// ones it owns, and an empty selection means all of them.
    #[serde(default)]
    pub checks: Vec<Check>,
    /// `τ₀` for (q1) and (q2).
    pub tau0: Option<f64>,

    pub resolution: Option<u32>,
    pub resolutions: Option<Vec<u32>>,
    pub replicates: Option<u64>,
    pub sampler: Option<SamplerKind>,
    pub rank: Option<usize>,
    pub oversample: Option<usize>,
    pub max_grid_points: Option<usize>,
    /// Explicit ε ladder; by default it halves from `q(diam)/4` to `q(h)`.
    pub ladder: Option<Vec<f64>>,
    /// `(C₀, C₁)` forwarded to the convergence report.
    pub upper_constants: Option<[f64; 2]>,

    pub t: Option<f64>,
    pub isotropy_pairs: Option<usize>,
    pub lnd_trials: Option<usize>,
    pub lnd_max_predecessors: Option<usize>,
    pub anderson_sizes: Option<Vec<usize>>,
    pub anderson_trials: Option<usize>,
    pub mc_samples: Option<usize>,

    pub diam: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub format: Option<Format>,
}

/// Rows `τ,q(τ)` of a tabulated gauge; a non-numeric first line is a header.
fn read_table(path: &Path) -> Result<Vec<[f64; 2]>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read gauge table {}: {e}", path.display()))
    })?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = line.split(',').map(|f| f.trim().parse().ok()).collect();
        match parsed.as_slice() {
            [Some(t), Some(q)] => rows.push([*t, *q]),
            _ if k == 0 => continue,
            _ => {
                return Err(CliError::Config(format!(
                    "{}:{}: expected two numbers `tau,q`",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    Ok(rows)
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(rel) = cfg.gauge.table_path.take() {
            if cfg.gauge.table.is_some() {
                return Err(CliError::Config(
                    "gauge: give either table or table_path, not both".into(),
                ));
            }
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.gauge.table = Some(read_table(&base.join(rel))?);
        }
        if let Some(s) = overrides.seed {
            cfg.run.master_seed = Some(s);
        }
        if let Some(t) = overrides.threads {
            cfg.run.threads = Some(t);
        }
        if let Some(o) = &overrides.out {
            cfg.output.dir = Some(o.clone());
        }
        if let Some(f) = overrides.format {
            cfg.output.format = Some(f);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.field.d == 0 {
            return Err(CliError::Config("field.d must be at least 1".into()));
        }
        if let Some(r) = &self.run.resolutions {
            if r.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::Config(
                    "run.resolutions must be strictly increasing".into(),
                ));
            }
        }
        if self.run.replicates == Some(0) {
            return Err(CliError::Config("run.replicates must be at least 1".into()));
        }
        if self.run.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn gauge_spec(&self) -> Result<GaugeSpec, CliError> {
        GaugeSpec::from_params(&self.gauge).map_err(|e| CliError::Config(format!("gauge: {e}")))
    }

    pub fn model(&self) -> Result<FieldModel, CliError> {
        let g = self.gauge_spec()?;
        let d = self.field.d;
        let lower = match &self.field.lower {
            Some(b) => b.expand(d, "lower")?,
            None => vec![0.0; d],
        };
        let upper = match &self.field.upper {
            Some(b) => b.expand(d, "upper")?,
            None => vec![g.t_max(); d],
        };
        let quad = match self.field.rtol {
            Some(r) => QuadSettings::with_rtol(r),
            None => QuadSettings::default(),
        };
        FieldModel::new(g, lower, upper, quad).map_err(|e| CliError::Config(format!("field: {e}")))
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or_default()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("qfield-out"))
    }

    pub fn max_grid_points(&self) -> usize {
        self.run.max_grid_points.unwrap_or(DEFAULT_MAX_GRID_POINTS)
    }

    /// SHA-256 of the mathematical content of the run: gauge, field and run
    /// keys except the thread count. Output placement does not enter.
    pub fn hash(&self) -> String {
        let mut run = self.run.clone();
        run.threads = None;
        let content = serde_json::json!({ "gauge": self.gauge, "field": self.field, "run": run });
        let digest = Sha256::digest(content.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
