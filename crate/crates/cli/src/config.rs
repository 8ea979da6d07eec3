use anyhow::{Context, Result};
use clap::Args;
use log::warn;
use mwm::{MachineConfig, MwmError};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Machine description as read from a JSON file; every field is optional so that
/// flags can fill the gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    #[serde(rename = "H")]
    hoppers: Option<usize>,
    #[serde(rename = "T")]
    target: Option<f64>,
    alpha: Option<f64>,
    max_shut: Option<usize>,
    exclude_all_open: Option<bool>,
    epsilon: Option<f64>,
    f: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MachineArgs {
    /// JSON machine description; flags below override its fields
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of hoppers
    #[arg(long = "hoppers", short = 'H')]
    pub hoppers: Option<usize>,
    /// Package target weight in grams [default: 500]
    #[arg(long = "target", short = 'T')]
    pub target: Option<f64>,
    /// Coefficient of variation of a hopper fill [default: 0.123]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Most hoppers allowed to stay shut in a cycle [default: 2]
    #[arg(long)]
    pub max_shut: Option<usize>,
    /// Leave out the combination that opens every hopper
    #[arg(long)]
    pub exclude_all_open: bool,
    /// Allowed probability that the all-open combination is underweight [default: 1e-5]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Per-hopper setpoint cap as a fraction of the target (defaults exist for 4 and 5 hoppers)
    #[arg(long = "frac", short = 'f')]
    pub f: Option<f64>,
}

/// Cap fraction used when none is given.
pub fn default_fraction(hoppers: usize) -> Option<f64> {
    match hoppers {
        4 => Some(0.6),
        5 => Some(0.5),
        _ => None,
    }
}

fn read_partial(path: &Path) -> Result<PartialConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: PartialConfig = serde_json::from_str(&text)
        .map_err(|e| MwmError::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

impl MachineArgs {
    pub fn resolve(&self) -> Result<MachineConfig> {
        self.resolve_with(None)
    }

    /// For commands that never look at the setpoint cap.
    pub fn resolve_without_cap(&self) -> Result<MachineConfig> {
        self.resolve_with(Some(1.0))
    }

    fn resolve_with(&self, fallback_f: Option<f64>) -> Result<MachineConfig> {
        let file = match &self.config {
            Some(p) => read_partial(p)?,
            None => PartialConfig::default(),
        };
        let hoppers = self
            .hoppers
            .or(file.hoppers)
            .ok_or_else(|| MwmError::InvalidConfig("the hopper count is required (--hoppers or \"H\")".into()))?;
        let f = match self.f.or(file.f).or_else(|| default_fraction(hoppers)).or(fallback_f) {
            Some(f) => f,
            None => {
                return Err(MwmError::InvalidConfig(format!(
                    "no default setpoint cap for {hoppers} hoppers; pass --frac (smaller values suit more hoppers)"
                ))
                .into())
            }
        };
        let config = MachineConfig {
            hoppers,
            target: self.target.or(file.target).unwrap_or(500.0),
            alpha: self.alpha.or(file.alpha).unwrap_or(0.123),
            max_shut: self.max_shut.or(file.max_shut).unwrap_or(2),
            exclude_all_open: self.exclude_all_open || file.exclude_all_open.unwrap_or(false),
            epsilon: self.epsilon.or(file.epsilon).unwrap_or(1e-5),
            f,
        };
        config.validate()?;
        if hoppers > 10 && config.max_shut >= 3 && !config.exclude_all_open {
            warn!("with more than 10 hoppers and 3 or more shut, --exclude-all-open improves conditioning");
        }
        Ok(config)
    }
}

/// Parses `"1.5, 2,3"` into numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| MwmError::InvalidConfig(format!("bad number {t:?}: {e}")).into()))
        .collect()
}

/// Reads a square matrix from a headerless CSV file.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MwmError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| MwmError::InvalidConfig(format!("bad number {v:?}: {e}"))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}
