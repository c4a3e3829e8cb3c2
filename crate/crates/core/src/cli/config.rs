use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checks::{C1Thresholds, C2Thresholds, C3Thresholds, C4Thresholds};
use crate::error::{Error, Result};
use crate::estimators::{geometric_grid, DEFAULT_K_MAX, DEFAULT_STEP_CAP};
use crate::mechanisms::MechanismSpec;
use crate::walk::IncrementSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Mc,
    Dp,
    Both,
}

impl Mode {
    pub fn runs_mc(self) -> bool {
        matches!(self, Mode::Mc | Mode::Both)
    }

    pub fn runs_dp(self) -> bool {
        matches!(self, Mode::Dp | Mode::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum HorizonSpec {
    /// `round(base * 2^{j/2})` for `j = 0, 1, ...` up to `max`.
    Geometric { base: u64, max: u64 },
    List(Vec<u64>),
}

impl HorizonSpec {
    pub fn grid(&self) -> Result<Vec<u64>> {
        let grid = match self {
            HorizonSpec::Geometric { base, max } => {
                if *base == 0 || base > max {
                    return Err(Error::InvalidSpec(format!("horizon grid needs 1 <= base <= max, got {base}, {max}")));
                }
                geometric_grid(*base, *max)
            }
            HorizonSpec::List(list) => list.clone(),
        };
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("horizons must be nonempty and strictly increasing".into()));
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UProviderSpec {
    Constant { value: f64 },
    /// Lattice-oracle values on the lattice points `j * span`, `lo <= j <= hi`.
    DpGrid { lo: i64, hi: i64 },
    /// Simulated values on `start + j * spacing`, `j < points`.
    McGrid { start: f64, spacing: f64, points: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub c1: C1Thresholds,
    pub c2: C2Thresholds,
    pub c3: C3Thresholds,
    pub c4: C4Thresholds,
}

fn default_x() -> Vec<f64> {
    vec![0.0]
}

fn default_horizons() -> HorizonSpec {
    HorizonSpec::Geometric { base: 64, max: 4096 }
}

fn default_paths() -> u64 {
    100_000
}

fn default_mode() -> Mode {
    Mode::Mc
}

fn default_k_max() -> u64 {
    DEFAULT_K_MAX
}

fn default_k_min() -> u64 {
    1
}

fn default_y_grid() -> Vec<f64> {
    vec![0.0]
}

fn default_n_large() -> u64 {
    1 << 14
}

fn default_n() -> u64 {
    4096
}

fn default_survivor_target() -> u64 {
    10_000
}

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

fn default_out() -> String {
    "out".to_string()
}

fn default_u_provider() -> UProviderSpec {
    UProviderSpec::DpGrid { lo: -64, hi: 64 }
}

/// One archivable experiment. Every field except the increment law and the
/// mechanism has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub increment: IncrementSpec,
    pub mechanism: MechanismSpec,
    #[serde(default = "default_x")]
    pub x: Vec<f64>,
    #[serde(default = "default_horizons")]
    pub horizons: HorizonSpec,
    #[serde(default = "default_paths")]
    pub total_paths: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Endpoint horizon for `rho` and `check c4`.
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_k_min")]
    pub k_min: u64,
    #[serde(default = "default_k_max")]
    pub k_max: u64,
    #[serde(default = "default_y_grid")]
    pub y_grid: Vec<f64>,
    #[serde(default = "default_n_large")]
    pub n_large: u64,
    #[serde(default = "default_u_provider")]
    pub u_provider: UProviderSpec,
    #[serde(default = "default_survivor_target")]
    pub survivor_target: u64,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    /// Largest horizon for which `oracle` also enumerates exact rationals.
    #[serde(default)]
    pub enumerate_max: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_out")]
    pub out: String,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidSpec(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::InvalidSpec("x list is empty".into()));
        }
        if self.x.iter().chain(&self.y_grid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("start points must be finite".into()));
        }
        if self.total_paths == 0 {
            return Err(Error::InvalidSpec("total_paths must be at least 1".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::InvalidSpec(format!(
                "crossing range needs 1 <= k_min <= k_max, got {}..={}",
                self.k_min, self.k_max
            )));
        }
        if self.n == 0 || self.n_large == 0 || self.step_cap == 0 {
            return Err(Error::InvalidSpec("n, n_large and step_cap must be at least 1".into()));
        }
        self.horizons.grid()?;
        Ok(())
    }
}
