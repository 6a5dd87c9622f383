use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel::CostParams;
use crate::drift::{DriftMode, DriftParams};
use crate::simfreeze::{DEFAULT_FREEZE_INTERVAL, DEFAULT_STABILITY_THRESHOLD};
use crate::workload::WorkloadSpec;
use crate::{Error, Result};

/// When rounds are triggered and whether layers are frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    /// One round per arriving batch.
    Immediate,
    /// One round every `k` batches.
    Static(u32),
    LazyTune,
    /// Immediate triggering with layer freezing.
    SimFreeze,
    /// LazyTune triggering with layer freezing.
    ETuner,
}

impl Policy {
    pub fn uses_lazytune(self) -> bool {
        matches!(self, Policy::LazyTune | Policy::ETuner)
    }

    pub fn uses_simfreeze(self) -> bool {
        matches!(self, Policy::SimFreeze | Policy::ETuner)
    }

    /// Parses a comma-separated list such as `immediate,static:20,etuner`.
    pub fn parse_list(s: &str) -> Result<Vec<Policy>> {
        let list: Vec<Policy> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if list.is_empty() {
            return Err(Error::config("empty policy list"));
        }
        Ok(list)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Immediate => f.write_str("immediate"),
            Policy::Static(k) => write!(f, "static:{k}"),
            Policy::LazyTune => f.write_str("lazytune"),
            Policy::SimFreeze => f.write_str("simfreeze"),
            Policy::ETuner => f.write_str("etuner"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "immediate" => Ok(Policy::Immediate),
            "lazytune" => Ok(Policy::LazyTune),
            "simfreeze" => Ok(Policy::SimFreeze),
            "etuner" => Ok(Policy::ETuner),
            _ => {
                let k = s
                    .strip_prefix("static:")
                    .ok_or_else(|| Error::config(format!("unknown policy `{s}`")))?
                    .parse::<u32>()
                    .map_err(|_| Error::config(format!("bad static batch count in `{s}`")))?;
                if k == 0 {
                    return Err(Error::config("static policy needs k >= 1"));
                }
                Ok(Policy::Static(k))
            }
        }
    }
}

impl TryFrom<String> for Policy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreezeParams {
    pub freeze_interval: u64,
    pub stability_threshold: f64,
}

impl Default for FreezeParams {
    fn default() -> Self {
        Self {
            freeze_interval: DEFAULT_FREEZE_INTERVAL,
            stability_threshold: DEFAULT_STABILITY_THRESHOLD,
        }
    }
}

/// Run-level `batches_needed` cap. Lower than the controller's own default
/// because the benchmark's scenarios are short: at 64, rounds late in a
/// scenario lag the stream by several inference requests.
pub const RUN_DEFAULT_CAP: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LazyParams {
    pub cap: u32,
}

impl Default for LazyParams {
    fn default() -> Self {
        Self {
            cap: RUN_DEFAULT_CAP,
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

/// Full description of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialisation and pre-training.
    pub seed: u64,
    pub policy: Policy,
    /// Hidden layer widths; input and output widths come from the workload.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "RunConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "RunConfig::default_epochs")]
    pub epochs_per_round: u32,
    /// Epochs over the pre-training scenarios before streaming starts.
    #[serde(default = "RunConfig::default_pretrain_epochs")]
    pub pretrain_epochs: u32,
    /// Head-only CWR consolidation across rounds.
    #[serde(default = "RunConfig::default_cwr")]
    pub cwr: bool,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub freeze: FreezeParams,
    #[serde(default)]
    pub lazytune: LazyParams,
    /// Defaults to oracle detection: scheduling is then measured apart from
    /// detector quality.
    #[serde(default = "RunConfig::default_drift")]
    pub drift: DriftParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    fn default_lr() -> f64 {
        0.2
    }

    fn default_epochs() -> u32 {
        1
    }

    fn default_pretrain_epochs() -> u32 {
        5
    }

    fn default_cwr() -> bool {
        true
    }

    fn default_drift() -> DriftParams {
        DriftParams {
            mode: DriftMode::Oracle,
            ..DriftParams::default()
        }
    }

    /// The default 9-scenario benchmark under `policy`.
    pub fn benchmark(seed: u64, policy: Policy) -> Self {
        Self {
            seed,
            policy,
            hidden: default_hidden(),
            lr: Self::default_lr(),
            epochs_per_round: Self::default_epochs(),
            pretrain_epochs: Self::default_pretrain_epochs(),
            cwr: Self::default_cwr(),
            workload: WorkloadSpec::benchmark(seed),
            cost: CostParams::default(),
            freeze: FreezeParams::default(),
            lazytune: LazyParams::default(),
            drift: Self::default_drift(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same config with both the run seed and the workload seed replaced.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.workload.seed = seed;
        self
    }

    pub fn network_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.workload.dims);
        dims.extend(&self.hidden);
        dims.push(self.workload.class_count());
        dims
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.cost.validate()?;
        self.drift.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "hidden must list at least one positive width",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr must be positive and finite"));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::config("epochs_per_round must be at least 1"));
        }
        if self.freeze.freeze_interval == 0 {
            return Err(Error::config("freeze_interval must be at least 1"));
        }
        if !(self.freeze.stability_threshold > 0.0 && self.freeze.stability_threshold < 1.0) {
            return Err(Error::config("stability_threshold must lie in (0, 1)"));
        }
        if self.lazytune.cap == 0 {
            return Err(Error::config("lazytune cap must be at least 1"));
        }
        if let Policy::Static(0) = self.policy {
            return Err(Error::config("static policy needs k >= 1"));
        }
        Ok(())
    }
}
