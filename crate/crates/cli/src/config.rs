//! TOML run configuration merged with command-line flags.

use std::path::{Path, PathBuf};

use cloudsquat_core::{Policy, SimConfig};
use serde::Deserialize;

use crate::args::{AttributeArgs, EstimateArgs, FunnelArgs, Format, Preset, ReuseArgs, SimArgs, SimulateArgs};
use crate::CliError;

pub const DEFAULT_OCCASION_LENGTH: f64 = 3600.0;
pub const DEFAULT_BIN_WIDTH: u64 = 600;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub reuse: ReuseSection,
    #[serde(default)]
    pub funnel: FunnelSection,
    #[serde(default)]
    pub attribute: AttributeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub preset: Option<Preset>,
    pub policy: Option<Policy>,
    pub pool: Option<u32>,
    pub tenants: Option<u32>,
    pub cooldown: Option<u64>,
    pub tick: Option<u64>,
    pub quota_max: Option<u32>,
    pub adv_quota: Option<u32>,
    pub adv_hold: Option<u64>,
    pub adv_allocations: Option<u64>,
    pub duration: Option<u64>,
    pub warmup_ticks: Option<u64>,
    pub history_capacity: Option<u32>,
    pub trace: Option<PathBuf>,
    pub raw: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub input: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub observer: Option<u32>,
    pub occasion_length: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReuseSection {
    pub trace: Option<PathBuf>,
    pub bin_width: Option<u64>,
    pub cooldown: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelSection {
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub blocklists: Vec<PathBuf>,
    pub rules: Option<PathBuf>,
    pub survivors: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSection {
    pub input: Option<PathBuf>,
    pub ranges: Option<PathBuf>,
    pub user_agents: Option<PathBuf>,
    pub psl: Option<PathBuf>,
    pub ranks: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub wildcard_providers: Option<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Input files must exist and output directories must be present before
/// any work starts.
pub fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{}: no such file", path.display())))
    }
}

pub fn check_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Config(format!(
            "{}: directory does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    let path = path.ok_or_else(|| CliError::Config(format!("missing --{flag}")))?;
    check_input(&path)?;
    Ok(path)
}

fn optional(path: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    if let Some(p) = &path {
        check_input(p)?;
    }
    Ok(path)
}

fn output(path: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    if let Some(p) = &path {
        check_output(p)?;
    }
    Ok(path)
}

/// Preset, then file values, then flags.
pub fn sim_config(file: &SimSection, flags: &SimArgs, policy: Policy, seed: u64) -> SimConfig {
    let preset = flags.preset.or(file.preset).unwrap_or_default();
    let mut c = match preset {
        Preset::Desk => SimConfig::desk(policy),
        Preset::PaperUseast1a => SimConfig::paper_useast1a(policy),
    };
    macro_rules! set {
        ($field:ident => $($target:tt)+) => {
            if let Some(v) = flags.$field.or(file.$field) {
                $($target)+ = v;
            }
        };
    }
    set!(pool => c.pool.pool_size);
    set!(tenants => c.n_tenants);
    set!(cooldown => c.pool.cooldown);
    set!(tick => c.tick);
    set!(quota_max => c.quota_max);
    set!(adv_quota => c.adversary_quota);
    set!(adv_hold => c.adversary_hold);
    set!(adv_allocations => c.adversary_target_allocations);
    if let Some(v) = flags.duration.or(file.duration) {
        c.duration = Some(v);
    }
    if let Some(v) = flags.warmup_ticks.or(file.warmup_ticks) {
        c.warmup_ticks = Some(v);
    }
    if let Some(v) = flags.history_capacity.or(file.history_capacity) {
        c.pool.history_capacity = Some(v);
    }
    c.seed = seed;
    c
}

pub struct SimulateSettings {
    pub config: SimConfig,
    pub trace: Option<PathBuf>,
    pub raw: bool,
}

pub fn simulate(file: &SimSection, flags: &SimulateArgs, seed: u64) -> Result<SimulateSettings, CliError> {
    let policy = flags.policy.or(file.policy).unwrap_or(Policy::Tagging);
    let trace = output(flags.trace.clone().or_else(|| file.trace.clone()))?;
    let mut config = sim_config(file, &flags.sim, policy, seed);
    config.record_trace = trace.is_some();
    Ok(SimulateSettings {
        config,
        trace,
        raw: flags.raw || file.raw.unwrap_or(false),
    })
}

pub enum ObservationSource {
    Log(PathBuf),
    Trace { path: PathBuf, observer: u32 },
}

pub struct EstimateSettings {
    pub source: ObservationSource,
    pub occasion_length: f64,
}

pub fn estimate(file: &EstimateSection, flags: &EstimateArgs) -> Result<EstimateSettings, CliError> {
    let occasion_length = flags
        .occasion_length
        .or(file.occasion_length)
        .unwrap_or(DEFAULT_OCCASION_LENGTH);
    if !(occasion_length.is_finite() && occasion_length > 0.0) {
        return Err(CliError::Config("occasion length must be positive".into()));
    }
    let (input, trace) = if flags.input.is_some() || flags.trace.is_some() {
        (flags.input.clone(), flags.trace.clone())
    } else {
        (file.input.clone(), file.trace.clone())
    };
    let source = match (input, trace) {
        (Some(p), None) => ObservationSource::Log(required(Some(p), "input")?),
        (None, Some(p)) => ObservationSource::Trace {
            path: required(Some(p), "trace")?,
            observer: flags
                .observer
                .or(file.observer)
                .ok_or_else(|| CliError::Config("missing --observer".into()))?,
        },
        (Some(_), Some(_)) => {
            return Err(CliError::Config("give an observation log or a trace, not both".into()))
        }
        (None, None) => return Err(CliError::Config("missing --input or --trace".into())),
    };
    Ok(EstimateSettings {
        source,
        occasion_length,
    })
}

pub struct ReuseSettings {
    pub trace: PathBuf,
    pub bin_width: u64,
    pub cooldown: u64,
}

pub fn reuse(file: &ReuseSection, flags: &ReuseArgs) -> Result<ReuseSettings, CliError> {
    let bin_width = flags.bin_width.or(file.bin_width).unwrap_or(DEFAULT_BIN_WIDTH);
    if bin_width == 0 {
        return Err(CliError::Config("bin width must be positive".into()));
    }
    Ok(ReuseSettings {
        trace: required(flags.trace.clone().or_else(|| file.trace.clone()), "trace")?,
        bin_width,
        cooldown: flags
            .cooldown
            .or(file.cooldown)
            .unwrap_or(cloudsquat_core::pool::DEFAULT_COOLDOWN),
    })
}

pub struct FunnelSettings {
    pub input: PathBuf,
    pub blocklists: Vec<PathBuf>,
    pub rules: Option<PathBuf>,
    pub survivors: Option<PathBuf>,
}

pub fn funnel(file: &FunnelSection, flags: &FunnelArgs) -> Result<FunnelSettings, CliError> {
    let blocklists = if flags.blocklists.is_empty() {
        file.blocklists.clone()
    } else {
        flags.blocklists.clone()
    };
    for b in &blocklists {
        check_input(b)?;
    }
    Ok(FunnelSettings {
        input: required(flags.input.clone().or_else(|| file.input.clone()), "input")?,
        blocklists,
        rules: optional(flags.rules.clone().or_else(|| file.rules.clone()))?,
        survivors: output(flags.survivors.clone().or_else(|| file.survivors.clone()))?,
    })
}

pub struct AttributeSettings {
    pub input: PathBuf,
    pub ranges: Option<PathBuf>,
    pub user_agents: Option<PathBuf>,
    pub psl: Option<PathBuf>,
    pub ranks: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub wildcard_providers: Option<Vec<String>>,
}

pub fn attribute(file: &AttributeSection, flags: &AttributeArgs) -> Result<AttributeSettings, CliError> {
    let pick = |f: &Option<PathBuf>, c: &Option<PathBuf>| optional(f.clone().or_else(|| c.clone()));
    Ok(AttributeSettings {
        input: required(flags.input.clone().or_else(|| file.input.clone()), "input")?,
        ranges: pick(&flags.ranges, &file.ranges)?,
        user_agents: pick(&flags.user_agents, &file.user_agents)?,
        psl: pick(&flags.psl, &file.psl)?,
        ranks: pick(&flags.ranks, &file.ranks)?,
        snapshot: pick(&flags.snapshot, &file.snapshot)?,
        wildcard_providers: if flags.wildcard_providers.is_empty() {
            file.wildcard_providers.clone()
        } else {
            Some(flags.wildcard_providers.clone())
        },
    })
}
