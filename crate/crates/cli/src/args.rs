use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cloudsquat_core::Policy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cloudsquat", version, about = "IP reuse modelling for public cloud address pools")]
pub struct Cli {
    /// TOML run configuration. Flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output document format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    #[value(name = "paper-useast1a")]
    #[serde(rename = "paper-useast1a")]
    PaperUseast1a,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one pool simulation and report the adversary's view.
    Simulate(SimulateArgs),
    /// Run Random, Lru and Tagging with the same seed and compare.
    ComparePolicies(SimArgs),
    /// Estimate pool size and capture rate from an observation log.
    Estimate(EstimateArgs),
    /// Summarise reuse intervals in an allocation trace.
    Reuse(ReuseArgs),
    /// Filter a session corpus through the four-stage funnel.
    Funnel(FunnelArgs),
    /// Attribute sessions to cloud services and domains.
    Attribute(AttributeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub pool: Option<u32>,
    #[arg(long)]
    pub tenants: Option<u32>,
    #[arg(long)]
    pub cooldown: Option<u64>,
    #[arg(long)]
    pub tick: Option<u64>,
    /// Tenants draw a target holding from 0..=quota-max each tick.
    #[arg(long)]
    pub quota_max: Option<u32>,
    #[arg(long)]
    pub adv_quota: Option<u32>,
    #[arg(long)]
    pub adv_hold: Option<u64>,
    #[arg(long)]
    pub adv_allocations: Option<u64>,
    /// Stop after this many simulated seconds.
    #[arg(long)]
    pub duration: Option<u64>,
    /// Tenant-only ticks before the adversary starts. Default: until every
    /// address has been used once.
    #[arg(long)]
    pub warmup_ticks: Option<u64>,
    /// Per-address tenant history size before switching to an estimate.
    #[arg(long)]
    pub history_capacity: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Write the allocation trace as CSV.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Keep per-acquisition lists in the report.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Observation log: `ip,timestamp` lines.
    #[arg(long, value_name = "FILE", conflicts_with = "trace")]
    pub input: Option<PathBuf>,
    /// Simulation trace CSV; observations are the allocations of `--observer`.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub observer: Option<u32>,
    /// Seconds per capture occasion.
    #[arg(long)]
    pub occasion_length: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReuseArgs {
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub bin_width: Option<u64>,
    #[arg(long)]
    pub cooldown: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FunnelArgs {
    /// Session records, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Netset blocklist; may be repeated.
    #[arg(long = "blocklist", value_name = "FILE")]
    pub blocklists: Vec<PathBuf>,
    /// Extra application rules: `name<TAB>kind<TAB>pattern`.
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
    /// Write surviving sessions here.
    #[arg(long, value_name = "FILE")]
    pub survivors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Cloud ranges JSON.
    #[arg(long, value_name = "FILE")]
    pub ranges: Option<PathBuf>,
    /// User-agent table replacing the bundled one.
    #[arg(long, value_name = "FILE")]
    pub user_agents: Option<PathBuf>,
    /// Public suffix list.
    #[arg(long, value_name = "FILE")]
    pub psl: Option<PathBuf>,
    /// `rank,domain` list.
    #[arg(long, value_name = "FILE")]
    pub ranks: Option<PathBuf>,
    /// `host,ip` resolution snapshot.
    #[arg(long, value_name = "FILE")]
    pub snapshot: Option<PathBuf>,
    /// Wildcard DNS provider suffix; may be repeated. Replaces the defaults.
    #[arg(long = "wildcard-provider", value_name = "SUFFIX")]
    pub wildcard_providers: Vec<String>,
}
