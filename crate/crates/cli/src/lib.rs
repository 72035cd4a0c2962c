//! Command-line front end for the cloudsquat toolkit.

pub mod args;
pub mod config;
mod render;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use cloudsquat_core::attribute::{
    self, CloudRanges, PublicSuffixList, RankList, References, ResolutionSnapshot, UserAgentTable,
};
use cloudsquat_core::estimate::{self, EstimateError, ObservationLog};
use cloudsquat_core::funnel::{self, FunnelConfig, RuleSet};
use cloudsquat_core::net::PrefixSet;
use cloudsquat_core::sim::{self, SimReport};
use cloudsquat_core::{Policy, SimError, TenantId};
use serde::Serialize;
use thiserror::Error;

use args::{Cli, Command, Format};
use config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |msg| CliError::Data(format!("{}: {msg}", path.display()))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ConfigInvalid(msg) => CliError::Config(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::InvalidOccasionLength | EstimateError::InvalidBinWidth => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// A rendered report: the JSON body and its tabular form.
pub struct Report {
    pub command: &'static str,
    pub body: serde_json::Value,
    pub tsv: String,
}

#[derive(Serialize)]
struct Document<'a> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: &'a serde_json::Value,
}

impl Report {
    fn new<T: Serialize>(command: &'static str, body: &T, tsv: String) -> Self {
        Self {
            command,
            body: serde_json::to_value(body).expect("report serializes"),
            tsv,
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let doc = Document {
                    schema_version: SCHEMA_VERSION,
                    command: self.command,
                    body: &self.body,
                };
                let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Tsv => self.tsv.clone(),
        }
    }
}

/// Parses `argv`, runs the command and writes its report. Returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cloudsquat: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let format = cli.format.or(file.format).unwrap_or_default();
    let output: Option<PathBuf> = cli.output.clone().or_else(|| file.output.clone());
    if let Some(p) = &output {
        config::check_output(p)?;
    }

    let report = match &cli.command {
        Command::Simulate(a) => simulate(config::simulate(&file.simulate, a, seed)?)?,
        Command::ComparePolicies(a) => compare_policies(&file.simulate, a, seed)?,
        Command::Estimate(a) => estimate(config::estimate(&file.estimate, a)?)?,
        Command::Reuse(a) => reuse(config::reuse(&file.reuse, a)?)?,
        Command::Funnel(a) => run_funnel(config::funnel(&file.funnel, a)?)?,
        Command::Attribute(a) => run_attribute(config::attribute(&file.attribute, a)?)?,
    };

    let text = report.render(format);
    match output {
        Some(path) => {
            let mut w = create(&path)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
    }
}

fn simulate(s: config::SimulateSettings) -> Result<Report, CliError> {
    let mut report = sim::run(s.config)?;
    if let Some(path) = &s.trace {
        let trace = report.trace.take().unwrap_or_default();
        sim::write_trace(&trace, create(path)?).map_err(|e| data(path)(e.to_string()))?;
    }
    if !s.raw {
        report.strip_raw();
    }
    let tsv = render::sim_rows(std::slice::from_ref(&report));
    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a SimReport,
    }
    Ok(Report::new("simulate", &Body { report: &report }, tsv))
}

#[derive(Debug, Serialize)]
pub struct PolicyRow {
    pub policy: Policy,
    pub unique_ips: Option<u64>,
    pub mean_prev_tenants: Option<f64>,
    pub median_reuse: Option<u64>,
    pub acquisitions: u64,
    pub ticks: u64,
    pub stalled: bool,
}

fn compare_policies(file: &config::SimSection, flags: &args::SimArgs, seed: u64) -> Result<Report, CliError> {
    let base = config::sim_config(file, flags, Policy::Random, seed);
    let mut reports = Vec::with_capacity(3);
    for policy in Policy::ALL {
        let mut c = base.clone();
        c.pool.policy = policy;
        let mut r = sim::run(c)?;
        r.strip_raw();
        reports.push(r);
    }
    let rows: Vec<PolicyRow> = reports
        .iter()
        .map(|r| PolicyRow {
            policy: r.policy,
            unique_ips: r.summary.as_ref().map(|s| s.unique_ips),
            mean_prev_tenants: r.summary.as_ref().map(|s| s.mean_prev_tenants),
            median_reuse: r.summary.as_ref().and_then(|s| s.median_reuse),
            acquisitions: r.metrics.acquisitions,
            ticks: r.ticks,
            stalled: r.stalled,
        })
        .collect();
    #[derive(Serialize)]
    struct Body<'a> {
        base_config: &'a sim::SimConfig,
        rows: &'a [PolicyRow],
    }
    let tsv = render::sim_rows(&reports);
    Ok(Report::new(
        "compare-policies",
        &Body {
            base_config: &base,
            rows: &rows,
        },
        tsv,
    ))
}

fn estimate(s: config::EstimateSettings) -> Result<Report, CliError> {
    let (log, source) = match &s.source {
        config::ObservationSource::Log(path) => (
            ObservationLog::parse(open(path)?).map_err(|e| data(path)(e.to_string()))?,
            serde_json::json!({ "input": path }),
        ),
        config::ObservationSource::Trace { path, observer } => {
            let trace = sim::read_trace(open(path)?).map_err(|e| data(path)(e.to_string()))?;
            (
                ObservationLog::from_trace(&trace, TenantId(*observer)),
                serde_json::json!({ "trace": path, "observer": observer }),
            )
        }
    };
    let history = estimate::build_history(&log, s.occasion_length)?;
    let estimates = estimate::jolly_seber(&history)?;
    let rate = estimate::capture_rate_from(&history, &estimates)?;
    let tsv = render::estimate(&estimates, &rate);
    Ok(Report::new(
        "estimate",
        &serde_json::json!({
            "source": source,
            "occasion_length": s.occasion_length,
            "individuals": history.len(),
            "occasions": history.occasions,
            "estimates": estimates,
            "capture_rate": rate,
        }),
        tsv,
    ))
}

fn reuse(s: config::ReuseSettings) -> Result<Report, CliError> {
    let trace = sim::read_trace(open(&s.trace)?).map_err(|e| data(&s.trace)(e.to_string()))?;
    let stats = estimate::reuse_stats(&trace, s.bin_width, s.cooldown)?;
    let tsv = render::reuse(&stats);
    Ok(Report::new(
        "reuse",
        &serde_json::json!({ "trace": s.trace, "stats": stats }),
        tsv,
    ))
}

fn run_funnel(s: config::FunnelSettings) -> Result<Report, CliError> {
    let mut blocklist = PrefixSet::new();
    for path in &s.blocklists {
        blocklist
            .extend_netset(open(path)?)
            .map_err(|e| data(path)(e.to_string()))?;
    }
    let mut rules = RuleSet::builtin();
    if let Some(path) = &s.rules {
        rules
            .extend_from_reader(open(path)?)
            .map_err(|e| data(path)(e.to_string()))?;
    }
    let sessions = funnel::read_sessions(open(&s.input)?).map_err(|e| data(&s.input)(e.to_string()))?;
    let config = FunnelConfig { blocklist, rules };
    let report = funnel::run_funnel(&sessions, &config);
    if let Some(path) = &s.survivors {
        let mut w = create(path)?;
        funnel::write_sessions(&mut w, report.survivors(&sessions))
            .and_then(|_| w.flush())
            .map_err(|e| data(path)(e.to_string()))?;
    }
    let tsv = render::funnel(&report);
    Ok(Report::new(
        "funnel",
        &serde_json::json!({
            "input": s.input,
            "blocklists": s.blocklists,
            "blocklist_prefixes": config.blocklist.len(),
            "rules": s.rules,
            "rule_count": config.rules.rules.len(),
            "report": report,
        }),
        tsv,
    ))
}

fn run_attribute(s: config::AttributeSettings) -> Result<Report, CliError> {
    let mut refs = References::new();
    if let Some(p) = &s.ranges {
        refs.ranges = CloudRanges::from_json(open(p)?).map_err(|e| data(p)(e.to_string()))?;
    }
    if let Some(p) = &s.user_agents {
        refs.user_agents = UserAgentTable::parse(open(p)?).map_err(|e| data(p)(e.to_string()))?;
    }
    if let Some(p) = &s.psl {
        refs.psl = PublicSuffixList::parse(open(p)?).map_err(|e| data(p)(e.to_string()))?;
    }
    if let Some(p) = &s.ranks {
        refs.ranks = RankList::parse(open(p)?).map_err(|e| data(p)(e.to_string()))?;
    }
    if let Some(p) = &s.snapshot {
        refs.snapshot = Some(ResolutionSnapshot::parse(open(p)?).map_err(|e| data(p)(e.to_string()))?);
    }
    if let Some(w) = &s.wildcard_providers {
        refs.wildcard_providers = w.iter().map(|p| p.trim_matches('.').to_ascii_lowercase()).collect();
    }
    let sessions = funnel::read_sessions(open(&s.input)?).map_err(|e| data(&s.input)(e.to_string()))?;
    let report = attribute::attribute_report(&sessions, &refs);
    let tsv = render::attribute(&report);
    Ok(Report::new(
        "attribute",
        &serde_json::json!({
            "input": s.input,
            "ranges": s.ranges,
            "user_agents": s.user_agents,
            "psl": s.psl,
            "ranks": s.ranks,
            "snapshot": s.snapshot,
            "wildcard_providers": refs.wildcard_providers,
            "report": report,
        }),
        tsv,
    ))
}
