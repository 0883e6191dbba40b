//! Command-line front end: JSON config with dotted `--set` overrides, four
//! subcommands (`simulate`, `compare`, `heatmap`, `profile`), and
//! deterministic file outputs. Files are written to a temp path and renamed
//! into place so failures never leave partial output behind.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure. Errors
//! print to stderr as a single JSON object.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::frame_attention_profile;
use crate::cache::{CachePolicyConfig, HeadMode, LayerCache, PolicyKind};
use crate::error::{Error, Result};
use crate::simulator::{
    compare_policies, rollout, selection_heatmap, summarize, PolicySummary, RolloutOptions,
    RolloutOutput, RolloutTrace, StepRecord, StreamModel,
};

/// Everything one run needs: the stream surrogate, the cache policy, the
/// horizon, and which seeds to sweep. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: StreamModel,
    pub cache: CachePolicyConfig,
    pub chunks: usize,
    /// Seeds to run; empty means the model's own seed.
    pub seeds: Vec<u64>,
    /// Track the shadow cache and retained mass during `simulate` (compare
    /// always does).
    pub oracle: bool,
    /// Default output directory; the `--out` flag overrides it.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: StreamModel::default(),
            cache: CachePolicyConfig::default(),
            chunks: 40,
            seeds: Vec::new(),
            oracle: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.model.seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "framepress", version, about = "Streaming KV-cache policy simulator")]
pub struct Cli {
    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dotted config overrides, e.g. `--set cache.sink_frames=12`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (default: config's `out`, else current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one rollout per seed; write trace.jsonl (first seed) and
    /// summary.csv (all seeds).
    Simulate,
    /// Run several policies over the same stream; write policies.csv.
    Compare {
        /// Comma-separated policy names; defaults to every policy.
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        policies: Vec<String>,
    },
    /// Aggregate a trace's selection counts into heatmap.csv.
    Heatmap {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
    },
    /// Per-frame attention profile of a trace's final cache into profile.csv.
    Profile {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
}

/// One line of trace.jsonl.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceRow {
    Meta {
        config: RunConfig,
    },
    Step(StepRecord),
    Final {
        caches: Vec<LayerCache>,
        /// Per cache: the final recent clean queries, embedded.
        last_queries: Vec<Vec<Vec<f32>>>,
    },
}

fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty path segment in --set {key}")));
        }
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("--set {key}: {} is not an object", parts[..i].join(".")))
        })?;
        if i == parts.len() - 1 {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        node = map.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split never yields zero parts");
}

/// Loads the config file (or defaults), applies `--set` overrides, then the
/// `--seed`/`--out` flags.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut value = match &cli.config {
        Some(path) => serde_json::from_str::<Value>(&fs::read_to_string(path)?)?,
        None => serde_json::to_value(RunConfig::default())?,
    };
    for set in &cli.sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {set:?}"))
        })?;
        set_dotted(&mut value, key, raw)?;
    }
    let mut config: RunConfig = serde_json::from_value(value)?;
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    config.model.validate()?;
    config.cache.validate()?;
    if config.chunks == 0 {
        return Err(Error::Config("chunks must be at least 1".into()));
    }
    Ok(config)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn fmt_mass(mass: Option<f64>) -> String {
    mass.map(|m| m.to_string()).unwrap_or_default()
}

fn trace_bytes(config: &RunConfig, output: &RolloutOutput) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let meta = TraceRow::Meta {
        config: config.clone(),
    };
    serde_json::to_writer(&mut buf, &meta)?;
    buf.push(b'\n');
    for step in &output.trace.steps {
        serde_json::to_writer(&mut buf, &TraceRow::Step(step.clone()))?;
        buf.push(b'\n');
    }
    let last_queries: Vec<Vec<Vec<f32>>> = (0..output.bank.cache_count())
        .map(|ci| {
            output
                .bank
                .recent_queries(ci)
                .iter()
                .flat_map(|fq| fq.rows.iter().cloned())
                .collect()
        })
        .collect();
    let fin = TraceRow::Final {
        caches: output.bank.caches().to_vec(),
        last_queries,
    };
    serde_json::to_writer(&mut buf, &fin)?;
    buf.push(b'\n');
    Ok(buf)
}

fn read_trace(path: &Path) -> Result<(RunConfig, RolloutTrace, Vec<LayerCache>, Vec<Vec<Vec<f32>>>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut config = None;
    let mut steps = Vec::new();
    let mut finale = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceRow>(&line)? {
            TraceRow::Meta { config: c } => config = Some(c),
            TraceRow::Step(step) => steps.push(step),
            TraceRow::Final {
                caches,
                last_queries,
            } => finale = Some((caches, last_queries)),
        }
    }
    let config = config.ok_or_else(|| Error::Config("trace has no meta record".into()))?;
    let compressions = steps.iter().filter(|s| !s.events.is_empty()).count();
    let trace = RolloutTrace {
        schedule: config.model.schedule.clone(),
        steps,
        compressions,
    };
    let (caches, last_queries) = finale.unwrap_or_default();
    Ok((config, trace, caches, last_queries))
}

fn summary_csv(rows: &[(u64, PolicySummary)], chunks: usize) -> Vec<u8> {
    let mut csv = String::from(
        "seed,policy,chunks,compressions,evicted_tokens,final_tokens,final_frames,mean_retained_mass,min_retained_mass\n",
    );
    for (seed, s) in rows {
        csv.push_str(&format!(
            "{seed},{},{chunks},{},{},{},{},{},{}\n",
            s.policy.as_str(),
            s.compressions,
            s.evicted_tokens,
            s.final_tokens,
            s.final_frames,
            fmt_mass(s.mean_retained_mass),
            fmt_mass(s.min_retained_mass),
        ));
    }
    csv.into_bytes()
}

fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let dir = out_dir(config)?;
    let mut rows = Vec::new();
    for (i, &seed) in config.effective_seeds().iter().enumerate() {
        let model = StreamModel {
            seed,
            ..config.model.clone()
        };
        let output = rollout(
            &model,
            &config.cache,
            config.chunks,
            RolloutOptions {
                oracle: config.oracle,
            },
        )?;
        log::info!(
            "seed {seed}: {} compressions, final cache {} tokens",
            output.trace.compressions,
            output.bank.token_count()
        );
        if i == 0 {
            write_atomic(&dir.join("trace.jsonl"), &trace_bytes(config, &output)?)?;
        }
        rows.push((seed, summarize(&output, &config.cache)));
    }
    write_atomic(&dir.join("summary.csv"), &summary_csv(&rows, config.chunks))?;
    Ok(())
}

fn cmd_compare(config: &RunConfig, policy_names: &[String]) -> Result<()> {
    let dir = out_dir(config)?;
    let policies: Vec<PolicyKind> = if policy_names.is_empty() {
        vec![
            PolicyKind::Fifo,
            PolicyKind::ShallowSink,
            PolicyKind::LongliveSink,
            PolicyKind::RollingforcingSink,
            PolicyKind::RandomTopc,
            PolicyKind::DeepForcing,
        ]
    } else {
        policy_names
            .iter()
            .map(|n| PolicyKind::parse(n))
            .collect::<Result<_>>()?
    };
    let cfgs: Vec<CachePolicyConfig> = policies
        .iter()
        .map(|&policy| CachePolicyConfig {
            policy,
            ..config.cache.clone()
        })
        .collect();

    let seeds = config.effective_seeds();
    // rows[policy][seed]
    let mut rows: Vec<Vec<PolicySummary>> = vec![Vec::new(); policies.len()];
    for &seed in &seeds {
        let model = StreamModel {
            seed,
            ..config.model.clone()
        };
        for (p, summary) in compare_policies(&model, &cfgs, config.chunks)?
            .into_iter()
            .enumerate()
        {
            rows[p].push(summary);
        }
    }

    let mut csv = String::from(
        "policy,seeds,total_compressions,total_evicted_tokens,final_tokens,mean_retained_mass,min_retained_mass\n",
    );
    for per_seed in &rows {
        let policy = per_seed[0].policy;
        let compressions: usize = per_seed.iter().map(|s| s.compressions).sum();
        let evicted: u64 = per_seed.iter().map(|s| s.evicted_tokens).sum();
        let means: Vec<f64> = per_seed.iter().filter_map(|s| s.mean_retained_mass).collect();
        let mean = if means.is_empty() {
            None
        } else {
            Some(means.iter().sum::<f64>() / means.len() as f64)
        };
        let min = per_seed
            .iter()
            .filter_map(|s| s.min_retained_mass)
            .reduce(f64::min);
        csv.push_str(&format!(
            "{},{},{compressions},{evicted},{},{},{}\n",
            policy.as_str(),
            seeds.len(),
            per_seed[0].final_tokens,
            fmt_mass(mean),
            fmt_mass(min),
        ));
    }
    write_atomic(&dir.join("policies.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_heatmap(config_out: Option<&RunConfig>, trace_path: &Path) -> Result<()> {
    let (config, trace, _, _) = read_trace(trace_path)?;
    let dir = out_dir(config_out.unwrap_or(&config))?;
    let map = selection_heatmap(&trace, &config.cache)?;
    let mut csv = format!(
        "# sink_end={}\n# candidate_end={}\n# events={}\nslot,count\n",
        map.sink_end, map.candidate_end, map.events
    );
    for (slot, count) in map.slot_counts.iter().enumerate() {
        csv.push_str(&format!("{slot},{count}\n"));
    }
    write_atomic(&dir.join("heatmap.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_profile(
    config_out: Option<&RunConfig>,
    trace_path: &Path,
    layer: usize,
    head: usize,
) -> Result<()> {
    let (config, _, caches, last_queries) = read_trace(trace_path)?;
    let dir = out_dir(config_out.unwrap_or(&config))?;
    if caches.is_empty() {
        return Err(Error::Config("trace has no final cache record".into()));
    }
    let heads = config.model.num_heads;
    if layer >= config.model.num_layers || head >= heads {
        return Err(Error::IndexOutOfRange {
            index: layer * heads + head,
            len: config.model.num_layers * heads,
        });
    }
    let (cache_index, head_in_cache) = match config.cache.head_mode {
        HeadMode::PerHead => (layer * heads + head, 0),
        HeadMode::Shared => (layer, head),
    };
    let cache = caches.get(cache_index).ok_or(Error::IndexOutOfRange {
        index: cache_index,
        len: caches.len(),
    })?;
    let queries = last_queries.get(cache_index).ok_or(Error::IndexOutOfRange {
        index: cache_index,
        len: last_queries.len(),
    })?;
    let profile = frame_attention_profile(queries, cache, head_in_cache)?;
    let mut csv = String::from("frame,weight\n");
    for (frame, weight) in &profile.weights {
        csv.push_str(&format!("{frame},{weight}\n"));
    }
    write_atomic(&dir.join("profile.csv"), csv.as_bytes())?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => cmd_simulate(&load_config(cli)?),
        Command::Compare { policies } => cmd_compare(&load_config(cli)?, policies),
        Command::Heatmap { trace } => {
            // The trace's own config provides cache geometry; flags may still
            // redirect the output directory.
            let config_out = cli.out.as_ref().map(|out| RunConfig {
                out: Some(out.clone()),
                ..RunConfig::default()
            });
            cmd_heatmap(config_out.as_ref(), trace)
        }
        Command::Profile { trace, layer, head } => {
            let config_out = cli.out.as_ref().map(|out| RunConfig {
                out: Some(out.clone()),
                ..RunConfig::default()
            });
            cmd_profile(config_out.as_ref(), trace, *layer, *head)
        }
    }
}

/// CLI entry point: parses arguments, runs the subcommand, maps errors to
/// exit codes (2 config, 3 runtime) with a JSON error line on stderr.
pub fn main() -> ExitCode {
    let _ = env_logger::try_init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_config() { 2u8 } else { 3u8 };
            let payload = serde_json::json!({ "error": e.to_string(), "code": code });
            let mut stderr = std::io::stderr().lock();
            let _ = writeln!(stderr, "{payload}");
            ExitCode::from(code)
        }
    }
}
