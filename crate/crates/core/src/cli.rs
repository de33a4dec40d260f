//! `pvig` command line.
//!
//! Every subcommand that takes `--config` writes the resolved config to
//! `<out>/config.json` before it trains anything. Exit codes: 0 success,
//! 1 usage or configuration error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::data::{self, JsonlSchema, Split};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::grouping::{self, Policy, SimilarityRule};
use crate::model::{EncodedTask, TrainedModel};
use crate::pipeline::{self, DatasetSource, Experiment, ExperimentConfig, RunOptions, SeedRun, Summary};
use crate::pvi;
use crate::stats::TestFlavor;
use crate::synth::{self, SynthTaskSpec};

#[derive(Debug, Parser)]
#[command(name = "pvig", version, about = "PVI-based task grouping for multi-task learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic datasets as JSONL.
    Synth(SynthArgs),
    /// Compute PVI for every dataset of a config.
    Pvi(ConfigArgs),
    /// Test PVI samples for similarity and choose groups.
    Group(GroupArgs),
    /// Train STL/MTL models for explicit groups.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Run the full pipeline.
    Run(ConfigArgs),
    /// Render the tables of a finished run.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "PVIG_OUT", default_value = "pvig-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<Policy>,
    /// Replace the seeds with S, S+10, ... (same count).
    #[arg(long)]
    pub seed_override: Option<u64>,
    /// Split PVI is measured on.
    #[arg(long, value_parser = parse_split)]
    pub eval_split: Option<Split>,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Write every synthetic dataset listed in this experiment config.
    #[arg(long, conflicts_with = "task_id")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub task_id: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub concept_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    /// Observed labels ignore the text.
    #[arg(long)]
    pub independent_labels: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GroupArgs {
    /// PVI CSV files or directories holding them (default: <out>/pvi).
    #[arg(long)]
    pub pvi: Vec<PathBuf>,
    /// Take alpha, policy, flavor and group size from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<Policy>,
    #[arg(long, value_parser = parse_flavor)]
    pub flavor: Option<TestFlavor>,
    #[arg(long)]
    pub max_group_size: Option<usize>,
    #[arg(long)]
    pub bonferroni: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Comma-separated task ids trained jointly; a single id trains STL.
    /// Defaults to STL for every task.
    #[arg(long = "group")]
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Head to score with (default: the file stem).
    #[arg(long)]
    pub task_id: Option<String>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directory (default: --out).
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    Policy::parse(s).ok_or_else(|| format!("unknown policy `{s}` (max_p, max_abs_stat, paper_larger_t)"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split `{s}` (train, dev, test)"))
}

fn parse_flavor(s: &str) -> std::result::Result<TestFlavor, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown flavor `{s}` (welch, student_pooled, paired)"))
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns what it prints on success.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pvi(a) => cmd_pvi(a),
        Command::Group(a) => cmd_group(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Sets `path` (dot-separated, numeric segments index arrays) inside `root`.
/// The key must already exist so that typos fail loudly.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(format!("override key `{path}` does not exist")))?;
    }
    *slot = value;
    Ok(())
}

/// Reads the config, fills defaults, and applies `--set` and flag overrides.
pub fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let raw = read_json(&args.config)?;
    let parsed: ExperimentConfig =
        serde_json::from_value(raw).map_err(|e| Error::config(format!("{}: {e}", args.config.display())))?;
    let mut value = serde_json::to_value(&parsed).map_err(|e| Error::config(e.to_string()))?;
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::config(format!("after overrides: {e}")))?;
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(policy) = args.policy {
        cfg.policy = policy;
    }
    if let Some(split) = args.eval_split {
        cfg.pvi_eval_split = split;
    }
    if let Some(seed) = args.seed_override {
        cfg.override_seeds(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_resolved(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(cfg).map_err(|e| Error::config(e.to_string()))?;
    bytes.push(b'\n');
    write_file(&out.join("config.json"), &bytes)
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let specs: Vec<SynthTaskSpec> = match (&a.config, &a.task_id) {
        (Some(path), _) => {
            let cfg: ExperimentConfig = serde_json::from_value(read_json(path)?)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            cfg.datasets
                .into_iter()
                .filter_map(|d| match d {
                    DatasetSource::Synth(s) => Some(s),
                    DatasetSource::Jsonl { .. } => None,
                })
                .collect()
        }
        (None, Some(id)) => vec![SynthTaskSpec {
            independent_labels: a.independent_labels,
            ..SynthTaskSpec::new(id.clone(), a.classes, a.noise, a.n).with_seeds(a.concept_seed, a.sample_seed)
        }],
        (None, None) => return Err(Error::config("synth needs --config or --task-id")),
    };
    if specs.is_empty() {
        return Err(Error::config("no synthetic datasets to write"));
    }
    let mut out = String::new();
    for spec in &specs {
        let ds = synth::generate_task(spec)?;
        let path = a.out.out.join(format!("{}.jsonl", spec.task_id));
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).map_err(|e| Error::io(&path, e))?;
        write_file(&path, &buf)?;
        let _ = writeln!(
            out,
            "{}: {} instances, optimal mean PVI {:.4} bits",
            path.display(),
            ds.train().len() + ds.dev().len() + ds.test().len(),
            synth::optimal_mean_pvi(spec)
        );
    }
    Ok(out)
}

fn cmd_pvi(a: &ConfigArgs) -> Result<String> {
    let cfg = resolve_config(a)?;
    let out = &a.out.out;
    write_resolved(out, &cfg)?;
    let exp = Experiment::prepare(&cfg, &base_dir(&a.config), a.jobs)?;
    let results = exp.compute_pvi()?;
    let mut text = String::new();
    for (task, r) in &results {
        let mut buf = Vec::new();
        pvi::write_csv(&r.records, &mut buf)?;
        write_file(&out.join("pvi").join(format!("{task}.csv")), &buf)?;
        let _ = writeln!(text, "{task}: n={} mean={:.4} std={:.4}", r.summary.n, r.summary.mean, r.summary.std);
    }
    Ok(text)
}

fn collect_pvi_csvs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_group(a: &GroupArgs) -> Result<String> {
    let base = match &a.config {
        Some(path) => serde_json::from_value::<ExperimentConfig>(read_json(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    let rule = SimilarityRule {
        alpha: a.alpha.unwrap_or(base.alpha),
        flavor: a.flavor.unwrap_or(base.flavor),
        bonferroni: a.bonferroni || base.bonferroni,
    };
    let policy = a.policy.unwrap_or(base.policy);
    let max_group_size = a.max_group_size.unwrap_or(base.max_group_size);

    let sources = if a.pvi.is_empty() { vec![a.out.out.join("pvi")] } else { a.pvi.clone() };
    let files = collect_pvi_csvs(&sources)?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in &files {
        let file = std::fs::File::open(f).map_err(|e| Error::io(f, e))?;
        for r in pvi::read_csv(file)? {
            samples.entry(r.task_id).or_default().push(r.pvi);
        }
    }
    let plan = grouping::plan(&samples, max_group_size, &rule, policy, a.jobs)?;
    let table = grouping::render_table(&plan);
    let json = serde_json::json!({
        "alpha": rule.alpha,
        "effective_alpha": rule.effective_alpha(plan.audit.len()),
        "flavor": rule.flavor,
        "max_group_size": max_group_size,
        "groups": plan.groups,
        "singletons": plan.singletons,
        "policy": plan.policy,
        "audit": plan.audit,
    });
    let mut bytes = serde_json::to_vec_pretty(&json).map_err(|e| Error::data(e.to_string()))?;
    bytes.push(b'\n');
    write_file(&a.out.out.join("grouping.json"), &bytes)?;
    write_file(&a.out.out.join("grouping.txt"), table.as_bytes())?;
    Ok(table)
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    let cfg = resolve_config(&a.common)?;
    let out = &a.common.out.out;
    write_resolved(out, &cfg)?;
    let exp = Experiment::prepare(&cfg, &base_dir(&a.common.config), a.common.jobs)?;
    let groups: Vec<Vec<String>> = if a.groups.is_empty() {
        exp.task_ids().into_iter().map(|t| vec![t]).collect()
    } else {
        a.groups
            .iter()
            .map(|g| g.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .collect()
    };
    let trained = exp.train_group_models(&groups)?;
    for g in &trained {
        let dir = out.join("models").join(g.group.join("+"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        g.model.save(dir.join(format!("seed-{}.pvigm", g.seed)))?;
    }
    let runs: Vec<SeedRun> = trained.into_iter().flat_map(|g| g.runs).collect();
    let mut csv = Vec::new();
    write_runs(&runs, &mut csv)?;
    write_file(&out.join("reports").join("train.csv"), &csv)?;

    let mut text = String::new();
    for group in &groups {
        for task in group {
            let report = pipeline::report_for_group(task, group, &runs, &cfg.seeds)?;
            let _ = writeln!(
                text,
                "{:<24} {:<28} acc {}  f1 {}",
                report.task_id,
                report.setting.to_string(),
                report.accuracy,
                report.f1
            );
        }
    }
    Ok(text)
}

fn write_runs(runs: &[SeedRun], out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::data(e.to_string());
    w.write_record(pipeline::RUNS_CSV_HEADER.split(',')).map_err(err)?;
    for r in runs {
        let (setting, group) = match &r.setting {
            crate::eval::Setting::Stl => ("stl".to_string(), String::new()),
            crate::eval::Setting::Mtl(g) => ("mtl".to_string(), g.join("+")),
        };
        w.write_record([
            r.task_id.clone(),
            setting,
            group,
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.f1.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let model = TrainedModel::load(&a.model)?;
    let mut ds = data::load_jsonl(&a.data, &JsonlSchema::default())?;
    if let Some(id) = &a.task_id {
        ds = ds.renamed(id.clone());
    }
    let task = EncodedTask::new(&ds, &model.featurizer);
    let (accuracy, f1) = model.evaluate(&task, a.split)?;
    let report = serde_json::json!({
        "task_id": ds.task_id(),
        "split": a.split,
        "n": task.split_len(a.split),
        "accuracy": accuracy,
        "macro_f1": f1,
    });
    Ok(format!("{report}\n"))
}

fn cmd_run(a: &ConfigArgs) -> Result<String> {
    let cfg = resolve_config(a)?;
    let opts = RunOptions {
        out_dir: Some(a.out.out.clone()),
        base_dir: base_dir(&a.config),
        jobs: a.jobs,
    };
    pipeline::run_experiment(&cfg, &opts)?;
    let summary = read_summary(&a.out.out)?;
    Ok(render_summary(&summary))
}

fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn cmd_report(a: &ReportArgs) -> Result<String> {
    let dir = a.run.clone().unwrap_or_else(|| a.out.out.clone());
    let summary = read_summary(&dir)?;
    let mut text = String::new();
    let grouping = dir.join("grouping.txt");
    if let Ok(table) = std::fs::read_to_string(&grouping) {
        text.push_str("PVI similarity\n");
        text.push_str(&table);
        text.push('\n');
    }
    text.push_str(&render_summary(&summary));
    Ok(text)
}

/// STL vs MTL table, plus one table per baseline.
pub fn render_summary(summary: &Summary) -> String {
    let mut out = String::new();
    let ci = |r: &EvalReport| format!("{:.3} ±{:.3}  {:.3} ±{:.3}", r.accuracy.mean, r.accuracy.halfwidth, r.f1.mean, r.f1.halfwidth);
    let blank = format!("{:<27}", "-");
    let mut table = |title: &str, rows: &[pipeline::TaskComparison]| {
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{:<20} {:>8}  {:<27}  {:<27}  {}",
            "task", "PVI", "STL acc / F1", "MTL acc / F1", "verdict"
        );
        for c in rows {
            let pvi = c.pvi_mean.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into());
            let mtl = c.mtl.as_ref().map(ci).unwrap_or_else(|| blank.clone());
            let verdict = c.verdict.map(|v| v.to_string()).unwrap_or_else(|| "stl_only".into());
            let _ = writeln!(out, "{:<20} {:>8}  {:<27}  {:<27}  {}", c.task_id, pvi, ci(&c.stl), mtl, verdict);
        }
        out.push('\n');
    };
    table(&format!("PVI-grouped ({})", summary.policy), &summary.tasks);
    for b in &summary.baselines {
        table(&format!("baseline {}", b.kind.as_str()), &b.comparisons);
    }
    let _ = writeln!(out, "groups: {}", fmt_groups(&summary.groups));
    if !summary.singletons.is_empty() {
        let _ = writeln!(out, "singletons: {}", summary.singletons.join(", "));
    }
    out
}

fn fmt_groups(groups: &[Vec<String>]) -> String {
    if groups.is_empty() {
        return "none".into();
    }
    groups.iter().map(|g| g.join("+")).collect::<Vec<_>>().join(", ")
}
