//! End-to-end experiment: PVI sweep, grouping plan, STL and MTL training,
//! and the all-tasks / random-pairs baselines.
//!
//! Run directory layout:
//!
//! ```text
//! config.json                 resolved config plus input content hashes
//! pvi/<task>.csv              one row per scored instance
//! pvi/<task>.summary.json     n, mean, std, config hash
//! grouping.json, grouping.txt decisions and the chosen plan
//! reports/{stl,mtl,baselines}.csv
//! summary.json
//! ```
//!
//! Files of a stage are written with a `.partial` suffix and renamed when the
//! stage completes, so a failed run leaves its incomplete stage visible.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, JsonlSchema, Split, TaskDataset};
use crate::error::{Error, Result, StageExt};
use crate::eval::{self, EvalReport, Setting, Verdict};
use crate::features::FeaturizerConfig;
use crate::grouping::{self, GroupingPlan, Policy, SimilarityRule};
use crate::model::{train_encoded, EncodedTask, InputMode, TrainConfig, TrainedModel};
use crate::parallel;
use crate::pvi::{self, PviResult, PviSummary};
use crate::stats::TestFlavor;
use crate::synth::{self, SynthTaskSpec};

pub const RUN_FORMAT: &str = "pvig-run";
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Jsonl {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        #[serde(default)]
        schema: JsonlSchema,
        /// Defaults to the file stem.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<String>,
    },
    Synth(SynthTaskSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Baselines {
    pub all_tasks: bool,
    pub random_pairs: bool,
    pub pairing_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub featurizer: FeaturizerConfig,
    pub train: TrainConfig,
    /// Split PVI is measured on.
    pub pvi_eval_split: Split,
    /// Split STL and MTL models are scored on.
    pub score_split: Split,
    pub alpha: f64,
    pub max_group_size: usize,
    pub policy: Policy,
    pub flavor: TestFlavor,
    pub bonferroni: bool,
    /// Training seeds for STL/MTL; the first one also seeds the PVI models.
    pub seeds: Vec<u64>,
    pub baselines: Baselines,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            featurizer: FeaturizerConfig::default(),
            train: TrainConfig::default(),
            pvi_eval_split: Split::Dev,
            score_split: Split::Test,
            alpha: 0.01,
            max_group_size: 3,
            policy: Policy::MaxP,
            flavor: TestFlavor::Welch,
            bonferroni: false,
            seeds: vec![42, 52, 62, 72, 82],
            baselines: Baselines::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn rule(&self) -> SimilarityRule {
        SimilarityRule {
            alpha: self.alpha,
            flavor: self.flavor,
            bonferroni: self.bonferroni,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        self.train.validate()?;
        self.rule().validate()?;
        if self.seeds.len() < 2 {
            return Err(Error::config("confidence intervals need at least 2 seeds"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.max_group_size < 2 {
            return Err(Error::config("max group size must be at least 2"));
        }
        if self.pvi_eval_split == Split::Train {
            return Err(Error::config("PVI must be evaluated on dev or test"));
        }
        Ok(())
    }

    /// Replaces the seeds with `base, base + 10, ...`, keeping their count.
    pub fn override_seeds(&mut self, base: u64) {
        let n = self.seeds.len().max(2);
        self.seeds = (0..n as u64).map(|i| base + 10 * i).collect();
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub task_id: String,
    pub source: String,
    pub sha256: String,
}

pub fn load_source(source: &DatasetSource, base_dir: &Path) -> Result<TaskDataset> {
    match source {
        DatasetSource::Jsonl { path, schema, task_id } => {
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let ds = data::load_jsonl(&full, schema)?;
            Ok(match task_id {
                Some(id) => ds.renamed(id.clone()),
                None => ds,
            })
        }
        DatasetSource::Synth(spec) => synth::generate_task(spec),
    }
}

fn describe(source: &DatasetSource) -> String {
    match source {
        DatasetSource::Jsonl { path, .. } => format!("jsonl:{}", path.display()),
        DatasetSource::Synth(_) => "synth".to_string(),
    }
}

/// One trained model's score on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub task_id: String,
    pub setting: Setting,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task_id: String,
    pub pvi_mean: Option<f64>,
    pub stl: EvalReport,
    pub mtl: Option<EvalReport>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    AllTasks,
    RandomPairs,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::AllTasks => "all_tasks",
            BaselineKind::RandomPairs => "random_pairs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub groups: Vec<Vec<String>>,
    pub singletons: Vec<String>,
    pub comparisons: Vec<TaskComparison>,
    #[serde(skip)]
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub pvi: BTreeMap<String, PviResult>,
    pub plan: GroupingPlan,
    pub comparisons: Vec<TaskComparison>,
    pub baselines: Vec<BaselineResult>,
    pub stl_runs: Vec<SeedRun>,
    pub mtl_runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn comparison(&self, task_id: &str) -> Option<&TaskComparison> {
        self.comparisons.iter().find(|c| c.task_id == task_id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Artifacts are written here when set.
    pub out_dir: Option<PathBuf>,
    /// Directory relative dataset paths resolve against.
    pub base_dir: PathBuf,
    /// Worker threads per stage; results do not depend on it.
    pub jobs: usize,
}

/// Loaded and featurized tasks of one experiment.
pub struct Experiment {
    cfg: ExperimentConfig,
    datasets: Vec<TaskDataset>,
    tasks: Vec<EncodedTask>,
    inputs: Vec<InputRecord>,
    jobs: usize,
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path, jobs: usize) -> Result<Experiment> {
        cfg.validate()?;
        let datasets = parallel::map(jobs, &cfg.datasets, |s| load_source(s, base_dir))?;
        let sources: Vec<String> = cfg.datasets.iter().map(describe).collect();
        Experiment::build(cfg, datasets, sources, jobs)
    }

    pub fn from_datasets(cfg: &ExperimentConfig, datasets: Vec<TaskDataset>, jobs: usize) -> Result<Experiment> {
        cfg.validate()?;
        let sources = vec!["memory".to_string(); datasets.len()];
        Experiment::build(cfg, datasets, sources, jobs)
    }

    fn build(cfg: &ExperimentConfig, datasets: Vec<TaskDataset>, sources: Vec<String>, jobs: usize) -> Result<Experiment> {
        if datasets.is_empty() {
            return Err(Error::config("experiment lists no datasets"));
        }
        let mut seen = BTreeSet::new();
        for d in &datasets {
            let id = d.task_id();
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(Error::config(format!("task id `{id}` cannot name an artifact file")));
            }
            if !seen.insert(d.task_id().to_string()) {
                return Err(Error::config(format!("duplicate task id `{}`", d.task_id())));
            }
        }
        let inputs = datasets
            .iter()
            .zip(sources)
            .map(|(d, source)| InputRecord {
                task_id: d.task_id().to_string(),
                source,
                sha256: d.content_hash(),
            })
            .collect();
        let tasks = parallel::map(jobs, &datasets, |d| Ok(EncodedTask::new(d, &cfg.featurizer)))?;
        Ok(Experiment {
            cfg: cfg.clone(),
            datasets,
            tasks,
            inputs,
            jobs,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn datasets(&self) -> &[TaskDataset] {
        &self.datasets
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    pub fn inputs(&self) -> &[InputRecord] {
        &self.inputs
    }

    fn task(&self, id: &str) -> Result<&EncodedTask> {
        self.tasks
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    /// PVI models use the first seed and final-epoch parameters.
    pub fn pvi_train_config(&self) -> TrainConfig {
        TrainConfig {
            select_best_dev: false,
            ..self.cfg.train.with_seed(self.cfg.seeds[0])
        }
    }

    pub fn compute_pvi(&self) -> Result<BTreeMap<String, PviResult>> {
        let cfg = self.pvi_train_config();
        let results = parallel::map(self.jobs, &self.tasks, |t| {
            pvi::compute_pvi_encoded(t, &self.cfg.featurizer, &cfg, self.cfg.pvi_eval_split)
        })?;
        Ok(self.task_ids().into_iter().zip(results).collect())
    }

    pub fn plan(&self, pvi: &BTreeMap<String, PviResult>) -> Result<GroupingPlan> {
        let samples: BTreeMap<String, Vec<f64>> = pvi
            .iter()
            .map(|(k, v)| (k.clone(), v.summary.values.clone()))
            .collect();
        if samples.len() < 2 {
            return Err(Error::config("grouping needs at least 2 tasks"));
        }
        grouping::plan(&samples, self.cfg.max_group_size, &self.cfg.rule(), self.cfg.policy, self.jobs)
    }

    /// Trains one model per (group, seed) and scores every member task.
    /// Singleton groups are STL runs.
    pub fn train_groups(&self, groups: &[Vec<String>]) -> Result<Vec<SeedRun>> {
        Ok(self
            .train_group_models(groups)?
            .into_iter()
            .flat_map(|g| g.runs)
            .collect())
    }

    /// [`Experiment::train_groups`], keeping the models.
    pub fn train_group_models(&self, groups: &[Vec<String>]) -> Result<Vec<GroupModel>> {
        let mut jobs = Vec::new();
        for group in groups {
            let members: Vec<&EncodedTask> = group.iter().map(|id| self.task(id)).collect::<Result<_>>()?;
            for &seed in &self.cfg.seeds {
                jobs.push((group, members.clone(), seed));
            }
        }
        parallel::map(self.jobs, &jobs, |(group, members, seed)| {
            let model = train_encoded(members, &self.cfg.featurizer, &self.cfg.train.with_seed(*seed), InputMode::Conditional)?;
            let setting = setting_for(group);
            let runs = members
                .iter()
                .map(|t| {
                    let (accuracy, f1) = model.evaluate(t, self.cfg.score_split)?;
                    Ok(SeedRun {
                        task_id: t.task_id.clone(),
                        setting: setting.clone(),
                        seed: *seed,
                        accuracy,
                        f1,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroupModel {
                group: (*group).clone(),
                seed: *seed,
                model,
                runs,
            })
        })
    }

    pub fn run_stl(&self) -> Result<Vec<SeedRun>> {
        let singles: Vec<Vec<String>> = self.task_ids().into_iter().map(|t| vec![t]).collect();
        self.train_groups(&singles)
    }

    /// Groups tasks under `kind`, trains them, and compares against `stl`.
    pub fn run_baseline(&self, kind: BaselineKind, stl: &[SeedRun], pvi: Option<&BTreeMap<String, PviResult>>) -> Result<BaselineResult> {
        let ids = self.task_ids();
        let (groups, singletons) = match kind {
            BaselineKind::AllTasks => (vec![ids.clone()], Vec::new()),
            BaselineKind::RandomPairs => random_pairing(&ids, self.cfg.baselines.pairing_seed),
        };
        let runs = self.train_groups(&groups)?;
        let comparisons = compare_all(&ids, stl, &runs, &self.cfg.seeds, pvi)?;
        Ok(BaselineResult {
            kind,
            groups,
            singletons,
            comparisons,
            runs,
        })
    }
}

/// A model trained on one group with one seed, with its per-task scores.
#[derive(Debug, Clone)]
pub struct GroupModel {
    pub group: Vec<String>,
    pub seed: u64,
    pub model: TrainedModel,
    pub runs: Vec<SeedRun>,
}

/// STL for a single task, MTL otherwise.
pub fn setting_for(group: &[String]) -> Setting {
    if group.len() == 1 {
        Setting::Stl
    } else {
        Setting::Mtl(group.to_vec())
    }
}

pub fn report_for_group(task_id: &str, group: &[String], runs: &[SeedRun], seeds: &[u64]) -> Result<EvalReport> {
    report_for(task_id, &setting_for(group), runs, seeds)
}

/// Deterministic random perfect matching over the sorted ids; with an odd
/// count one task is left over.
pub fn random_pairing(task_ids: &[String], pairing_seed: u64) -> (Vec<Vec<String>>, Vec<String>) {
    let mut ids = task_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(pairing_seed));
    let mut pairs = Vec::new();
    let mut chunks = ids.chunks_exact(2);
    for c in &mut chunks {
        let mut pair = c.to_vec();
        pair.sort();
        pairs.push(pair);
    }
    let leftover = chunks.remainder().to_vec();
    pairs.sort();
    (pairs, leftover)
}

pub fn report_for(task_id: &str, setting: &Setting, runs: &[SeedRun], seeds: &[u64]) -> Result<EvalReport> {
    let per_seed: Vec<(f64, f64)> = seeds
        .iter()
        .map(|s| {
            runs.iter()
                .find(|r| r.task_id == task_id && &r.setting == setting && r.seed == *s)
                .map(|r| (r.accuracy, r.f1))
                .ok_or_else(|| Error::data(format!("missing run for `{task_id}` ({setting}) seed {s}")))
        })
        .collect::<Result<_>>()?;
    EvalReport::from_runs(task_id, setting.clone(), seeds, &per_seed)
}

fn compare_all(
    task_ids: &[String],
    stl: &[SeedRun],
    grouped: &[SeedRun],
    seeds: &[u64],
    pvi: Option<&BTreeMap<String, PviResult>>,
) -> Result<Vec<TaskComparison>> {
    task_ids
        .iter()
        .map(|id| {
            let stl_report = report_for(id, &Setting::Stl, stl, seeds)?;
            let setting = grouped.iter().find(|r| &r.task_id == id).map(|r| r.setting.clone());
            let mtl = setting.map(|s| report_for(id, &s, grouped, seeds)).transpose()?;
            let verdict = mtl.as_ref().map(|m| eval::compare(&stl_report, m)).transpose()?;
            Ok(TaskComparison {
                task_id: id.clone(),
                pvi_mean: pvi.and_then(|p| p.get(id)).map(|r| r.summary.mean),
                stl: stl_report,
                mtl,
                verdict,
            })
        })
        .collect()
}

/// Collects a stage's files as `.partial` and renames them on commit.
struct Artifacts {
    root: Option<PathBuf>,
    pending: Vec<PathBuf>,
}

impl Artifacts {
    fn new(root: Option<PathBuf>) -> Result<Self> {
        if let Some(r) = &root {
            std::fs::create_dir_all(r).map_err(|e| Error::io(r, e))?;
        }
        Ok(Artifacts { root, pending: Vec::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let target = root.join(rel);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let partial = partial_path(&target);
        std::fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
        self.pending.push(target);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::data(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn commit(&mut self) -> Result<()> {
        for target in self.pending.drain(..) {
            let partial = partial_path(&target);
            std::fs::rename(&partial, &target).map_err(|e| Error::io(&partial, e))?;
        }
        Ok(())
    }
}

fn partial_path(target: &Path) -> PathBuf {
    let mut name = target.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    target.with_file_name(name)
}

#[derive(Serialize)]
struct FrozenConfig<'a> {
    format: &'static str,
    version: u32,
    config: &'a ExperimentConfig,
    config_sha256: String,
    inputs: &'a [InputRecord],
}

#[derive(Serialize)]
struct PviSummaryFile<'a> {
    task_id: &'a str,
    split: Split,
    n: usize,
    mean: f64,
    std: f64,
    config_sha256: String,
}

#[derive(Serialize)]
struct GroupingFile<'a> {
    alpha: f64,
    effective_alpha: f64,
    flavor: TestFlavor,
    max_group_size: usize,
    #[serde(flatten)]
    plan: &'a GroupingPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format: String,
    pub version: u32,
    pub config_sha256: String,
    pub pvi: Vec<PviSummary>,
    pub groups: Vec<Vec<String>>,
    pub singletons: Vec<String>,
    pub policy: Policy,
    pub tasks: Vec<TaskComparison>,
    pub baselines: Vec<BaselineResult>,
}

pub const RUNS_CSV_HEADER: &str = "task_id,setting,group,seed,accuracy,macro_f1";
pub const BASELINES_CSV_HEADER: &str = "baseline,task_id,setting,group,seed,accuracy,macro_f1";

fn group_column(setting: &Setting) -> String {
    match setting {
        Setting::Stl => String::new(),
        Setting::Mtl(g) => g.join("+"),
    }
}

fn setting_column(setting: &Setting) -> &'static str {
    match setting {
        Setting::Stl => "stl",
        Setting::Mtl(_) => "mtl",
    }
}

fn runs_csv(runs: &[SeedRun], baseline: Option<BaselineKind>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = if baseline.is_some() { BASELINES_CSV_HEADER } else { RUNS_CSV_HEADER };
    let csv_err = |e: csv::Error| Error::data(e.to_string());
    w.write_record(header.split(',')).map_err(csv_err)?;
    for r in runs {
        let mut row = Vec::with_capacity(7);
        if let Some(kind) = baseline {
            row.push(kind.as_str().to_string());
        }
        row.extend([
            r.task_id.clone(),
            setting_column(&r.setting).to_string(),
            group_column(&r.setting),
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.f1.to_string(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::data(e.to_string()))
}

fn pvi_csv(result: &PviResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    pvi::write_csv(&result.records, &mut buf)?;
    Ok(buf)
}

/// Runs every stage, writing artifacts under `opts.out_dir` when set.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    let mut art = Artifacts::new(opts.out_dir.clone()).stage("resolve")?;
    let exp = Experiment::prepare(cfg, &opts.base_dir, opts.jobs).stage("resolve")?;
    if exp.tasks.len() < 2 {
        return Err(Error::config("an experiment needs at least 2 tasks").in_stage("resolve"));
    }
    run_prepared(&exp, &mut art)
}

/// [`run_experiment`] on already loaded tasks.
pub fn run_prepared_experiment(exp: &Experiment, out_dir: Option<PathBuf>) -> Result<ExperimentResult> {
    let mut art = Artifacts::new(out_dir).stage("resolve")?;
    run_prepared(exp, &mut art)
}

fn run_prepared(exp: &Experiment, art: &mut Artifacts) -> Result<ExperimentResult> {
    let cfg = &exp.cfg;
    let config_hash = cfg.hash();
    art.write_json(
        "config.json",
        &FrozenConfig {
            format: RUN_FORMAT,
            version: RUN_FORMAT_VERSION,
            config: cfg,
            config_sha256: config_hash.clone(),
            inputs: &exp.inputs,
        },
    )
    .and_then(|_| art.commit())
    .stage("resolve")?;

    let pvi = exp.compute_pvi().stage("pvi")?;
    let pvi_cfg = exp.pvi_train_config();
    (|| {
        for (task, result) in &pvi {
            art.write(&format!("pvi/{task}.csv"), &pvi_csv(result)?)?;
            let input = exp.inputs.iter().find(|i| &i.task_id == task).map(|i| i.sha256.as_str());
            let hash = sha256_json(&(&cfg.featurizer, &pvi_cfg, cfg.pvi_eval_split, input));
            art.write_json(
                &format!("pvi/{task}.summary.json"),
                &PviSummaryFile {
                    task_id: task,
                    split: cfg.pvi_eval_split,
                    n: result.summary.n,
                    mean: result.summary.mean,
                    std: result.summary.std,
                    config_sha256: hash,
                },
            )?;
        }
        art.commit()
    })()
    .stage("pvi")?;

    let plan = exp.plan(&pvi).stage("group")?;
    let candidates = plan.audit.len();
    (|| {
        art.write_json(
            "grouping.json",
            &GroupingFile {
                alpha: cfg.alpha,
                effective_alpha: cfg.rule().effective_alpha(candidates),
                flavor: cfg.flavor,
                max_group_size: cfg.max_group_size,
                plan: &plan,
            },
        )?;
        art.write("grouping.txt", grouping::render_table(&plan).as_bytes())?;
        art.commit()
    })()
    .stage("group")?;

    let stl_runs = exp.run_stl().stage("stl")?;
    let mtl_runs = exp.train_groups(&plan.groups).stage("mtl")?;
    let comparisons = compare_all(&exp.task_ids(), &stl_runs, &mtl_runs, &cfg.seeds, Some(&pvi)).stage("mtl")?;

    let mut baselines = Vec::new();
    if cfg.baselines.all_tasks {
        baselines.push(exp.run_baseline(BaselineKind::AllTasks, &stl_runs, Some(&pvi)).stage("baselines")?);
    }
    if cfg.baselines.random_pairs {
        baselines.push(exp.run_baseline(BaselineKind::RandomPairs, &stl_runs, Some(&pvi)).stage("baselines")?);
    }

    let result = ExperimentResult {
        pvi,
        plan,
        comparisons,
        baselines,
        stl_runs,
        mtl_runs,
    };
    (|| {
        art.write("reports/stl.csv", &runs_csv(&result.stl_runs, None)?)?;
        art.write("reports/mtl.csv", &runs_csv(&result.mtl_runs, None)?)?;
        let mut baseline_rows = Vec::new();
        for b in &result.baselines {
            baseline_rows.extend(runs_csv(&b.runs, Some(b.kind))?);
        }
        art.write("reports/baselines.csv", &merge_csv(&baseline_rows))?;
        art.write_json("summary.json", &summary(&result, &config_hash))?;
        art.commit()
    })()
    .stage("report")?;
    Ok(result)
}

/// Concatenated CSV blobs share one header line; an empty input still gets it.
fn merge_csv(blobs: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(blobs);
    let mut out = String::from(BASELINES_CSV_HEADER);
    out.push('\n');
    for line in text.lines().filter(|l| *l != BASELINES_CSV_HEADER) {
        out.push_str(line);
        out.push('\n');
    }
    out.into_bytes()
}

pub fn summary(result: &ExperimentResult, config_hash: &str) -> Summary {
    Summary {
        format: RUN_FORMAT.to_string(),
        version: RUN_FORMAT_VERSION,
        config_sha256: config_hash.to_string(),
        pvi: result.pvi.values().map(|r| r.summary.clone()).collect(),
        groups: result.plan.groups.clone(),
        singletons: result.plan.singletons.clone(),
        policy: result.plan.policy,
        tasks: result.comparisons.clone(),
        baselines: result.baselines.clone(),
    }
}

/// One group containing every task, compared against STL.
pub fn run_baseline_all_tasks(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<BaselineResult> {
    let exp = Experiment::prepare(cfg, &opts.base_dir, opts.jobs).stage("resolve")?;
    let stl = exp.run_stl().stage("stl")?;
    exp.run_baseline(BaselineKind::AllTasks, &stl, None).stage("baselines")
}

/// Random disjoint pairs drawn from `pairing_seed`, compared against STL.
pub fn run_baseline_random_pairs(cfg: &ExperimentConfig, pairing_seed: u64, opts: &RunOptions) -> Result<BaselineResult> {
    let mut cfg = cfg.clone();
    cfg.baselines.pairing_seed = pairing_seed;
    let exp = Experiment::prepare(&cfg, &opts.base_dir, opts.jobs).stage("resolve")?;
    let stl = exp.run_stl().stage("stl")?;
    exp.run_baseline(BaselineKind::RandomPairs, &stl, None).stage("baselines")
}
