//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pvig::data::{Instance, Split, TaskDataset};
use pvig::eval::{aggregate_seeds, t_crit, Verdict};
use pvig::features::{FeatureVector, FeaturizerConfig};
use pvig::grouping::{assess_group, select_groupings, GroupingDecision, Policy};
use pvig::model::{grad_check, init_params, train, Batch, InputMode, TrainConfig, IGNORE_LABEL};
use pvig::pipeline::{BaselineKind, DatasetSource, Experiment, ExperimentConfig};
use pvig::pvi::compute_pvi;
use pvig::stats::{one_way_anova, t_test, TestFlavor, TestResult};
use pvig::synth::{generate_task, SynthTaskSpec};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    check(secs < limit_s, format!("{detail}; {secs:.1}s of {limit_s:.0}s"))
}

fn mean_pvi(spec: &SynthTaskSpec, seed: u64) -> f64 {
    let ds = generate_task(spec).unwrap();
    let cfg = TrainConfig::default().with_seed(seed);
    compute_pvi(&ds, &FeaturizerConfig::default(), &cfg, Split::Dev)
        .unwrap()
        .summary
        .mean
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let dim = rng.random_range(1..=64);
        let hidden = rng.random_range(1..=16);
        let n_tasks = rng.random_range(1..=3);
        let tasks: Vec<(String, usize)> = (0..n_tasks)
            .map(|k| (format!("t{k}"), rng.random_range(2..=4)))
            .collect();
        let params = init_params(dim, hidden, &tasks, draw, 0.5).unwrap();
        let rows = rng.random_range(1..=8);
        let inputs: Vec<FeatureVector> = (0..rows)
            .map(|_| {
                FeatureVector::from_values((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect();
        // Each row belongs to exactly one task; the other heads see IGNORE_LABEL.
        let owner: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n_tasks)).collect();
        let mut labels = BTreeMap::new();
        for (k, (task, classes)) in tasks.iter().enumerate() {
            let col: Vec<i64> = owner
                .iter()
                .map(|&o| {
                    if o == k {
                        rng.random_range(0..*classes as i64)
                    } else {
                        IGNORE_LABEL
                    }
                })
                .collect();
            labels.insert(task.clone(), col);
        }
        let batch = Batch {
            inputs: inputs.iter().collect(),
            labels,
        };
        worst = worst.max(grad_check(&params, &batch, 1e-5, 1e-12).unwrap());
    }
    let detail = format!("max relative error {worst:.2e} over 20 draws");
    check(worst < 1e-4, detail.clone())?;
    within_budget(start.elapsed(), 30.0, detail)
}

fn null_marginal() -> Outcome {
    let start = Instant::now();
    let inst = |i: usize, label: usize| Instance {
        id: format!("n{i}"),
        text: format!("w{} w{}", i % 97, i % 13),
        label_id: label,
        task_id: "skew".into(),
    };
    // Exactly 70/30 in every split of n = 2000.
    let mut next = 0;
    let mut part = |size: usize| {
        let out: Vec<Instance> = (0..size)
            .map(|j| inst(next + j, usize::from(j * 10 >= size * 7)))
            .collect();
        next += size;
        out
    };
    let (tr, dv, te) = (part(1200), part(400), part(400));
    let ds = TaskDataset::new("skew", vec!["a".into(), "b".into()], tr, dv, te).unwrap();
    let feat = FeaturizerConfig::default();
    let cfg = TrainConfig::default().with_seed(42);
    let null = train(&[&ds], &feat, &cfg, InputMode::Null).unwrap();
    let p = null.predict_text_proba("skew", "anything at all").unwrap();
    let tv = 0.5 * ((p[0] - 0.7).abs() + (p[1] - 0.3).abs());
    let res = compute_pvi(&ds, &feat, &cfg, Split::Dev).unwrap();
    let nll = -res.records.iter().map(|r| r.log2_null).sum::<f64>() / res.records.len() as f64;
    // H(0.7) = -0.7 log2 0.7 - 0.3 log2 0.3.
    let h = 0.881_290_899_230_692_7;
    let detail = format!("TV {tv:.4}, mean -log2 null {nll:.4} vs {h:.4}");
    check(tv <= 0.01 && (nll - h).abs() <= 0.05, detail.clone())?;
    within_budget(start.elapsed(), 10.0, detail)
}

fn pvi_closed_form() -> Outcome {
    let start = Instant::now();
    let base = SynthTaskSpec::new("cf", 2, 0.1, 4000).with_seeds(31, 32);
    let noisy = mean_pvi(&base, 42);
    let clean = mean_pvi(&SynthTaskSpec { noise_rate: 0.0, ..base.clone() }, 42);
    let shuffled = mean_pvi(
        &SynthTaskSpec {
            noise_rate: 0.0,
            independent_labels: true,
            ..base.clone()
        },
        42,
    );
    let detail = format!("eta 0.1: {noisy:.4} vs 0.5310, eta 0: {clean:.4} vs 1, shuffled: {shuffled:.4} vs 0");
    check(
        (noisy - 0.531_004_406_410_718_8).abs() <= 0.05 && (clean - 1.0).abs() <= 0.1 && shuffled.abs() <= 0.05,
        detail.clone(),
    )?;
    within_budget(start.elapsed(), 60.0, detail)
}

fn pvi_monotonicity() -> Outcome {
    let start = Instant::now();
    let means: Vec<f64> = [0.0, 0.1, 0.2, 0.3]
        .iter()
        .map(|&eta| {
            (0..3u64)
                .map(|s| mean_pvi(&SynthTaskSpec::new("m", 2, eta, 2000).with_seeds(40 + s, 50 + s), 42 + 10 * s))
                .sum::<f64>()
                / 3.0
        })
        .collect();
    let detail = format!("3-seed means {means:.3?}");
    check(means.windows(2).all(|w| w[0] > w[1]), detail.clone())?;
    within_budget(start.elapsed(), 180.0, detail)
}

fn statistics_oracle() -> Outcome {
    let start = Instant::now();
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let w = t_test(&a, &b, TestFlavor::Welch).unwrap();
    // Two-sided p of |t| = 1 at 8 df is I_{8/9}(4, 1/2).
    let p_exact = 0.346_593_507_087_334_13;
    let welch_ok = (w.statistic + 1.0).abs() < 1e-12 && (w.df - 8.0).abs() < 1e-9 && (w.p_value - p_exact).abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ft: f64 = 0.0;
    for _ in 0..50 {
        let na = rng.random_range(2..30);
        let nb = rng.random_range(2..30);
        let shift: f64 = rng.random_range(-2.0..2.0);
        let x: Vec<f64> = (0..na).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..nb).map(|_| rng.random_range(-3.0..3.0) + shift).collect();
        let t = t_test(&x, &y, TestFlavor::StudentPooled).unwrap().statistic;
        let f = one_way_anova(&[&x, &y]).unwrap().statistic;
        worst_ft = worst_ft.max((t * t - f).abs() / f.abs().max(1.0));
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 10_000;
    let rejections = (0..trials)
        .filter(|_| {
            let x: Vec<f64> = (0..20).map(|_| normal.sample(&mut rng)).collect();
            let y: Vec<f64> = (0..20).map(|_| normal.sample(&mut rng)).collect();
            t_test(&x, &y, TestFlavor::Welch).unwrap().p_value < 0.05
        })
        .count();
    let rate = rejections as f64 / trials as f64;

    let detail = format!(
        "welch t {:.4} df {:.4} p {:.7}, max |t^2 - F| {worst_ft:.1e}, null rejection rate {rate:.4}",
        w.statistic, w.df, w.p_value
    );
    check(welch_ok && worst_ft < 1e-10 && (0.045..=0.056).contains(&rate), detail.clone())?;
    within_budget(start.elapsed(), 60.0, detail)
}

fn reported(statistic: f64, p_value: f64, flavor: TestFlavor) -> TestResult {
    TestResult {
        statistic,
        df: f64::NAN,
        df2: None,
        p_value,
        flavor,
    }
}

fn table_one() -> Outcome {
    let start = Instant::now();
    let pairs: [(&str, &str, f64, f64); 13] = [
        ("HealthAdvice", "Causal", 1.398, 0.162),
        ("Causal", "CB", 2.411, 0.016),
        ("BoolQ", "RTE", 1.775, 0.076),
        ("CB", "COPA", 1.328, 0.185),
        ("CB", "CoLA", 1.237, 0.216),
        ("CB", "SST2", -1.660, 0.097),
        ("WiC", "COPA", -2.358, 0.019),
        ("COPA", "CoLA", -0.072, 0.943),
        ("THYMENeg", "SeedNeg", 1.680, 0.093),
        ("THYMEMod", "SeedNeg", -1.740, 0.082),
        ("THYMEMod", "StratNeg", 0.585, 0.559),
        ("SeedNeg", "StratNeg", 2.546, 0.011),
        ("SeedUncert", "StratUncert", 0.380, 0.704),
    ];
    let triples: [([&str; 3], f64, f64); 3] = [
        (["CB", "CoLA", "COPA"], 0.813, 0.444),
        (["THYMEMod", "SeedUncert", "StratNeg"], 4.330, 0.013),
        (["THYMEMod", "SeedNeg", "StratNeg"], 1.801, 0.163),
    ];
    let mut decisions: Vec<GroupingDecision> = pairs
        .iter()
        .map(|&(a, b, t, p)| GroupingDecision::from_test(&[a, b], reported(t, p, TestFlavor::Welch), 0.01))
        .collect();
    decisions.extend(
        triples
            .iter()
            .map(|(tasks, f, p)| GroupingDecision::from_test(tasks, reported(*f, *p, TestFlavor::Anova), 0.01)),
    );
    // Every row of both tables was reported as similar.
    let all_similar = decisions.iter().all(|d| d.similar);
    let boundary = |names: &[&str]| {
        let mut key: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        key.sort();
        decisions.iter().any(|d| d.tasks == key && d.similar)
    };
    let boundaries = boundary(&["SeedNeg", "StratNeg"]) && boundary(&["THYMEMod", "SeedUncert", "StratNeg"]);

    let plan = select_groupings(&decisions, Policy::PaperLargerT);
    let cb_group = plan.group_of("CB").map(|g| g.to_vec()).unwrap_or_default();
    let cb_causal = cb_group.iter().any(|t| t == "Causal");
    let detail = format!(
        "{} of {} rows similar, boundary rows similar: {boundaries}, CB grouped with {cb_group:?}",
        decisions.iter().filter(|d| d.similar).count(),
        decisions.len()
    );
    check(all_similar && boundaries && cb_causal, detail.clone())?;
    within_budget(start.elapsed(), 1.0, detail)
}

fn pair_is_similar(a: &SynthTaskSpec, b: &SynthTaskSpec, seed: u64) -> bool {
    let feat = FeaturizerConfig::default();
    let cfg = TrainConfig::default().with_seed(seed);
    let mut pvi = BTreeMap::new();
    for spec in [a, b] {
        let ds = generate_task(spec).unwrap();
        let res = compute_pvi(&ds, &feat, &cfg, Split::Dev).unwrap();
        pvi.insert(spec.task_id.clone(), res.summary.values);
    }
    let ids = [a.task_id.clone(), b.task_id.clone()];
    assess_group(&pvi, &ids, 0.01, TestFlavor::Welch).unwrap().similar
}

fn grouping_behavior() -> Outcome {
    let start = Instant::now();
    let mut twins_similar = 0;
    let mut unrelated_different = 0;
    for r in 0..20u64 {
        let seed = 42 + r;
        let twin_a = SynthTaskSpec::new("twin_a", 2, 0.1, 2000).with_seeds(1000 + r, 3 * r + 1);
        let twin_b = SynthTaskSpec::new("twin_b", 2, 0.1, 2000).with_seeds(1000 + r, 3 * r + 2);
        twins_similar += usize::from(pair_is_similar(&twin_a, &twin_b, seed));
        let clean = SynthTaskSpec::new("clean", 2, 0.0, 2000).with_seeds(2000 + r, 5 * r + 1);
        let noisy = SynthTaskSpec::new("noisy", 2, 0.4, 2000).with_seeds(3000 + r, 5 * r + 2);
        unrelated_different += usize::from(!pair_is_similar(&clean, &noisy, seed));
    }
    let detail = format!("twins similar {twins_similar}/20, eta 0 vs 0.4 different {unrelated_different}/20");
    check(twins_similar >= 16 && unrelated_different >= 16, detail.clone())?;
    within_budget(start.elapsed(), 600.0, detail)
}

fn synth_config(specs: Vec<SynthTaskSpec>) -> (ExperimentConfig, Vec<TaskDataset>) {
    let datasets = specs.iter().map(|s| generate_task(s).unwrap()).collect();
    let cfg = ExperimentConfig {
        datasets: specs.into_iter().map(DatasetSource::Synth).collect(),
        ..Default::default()
    };
    (cfg, datasets)
}

fn transfer_direction() -> Outcome {
    let start = Instant::now();

    let (cfg, datasets) = synth_config(vec![
        SynthTaskSpec::new("twin_a", 2, 0.1, 2000).with_seeds(7, 1),
        SynthTaskSpec::new("twin_b", 2, 0.1, 2000).with_seeds(7, 2),
    ]);
    let exp = Experiment::from_datasets(&cfg, datasets, 1).unwrap();
    let stl = exp.run_stl().unwrap();
    let twins = exp.run_baseline(BaselineKind::AllTasks, &stl, None).unwrap();
    let mut twin_ok = true;
    let mut twin_text = Vec::new();
    for c in &twins.comparisons {
        let mtl = c.mtl.as_ref().unwrap();
        let verdict = c.verdict.unwrap();
        twin_ok &= mtl.f1.mean >= c.stl.f1.mean - 0.01 && verdict != Verdict::StlBetter;
        twin_text.push(format!("{} stl {} mtl {} {verdict}", c.task_id, c.stl.f1, mtl.f1));
    }

    // A two-unit shared encoder leaves too little capacity for four tasks.
    let mut cfg4 = ExperimentConfig::default();
    cfg4.featurizer.dim = 64;
    cfg4.train.hidden = 2;
    let specs: Vec<SynthTaskSpec> = [0.0, 0.1, 0.2, 0.4]
        .iter()
        .enumerate()
        .map(|(i, &eta)| SynthTaskSpec::new(format!("t{i}"), 2, eta, 1000).with_seeds(100 + i as u64, 200 + i as u64))
        .collect();
    let (base, datasets) = synth_config(specs);
    cfg4.datasets = base.datasets;
    let exp = Experiment::from_datasets(&cfg4, datasets, 1).unwrap();
    let stl = exp.run_stl().unwrap();
    let mixed = exp.run_baseline(BaselineKind::AllTasks, &stl, None).unwrap();
    let negative: Vec<String> = mixed
        .comparisons
        .iter()
        .filter(|c| c.verdict == Some(Verdict::StlBetter))
        .map(|c| format!("{} stl {} mtl {}", c.task_id, c.stl.f1, c.mtl.as_ref().unwrap().f1))
        .collect();

    let detail = format!(
        "twins [{}]; mixed all_tasks stl_better [{}]",
        twin_text.join(", "),
        negative.join(", ")
    );
    check(twin_ok && !negative.is_empty(), detail.clone())?;
    within_budget(start.elapsed(), 600.0, detail)
}

fn ci_protocol() -> Outcome {
    let runs: Vec<(f64, f64)> = (1..=5).map(|v| (v as f64, v as f64)).collect();
    let agg = aggregate_seeds(&runs).unwrap();
    let t5 = t_crit(5).unwrap();
    // sd of 1..5 is sqrt(2.5); 2.7764451 * sqrt(2.5 / 5) = 1.96324.
    let detail = format!("mean {:.4}, halfwidth {:.5}, t crit {t5:.6}", agg.f1.mean, agg.f1.halfwidth);
    check(
        (agg.f1.mean - 3.0).abs() < 1e-12 && (agg.f1.halfwidth - 1.9630).abs() <= 1e-3 && (t5 - 2.776).abs() <= 1e-3,
        detail,
    )
}

fn collect_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut add = |rel: String| {
        let bytes = std::fs::read(dir.join(&rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        out.insert(rel, bytes);
    };
    add("grouping.json".into());
    for sub in ["pvi", "reports"] {
        let mut names: Vec<String> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        for n in names {
            add(format!("{sub}/{n}"));
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "datasets": [
            {"kind": "synth", "task_id": "twin_a", "noise_rate": 0.1, "n": 600, "concept_seed": 7, "sample_seed": 1},
            {"kind": "synth", "task_id": "twin_b", "noise_rate": 0.1, "n": 600, "concept_seed": 7, "sample_seed": 2},
            {"kind": "synth", "task_id": "noisy", "noise_rate": 0.4, "n": 600, "concept_seed": 13, "sample_seed": 4}
        ],
        "seeds": [1, 2],
        "train": {"epochs": 3},
        "baselines": {"all_tasks": true, "random_pairs": true, "pairing_seed": 5}
    });
    let config_path = tmp.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out = tmp.path().join(format!("out-{jobs}"));
        let status = Command::new(env!("CARGO_BIN_EXE_pvig"))
            .arg("run")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(format!(
                "run --jobs {jobs} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        outputs.push(collect_outputs(&out));
    }
    let differing: Vec<&String> = outputs[0]
        .iter()
        .filter(|(k, v)| outputs[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    check(
        differing.is_empty() && outputs[0].len() == outputs[1].len(),
        format!("{} files compared, differing {differing:?}", outputs[0].len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("null-model marginal", null_marginal),
        ("PVI closed form", pvi_closed_form),
        ("PVI monotonicity", pvi_monotonicity),
        ("statistics oracle", statistics_oracle),
        ("Table 1 decisions", table_one),
        ("end-to-end grouping", grouping_behavior),
        ("transfer direction", transfer_direction),
        ("CI protocol", ci_protocol),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
