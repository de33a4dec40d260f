use std::collections::BTreeSet;

use pvig::eval::Setting;
use pvig::pipeline::{run_experiment, DatasetSource, ExperimentConfig, RunOptions, SeedRun};
use pvig::synth::SynthTaskSpec;

fn config(seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        datasets: vec![
            DatasetSource::Synth(SynthTaskSpec::new("twin_a", 2, 0.1, 400).with_seeds(7, 1)),
            DatasetSource::Synth(SynthTaskSpec::new("twin_b", 2, 0.1, 400).with_seeds(7, 2)),
            DatasetSource::Synth(SynthTaskSpec::new("noisy", 2, 0.4, 400).with_seeds(9, 3)),
        ],
        seeds,
        ..Default::default()
    };
    cfg.featurizer.dim = 256;
    cfg.train.epochs = 3;
    cfg.train.hidden = 8;
    cfg
}

fn opts(out: Option<std::path::PathBuf>) -> RunOptions {
    RunOptions {
        out_dir: out,
        jobs: 1,
        ..Default::default()
    }
}

#[test]
fn single_seed_is_rejected() {
    let err = run_experiment(&config(vec![5]), &opts(None)).unwrap_err();
    assert!(err.to_string().contains("at least 2 seeds"), "{err}");
    let err = run_experiment(&config(vec![5, 5]), &opts(None)).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn reruns_write_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(vec![1, 2]);
    for name in ["a", "b"] {
        run_experiment(&cfg, &opts(Some(tmp.path().join(name)))).unwrap();
    }
    for file in ["pvi/twin_a.csv", "pvi/noisy.csv", "grouping.json", "reports/stl.csv", "reports/mtl.csv", "summary.json"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let leftovers: Vec<_> = walk(&tmp.path().join("a")).into_iter().filter(|p| p.ends_with(".partial")).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

fn walk(dir: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path.to_string_lossy().into_owned());
        }
    }
    out
}

#[test]
fn mtl_models_follow_the_plan() {
    let result = run_experiment(&config(vec![1, 2]), &opts(None)).unwrap();
    let trained: BTreeSet<Vec<String>> = result
        .mtl_runs
        .iter()
        .map(|r| match &r.setting {
            Setting::Mtl(g) => g.clone(),
            Setting::Stl => panic!("stl run among mtl runs"),
        })
        .collect();
    let planned: BTreeSet<Vec<String>> = result.plan.groups.iter().cloned().collect();
    assert_eq!(trained, planned);

    let stl_tasks: BTreeSet<&str> = result.stl_runs.iter().map(|r| r.task_id.as_str()).collect();
    assert_eq!(stl_tasks.len(), 3);
    assert_eq!(result.comparisons.len(), 3);
    for c in &result.comparisons {
        assert_eq!(c.mtl.is_some(), result.plan.group_of(&c.task_id).is_some());
    }
}

#[test]
fn seed_rows_do_not_depend_on_seed_order() {
    let forward = run_experiment(&config(vec![1, 2]), &opts(None)).unwrap();
    let reversed = run_experiment(&config(vec![2, 1]), &opts(None)).unwrap();
    let key = |r: &SeedRun| (r.task_id.clone(), r.seed);
    let mut a: Vec<&SeedRun> = forward.stl_runs.iter().collect();
    let mut b: Vec<&SeedRun> = reversed.stl_runs.iter().collect();
    a.sort_by_key(|r| key(r));
    b.sort_by_key(|r| key(r));
    assert_eq!(a, b);
}
