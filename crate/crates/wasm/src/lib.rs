//! Browser bindings. Every export takes a JSON request string and returns a
//! JSON response string; failures come back as `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pvig::data::Split;
use pvig::eval;
use pvig::features::FeaturizerConfig;
use pvig::grouping::GroupingDecision;
use pvig::model::TrainConfig;
use pvig::pvi::compute_pvi;
use pvig::stats::{t_test, TestFlavor, TestResult};
use pvig::synth::{generate_task, optimal_mean_pvi, SynthTaskSpec};

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn parse<'a, T: Deserialize<'a>>(request: &'a str) -> Result<T, String> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

fn demo_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default().with_seed(seed)
    }
}

fn dev_pvi(spec: &SynthTaskSpec, seed: u64, epochs: usize) -> Result<Vec<f64>, String> {
    let ds = generate_task(spec).map_err(|e| e.to_string())?;
    let res = compute_pvi(&ds, &FeaturizerConfig::default(), &demo_train(seed, epochs), Split::Dev).map_err(|e| e.to_string())?;
    Ok(res.summary.values)
}

fn default_epochs() -> usize {
    10
}

#[derive(Deserialize)]
struct HistogramRequest {
    noise: f64,
    n: usize,
    #[serde(default = "two")]
    classes: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default = "default_bins")]
    bins: usize,
}

fn two() -> usize {
    2
}

fn default_bins() -> usize {
    24
}

#[derive(Serialize)]
struct HistogramResponse {
    mean: f64,
    optimal_mean: f64,
    n: usize,
    lo: f64,
    hi: f64,
    counts: Vec<usize>,
}

fn histogram(values: &[f64], bins: usize) -> (f64, f64, Vec<usize>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    (lo, hi, counts)
}

/// Trains the conditional and null models on a synthetic task and bins the
/// dev-split PVI values.
#[wasm_bindgen]
pub fn pvi_histogram(request: &str) -> String {
    respond((|| {
        let req: HistogramRequest = parse(request)?;
        if req.bins == 0 {
            return Err("bins must be positive".to_string());
        }
        let spec = SynthTaskSpec::new("demo", req.classes, req.noise, req.n).with_seeds(req.seed, req.seed + 1);
        let values = dev_pvi(&spec, req.seed, req.epochs)?;
        let (lo, hi, counts) = histogram(&values, req.bins);
        Ok(HistogramResponse {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            optimal_mean: optimal_mean_pvi(&spec),
            n: values.len(),
            lo,
            hi,
            counts,
        })
    })())
}

#[derive(Deserialize)]
struct PairRequest {
    noise_a: f64,
    noise_b: f64,
    n: usize,
    /// Both tasks share one concept, i.e. are twins up to noise and sample.
    #[serde(default)]
    shared_concept: bool,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_epochs")]
    epochs: usize,
}

fn default_alpha() -> f64 {
    0.01
}

#[derive(Serialize)]
struct PairResponse {
    mean_a: f64,
    mean_b: f64,
    test: TestResult,
    similar: bool,
}

/// Welch test between the PVI samples of two synthetic tasks.
#[wasm_bindgen]
pub fn pair_similarity(request: &str) -> String {
    respond((|| {
        let req: PairRequest = parse(request)?;
        let concept_b = if req.shared_concept { req.seed } else { req.seed + 1000 };
        let a = SynthTaskSpec::new("a", 2, req.noise_a, req.n).with_seeds(req.seed, 2 * req.seed + 1);
        let b = SynthTaskSpec::new("b", 2, req.noise_b, req.n).with_seeds(concept_b, 2 * req.seed + 2);
        let (pa, pb) = (dev_pvi(&a, req.seed, req.epochs)?, dev_pvi(&b, req.seed, req.epochs)?);
        let test = t_test(&pa, &pb, TestFlavor::Welch).map_err(|e| e.to_string())?;
        let decision = GroupingDecision::from_test(&["a", "b"], test, req.alpha);
        Ok(PairResponse {
            mean_a: pvig::stats::mean(&pa),
            mean_b: pvig::stats::mean(&pb),
            test,
            similar: decision.similar,
        })
    })())
}

#[derive(Deserialize)]
struct CiRequest {
    values: Vec<f64>,
}

#[derive(Serialize)]
struct CiResponse {
    mean: f64,
    halfwidth: f64,
    lower: f64,
    upper: f64,
    t_crit: f64,
}

/// Mean and 95% Student-t interval over per-seed scores.
#[wasm_bindgen]
pub fn seed_ci(request: &str) -> String {
    respond((|| {
        let req: CiRequest = parse(request)?;
        let ci = eval::mean_ci(&req.values).map_err(|e| e.to_string())?;
        Ok(CiResponse {
            mean: ci.mean,
            halfwidth: ci.halfwidth,
            lower: ci.lower(),
            upper: ci.upper(),
            t_crit: eval::t_crit(req.values.len()).map_err(|e| e.to_string())?,
        })
    })())
}
