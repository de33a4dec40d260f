//! Accuracy, macro-F1, multi-seed confidence intervals, and STL/MTL verdicts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::config(format!(
            "prediction/gold length mismatch ({} vs {})",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::config("accuracy of an empty prediction list"));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    /// Every class of the vocabulary counts, empty ones as F1 = 0.
    #[default]
    AllClasses,
    /// Only classes occurring in the predictions or the gold labels.
    PresentClasses,
}

fn per_class_f1(pred: &[usize], gold: &[usize], classes: usize) -> Result<Vec<(f64, bool)>> {
    if pred.len() != gold.len() {
        return Err(Error::config(format!(
            "prediction/gold length mismatch ({} vs {})",
            pred.len(),
            gold.len()
        )));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &g) in pred.iter().zip(gold) {
        if p >= classes || g >= classes {
            return Err(Error::config(format!(
                "label {} out of range for {classes} classes",
                p.max(g)
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            let present = tp[c] + fp[c] + fneg[c] > 0;
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            // 2PR / (P + R) == 2TP / (2TP + FP + FN); zero when undefined.
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 };
            (f1, present)
        })
        .collect())
}

pub fn macro_f1(pred: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    macro_f1_with(pred, gold, classes, F1Average::AllClasses)
}

pub fn macro_f1_with(pred: &[usize], gold: &[usize], classes: usize, average: F1Average) -> Result<f64> {
    let scores = per_class_f1(pred, gold, classes)?;
    let kept: Vec<f64> = scores
        .iter()
        .filter(|(_, present)| average == F1Average::AllClasses || *present)
        .map(|(f, _)| *f)
        .collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Mean with a 95% Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub halfwidth: f64,
}

impl MeanCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.halfwidth
    }
}

impl fmt::Display for MeanCi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ±{:.3}", self.mean, self.halfwidth)
    }
}

/// Two-sided 97.5% Student quantile for `n` seeds (2.776 at n = 5).
pub fn t_crit(n_seeds: usize) -> Result<f64> {
    if n_seeds < 2 {
        return Err(Error::config("confidence intervals need at least 2 seeds"));
    }
    stats::t_critical_two_sided(0.05, (n_seeds - 1) as f64)
}

pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    let t = t_crit(values.len())?;
    let n = values.len() as f64;
    Ok(MeanCi {
        mean: stats::mean(values),
        halfwidth: t * stats::variance(values).max(0.0).sqrt() / n.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub accuracy: MeanCi,
    pub f1: MeanCi,
    pub n_seeds: usize,
}

/// Aggregates per-seed `(accuracy, macro_f1)` pairs.
pub fn aggregate_seeds(per_seed: &[(f64, f64)]) -> Result<SeedAggregate> {
    let acc: Vec<f64> = per_seed.iter().map(|p| p.0).collect();
    let f1: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    Ok(SeedAggregate {
        accuracy: mean_ci(&acc)?,
        f1: mean_ci(&f1)?,
        n_seeds: per_seed.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "group")]
pub enum Setting {
    Stl,
    Mtl(Vec<String>),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Stl => f.write_str("stl"),
            Setting::Mtl(group) => write!(f, "mtl({})", group.join("+")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub setting: Setting,
    pub accuracy: MeanCi,
    pub f1: MeanCi,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn from_runs(task_id: &str, setting: Setting, seeds: &[u64], per_seed: &[(f64, f64)]) -> Result<Self> {
        if seeds.len() != per_seed.len() {
            return Err(Error::config("one (accuracy, f1) pair per seed expected"));
        }
        let agg = aggregate_seeds(per_seed)?;
        Ok(EvalReport {
            task_id: task_id.to_string(),
            setting,
            accuracy: agg.accuracy,
            f1: agg.f1,
            n_seeds: agg.n_seeds,
            seeds: seeds.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MtlBetter,
    StlBetter,
    WithinMargin,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::MtlBetter => "mtl_better",
            Verdict::StlBetter => "stl_better",
            Verdict::WithinMargin => "within_margin",
        })
    }
}

/// Overlapping macro-F1 intervals are a tie; otherwise the higher mean wins.
pub fn compare(stl: &EvalReport, mtl: &EvalReport) -> Result<Verdict> {
    if stl.task_id != mtl.task_id {
        return Err(Error::config(format!(
            "cannot compare reports of `{}` and `{}`",
            stl.task_id, mtl.task_id
        )));
    }
    let (s, m) = (stl.f1, mtl.f1);
    Ok(if m.lower() > s.upper() {
        Verdict::MtlBetter
    } else if s.lower() > m.upper() {
        Verdict::StlBetter
    } else {
        Verdict::WithinMargin
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_hand_confusion_matrix() {
        // class 0: TP 1, FP 0, FN 1 -> P 1, R 1/2, F1 2/3
        // class 1: TP 2, FP 1, FN 0 -> P 2/3, R 1, F1 0.8
        let f1 = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn macro_f1_conventions() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let absent = macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1], 3).unwrap();
        assert!((absent - 2.0 / 3.0).abs() < 1e-12);
        let present =
            macro_f1_with(&[0, 1, 0, 1], &[0, 1, 0, 1], 3, F1Average::PresentClasses).unwrap();
        assert_eq!(present, 1.0);
        assert!(macro_f1(&[3], &[0], 3).is_err());
    }

    #[test]
    fn symmetric_binary_fixture_matches_accuracy() {
        let gold = [0, 0, 1, 1];
        let pred = [0, 1, 1, 0];
        assert_eq!(accuracy(&pred, &gold).unwrap(), macro_f1(&pred, &gold, 2).unwrap());
    }

    #[test]
    fn aggregate_reference_values() {
        let per_seed: Vec<(f64, f64)> = (1..=5).map(|v| (v as f64, v as f64)).collect();
        let agg = aggregate_seeds(&per_seed).unwrap();
        assert!((agg.f1.mean - 3.0).abs() < 1e-12);
        // 2.776 * sqrt(2.5) / sqrt(5) = 1.9630
        assert!((agg.f1.halfwidth - 1.9630).abs() < 1e-3, "{}", agg.f1.halfwidth);
        assert!((t_crit(5).unwrap() - 2.776).abs() < 1e-3);

        let flat = aggregate_seeds(&[(0.5, 0.4); 4]).unwrap();
        assert_eq!(flat.accuracy.halfwidth, 0.0);
        assert_eq!(flat.f1.mean, 0.4);
        assert!(aggregate_seeds(&[(0.5, 0.5)]).is_err());
    }

    fn report(task: &str, f1: f64, hw: f64) -> EvalReport {
        EvalReport {
            task_id: task.into(),
            setting: Setting::Stl,
            accuracy: MeanCi { mean: f1, halfwidth: hw },
            f1: MeanCi { mean: f1, halfwidth: hw },
            n_seeds: 5,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }

    #[test]
    fn verdicts() {
        let a = report("t", 0.8, 0.05);
        assert_eq!(compare(&a, &a).unwrap(), Verdict::WithinMargin);
        assert_eq!(compare(&a, &report("t", 0.95, 0.02)).unwrap(), Verdict::MtlBetter);
        assert_eq!(compare(&a, &report("t", 0.6, 0.05)).unwrap(), Verdict::StlBetter);
        assert_eq!(compare(&a, &report("t", 0.85, 0.05)).unwrap(), Verdict::WithinMargin);
        assert!(compare(&a, &report("u", 0.8, 0.05)).is_err());
    }
}
