//! Candidate task groups, the PVI-similarity rule, and greedy plan selection.
//!
//! A candidate is judged similar when the test of its members' PVI samples
//! gives `p > alpha` (strict). Pairs use a two-sample t-test, larger groups a
//! one-way ANOVA.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::stats::{self, TestFlavor, TestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingDecision {
    /// Sorted task ids.
    pub tasks: Vec<String>,
    #[serde(flatten)]
    pub test: TestResult,
    /// `test.p_value > alpha` for the alpha the decision was made under.
    pub similar: bool,
}

impl GroupingDecision {
    /// Builds a decision from an already computed test, e.g. reported statistics.
    pub fn from_test(tasks: &[&str], test: TestResult, alpha: f64) -> Self {
        let mut tasks: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
        tasks.sort();
        GroupingDecision {
            tasks,
            similar: test.p_value > alpha,
            test,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Largest p-value first.
    #[default]
    MaxP,
    /// Largest |statistic| first.
    MaxAbsStat,
    /// Largest signed statistic first.
    PaperLargerT,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "max_p" => Some(Policy::MaxP),
            "max_abs_stat" => Some(Policy::MaxAbsStat),
            "paper_larger_t" => Some(Policy::PaperLargerT),
            _ => None,
        }
    }

    fn key(self, d: &GroupingDecision) -> f64 {
        match self {
            Policy::MaxP => d.test.p_value,
            Policy::MaxAbsStat => d.test.statistic.abs(),
            Policy::PaperLargerT => d.test.statistic,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::MaxP => "max_p",
            Policy::MaxAbsStat => "max_abs_stat",
            Policy::PaperLargerT => "paper_larger_t",
        })
    }
}

/// How candidates are tested and thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityRule {
    pub alpha: f64,
    /// Flavor for pairs; groups of three or more always use ANOVA.
    pub flavor: TestFlavor,
    /// Divide alpha by the number of candidates tested.
    pub bonferroni: bool,
}

impl Default for SimilarityRule {
    fn default() -> Self {
        SimilarityRule {
            alpha: 0.01,
            flavor: TestFlavor::Welch,
            bonferroni: false,
        }
    }
}

impl SimilarityRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.flavor == TestFlavor::Anova {
            return Err(Error::config("pair flavor must be a t-test flavor"));
        }
        Ok(())
    }

    pub fn effective_alpha(&self, candidates: usize) -> f64 {
        if self.bonferroni && candidates > 0 {
            self.alpha / candidates as f64
        } else {
            self.alpha
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub groups: Vec<Vec<String>>,
    pub singletons: Vec<String>,
    pub policy: Policy,
    pub audit: Vec<GroupingDecision>,
}

impl GroupingPlan {
    /// Every task of the plan, sorted.
    pub fn tasks(&self) -> Vec<String> {
        let mut all: Vec<String> = self.groups.iter().flatten().chain(&self.singletons).cloned().collect();
        all.sort();
        all
    }

    pub fn group_of(&self, task_id: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|g| g.iter().any(|t| t == task_id))
            .map(|g| g.as_slice())
    }
}

/// All subsets of sizes `2..=max_group_size` (capped at the task count),
/// ordered by size, then lexicographically over the sorted ids.
pub fn enumerate_candidates(task_ids: &[String], max_group_size: usize) -> Result<Vec<Vec<String>>> {
    let set: BTreeSet<&String> = task_ids.iter().collect();
    if set.len() != task_ids.len() {
        return Err(Error::config("duplicate task ids in grouping"));
    }
    if set.len() < 2 {
        return Err(Error::config("grouping needs at least 2 tasks"));
    }
    if max_group_size < 2 {
        return Err(Error::config("max group size must be at least 2"));
    }
    let sorted: Vec<&String> = set.into_iter().collect();
    let n = sorted.len();
    let mut out = Vec::new();
    for k in 2..=max_group_size.min(n) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.iter().map(|&i| sorted[i].clone()).collect());
            // Advance to the next k-combination in lexicographic order.
            let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

pub fn assess_group(
    pvi_by_task: &BTreeMap<String, Vec<f64>>,
    tasks: &[String],
    alpha: f64,
    flavor: TestFlavor,
) -> Result<GroupingDecision> {
    if tasks.len() < 2 {
        return Err(Error::config("a candidate group needs at least 2 tasks"));
    }
    let samples: Vec<&[f64]> = tasks
        .iter()
        .map(|t| {
            pvi_by_task
                .get(t)
                .map(|v| v.as_slice())
                .ok_or_else(|| Error::UnknownTask(t.clone()))
        })
        .collect::<Result<_>>()?;
    let test = if samples.len() == 2 {
        stats::t_test(samples[0], samples[1], flavor)?
    } else {
        stats::one_way_anova(&samples)?
    };
    let names: Vec<&str> = tasks.iter().map(|t| t.as_str()).collect();
    Ok(GroupingDecision::from_test(&names, test, alpha))
}

/// Tests every candidate up to `max_group_size`, in enumeration order.
pub fn assess_all(
    pvi_by_task: &BTreeMap<String, Vec<f64>>,
    max_group_size: usize,
    rule: &SimilarityRule,
    jobs: usize,
) -> Result<Vec<GroupingDecision>> {
    rule.validate()?;
    let ids: Vec<String> = pvi_by_task.keys().cloned().collect();
    let candidates = enumerate_candidates(&ids, max_group_size)?;
    let alpha = rule.effective_alpha(candidates.len());
    parallel::map(jobs, &candidates, |c| assess_group(pvi_by_task, c, alpha, rule.flavor))
}

/// Greedy assignment over similar decisions: the best group (under `policy`)
/// whose tasks are all unassigned is taken, until none is left. Ties go to
/// the lexicographically smaller task list.
pub fn select_groupings(decisions: &[GroupingDecision], policy: Policy) -> GroupingPlan {
    let mut order: Vec<&GroupingDecision> = decisions.iter().filter(|d| d.similar).collect();
    order.sort_by(|a, b| {
        policy
            .key(b)
            .total_cmp(&policy.key(a))
            .then_with(|| a.tasks.cmp(&b.tasks))
    });

    let mut assigned = BTreeSet::new();
    let mut groups = Vec::new();
    for d in order {
        if d.tasks.iter().all(|t| !assigned.contains(t)) {
            assigned.extend(d.tasks.iter().cloned());
            groups.push(d.tasks.clone());
        }
    }
    let singletons: BTreeSet<String> = decisions
        .iter()
        .flat_map(|d| d.tasks.iter())
        .filter(|t| !assigned.contains(*t))
        .cloned()
        .collect();
    GroupingPlan {
        groups,
        singletons: singletons.into_iter().collect(),
        policy,
        audit: decisions.to_vec(),
    }
}

/// `assess_all` followed by `select_groupings`.
pub fn plan(
    pvi_by_task: &BTreeMap<String, Vec<f64>>,
    max_group_size: usize,
    rule: &SimilarityRule,
    policy: Policy,
    jobs: usize,
) -> Result<GroupingPlan> {
    let decisions = assess_all(pvi_by_task, max_group_size, rule, jobs)?;
    Ok(select_groupings(&decisions, policy))
}

/// Plain-text audit: pairs with their t statistic, larger groups with F,
/// then the chosen plan.
pub fn render_table(plan: &GroupingPlan) -> String {
    let mut out = String::new();
    let width = plan
        .audit
        .iter()
        .map(|d| d.tasks.join("-").len())
        .max()
        .unwrap_or(0)
        .max("Task grouping".len());
    let sections: [(&str, fn(&GroupingDecision) -> bool); 2] = [
        ("T-statistic", |d| d.tasks.len() == 2),
        ("F-statistic", |d| d.tasks.len() > 2),
    ];
    for (label, keep) in sections {
        let rows: Vec<&GroupingDecision> = plan.audit.iter().filter(|d| keep(d)).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{:<width$}  {:>11}  {:>13}  {:>8}  similar", "Task grouping", label, "df", "P-value");
        for d in rows {
            let df = match d.test.df2 {
                Some(df2) => format!("{:.0},{:.0}", d.test.df, df2),
                None => format!("{:.1}", d.test.df),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>11.3}  {:>13}  {:>8.3}  {}",
                d.tasks.join("-"),
                d.test.statistic,
                df,
                d.test.p_value,
                if d.similar { "yes" } else { "no" }
            );
        }
        out.push('\n');
    }
    let _ = writeln!(out, "policy: {}", plan.policy);
    for g in &plan.groups {
        let _ = writeln!(out, "group: {}", g.join(" + "));
    }
    if !plan.singletons.is_empty() {
        let _ = writeln!(out, "singletons: {}", plan.singletons.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn reported(tasks: &[&str], statistic: f64, p_value: f64) -> GroupingDecision {
        let flavor = if tasks.len() == 2 { TestFlavor::Welch } else { TestFlavor::Anova };
        let test = TestResult {
            statistic,
            df: 1.0,
            df2: None,
            p_value,
            flavor,
        };
        GroupingDecision::from_test(tasks, test, 0.01)
    }

    #[test]
    fn candidate_counts_and_order() {
        let four = ids(&["d", "a", "c", "b"]);
        assert_eq!(enumerate_candidates(&four, 2).unwrap().len(), 6);
        let all = enumerate_candidates(&four, 3).unwrap();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], ids(&["a", "b"]));
        assert_eq!(all[5], ids(&["c", "d"]));
        assert_eq!(all[6], ids(&["a", "b", "c"]));
        assert_eq!(all[9], ids(&["b", "c", "d"]));
        assert_eq!(enumerate_candidates(&ids(&["x", "y"]), 3).unwrap(), vec![ids(&["x", "y"])]);
        assert!(enumerate_candidates(&ids(&["x"]), 2).is_err());
        assert!(enumerate_candidates(&ids(&["x", "x"]), 2).is_err());
        assert!(enumerate_candidates(&four, 1).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        assert!(reported(&["a", "b"], 1.398, 0.162).similar);
        assert!(!reported(&["a", "b"], 2.6, 0.009).similar);
        assert!(!reported(&["a", "b"], 2.6, 0.01).similar);
        assert!(reported(&["a", "b", "c"], 4.330, 0.013).similar);
    }

    #[test]
    fn assess_uses_t_for_pairs_and_anova_for_triples() {
        let mut pvi = BTreeMap::new();
        pvi.insert("a".to_string(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        pvi.insert("b".to_string(), vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        pvi.insert("c".to_string(), vec![1.5, 2.5, 3.5, 4.5]);
        let pair = assess_group(&pvi, &ids(&["b", "a"]), 0.01, TestFlavor::Welch).unwrap();
        assert_eq!(pair.tasks, ids(&["a", "b"]));
        assert_eq!(pair.test.flavor, TestFlavor::Welch);
        assert!(pair.similar);
        let triple = assess_group(&pvi, &ids(&["a", "b", "c"]), 0.01, TestFlavor::Welch).unwrap();
        assert_eq!(triple.test.flavor, TestFlavor::Anova);
        assert!(matches!(
            assess_group(&pvi, &ids(&["a", "z"]), 0.01, TestFlavor::Welch),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn greedy_max_p() {
        let decisions = vec![
            reported(&["A", "B"], 0.1, 0.9),
            reported(&["B", "C"], 1.3, 0.2),
            reported(&["A", "C"], 3.0, 0.001),
        ];
        let plan = select_groupings(&decisions, Policy::MaxP);
        assert_eq!(plan.groups, vec![ids(&["A", "B"])]);
        assert_eq!(plan.singletons, ids(&["C"]));
        assert_eq!(plan.audit.len(), 3);
    }

    #[test]
    fn nothing_similar_leaves_singletons() {
        let decisions = vec![reported(&["x", "y"], 5.0, 1e-6)];
        let plan = select_groupings(&decisions, Policy::MaxP);
        assert!(plan.groups.is_empty());
        assert_eq!(plan.singletons, ids(&["x", "y"]));
    }

    #[test]
    fn ties_break_lexicographically() {
        let decisions = vec![reported(&["c", "d"], 1.0, 0.5), reported(&["b", "c"], 1.0, 0.5)];
        let plan = select_groupings(&decisions, Policy::MaxP);
        assert_eq!(plan.groups, vec![ids(&["b", "c"])]);
        assert_eq!(plan.singletons, ids(&["d"]));
    }

    #[test]
    fn statistic_policies() {
        let decisions = vec![
            reported(&["CB", "Causal"], 2.411, 0.016),
            reported(&["CB", "COPA"], 1.328, 0.185),
            reported(&["CB", "SST2"], -2.9, 0.02),
        ];
        let larger_t = select_groupings(&decisions, Policy::PaperLargerT);
        assert_eq!(larger_t.groups, vec![ids(&["CB", "Causal"])]);
        let abs = select_groupings(&decisions, Policy::MaxAbsStat);
        assert_eq!(abs.groups, vec![ids(&["CB", "SST2"])]);
        let max_p = select_groupings(&decisions, Policy::MaxP);
        assert_eq!(max_p.groups, vec![ids(&["CB", "COPA"])]);
    }

    #[test]
    fn bonferroni_divides_alpha() {
        let rule = SimilarityRule {
            bonferroni: true,
            ..Default::default()
        };
        assert!((rule.effective_alpha(10) - 0.001).abs() < 1e-15);
        assert_eq!(SimilarityRule::default().effective_alpha(10), 0.01);
        assert!(SimilarityRule { alpha: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn table_and_json() {
        let decisions = vec![reported(&["a", "b"], 1.398, 0.162), reported(&["a", "b", "c"], 0.813, 0.444)];
        let plan = select_groupings(&decisions, Policy::MaxP);
        let table = render_table(&plan);
        assert!(table.contains("T-statistic") && table.contains("F-statistic"));
        assert!(table.contains("group: a + b + c"));
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"p_value\":0.162"));
        assert_eq!(serde_json::from_str::<GroupingPlan>(&json).unwrap(), plan);
    }
}
