//! Rollout-averaged success, pass@k and failure breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ErrorCategory, GradeError, Verdict};

/// Probability that at least one of `k` draws without replacement from `n`
/// attempts with `c` successes is a success.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, GradeError> {
    if k == 0 || k > n {
        return Err(GradeError::Domain(format!("pass@{k} needs 1 <= k <= n = {n}")));
    }
    if c > n {
        return Err(GradeError::Domain(format!("{c} successes out of {n} attempts")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let log_miss: f64 = (0..k).map(|i| (-(c as f64) / (n - i) as f64).ln_1p()).sum();
    Ok(-log_miss.exp_m1())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFailures {
    pub tests: usize,
    pub reliance: usize,
    pub no_forbidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub tasks: usize,
    pub verdicts: usize,
    /// (task, rollout) pairs without a verdict, scored as failures.
    pub missing: usize,
    pub per_rollout: Vec<f64>,
    pub mean_success: f64,
    pub pass_at_k: BTreeMap<String, f64>,
    pub condition_failures: ConditionFailures,
    /// Categories of the failing verdicts present.
    pub error_histogram: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rollouts: usize,
    pub splits: BTreeMap<String, SplitMetrics>,
    pub warnings: Vec<String>,
}

/// Metrics per named split of task ids. With no splits given, every task
/// seen forms the split `all`.
pub fn aggregate(
    verdicts: &[Verdict],
    splits: &[(String, Vec<String>)],
    rollouts: usize,
    ks: &[usize],
) -> Result<MetricReport, GradeError> {
    if rollouts == 0 {
        return Err(GradeError::Domain("at least one rollout".into()));
    }
    let mut by_pair: BTreeMap<(&str, u32), &Verdict> = BTreeMap::new();
    for v in verdicts {
        if v.rollout_index as usize >= rollouts {
            return Err(GradeError::Domain(format!(
                "task {} has rollout {} but only {rollouts} rollouts are configured",
                v.task_id, v.rollout_index
            )));
        }
        if by_pair.insert((v.task_id.as_str(), v.rollout_index), v).is_some() {
            return Err(GradeError::Duplicate {
                task: v.task_id.clone(),
                rollout: v.rollout_index,
            });
        }
    }
    let owned_all;
    let splits: &[(String, Vec<String>)] = if splits.is_empty() {
        let ids: BTreeSet<String> = verdicts.iter().map(|v| v.task_id.clone()).collect();
        owned_all = [("all".to_string(), ids.into_iter().collect())];
        &owned_all
    } else {
        splits
    };

    let mut warnings = Vec::new();
    let known: BTreeSet<&str> = splits.iter().flat_map(|(_, ids)| ids.iter().map(String::as_str)).collect();
    let strays: BTreeSet<&str> = verdicts
        .iter()
        .map(|v| v.task_id.as_str())
        .filter(|t| !known.contains(t))
        .collect();
    if !strays.is_empty() {
        warnings.push(format!("{} task ids outside every split were ignored", strays.len()));
    }
    for &k in ks {
        if k == 0 || k > rollouts {
            warnings.push(format!("pass@{k} skipped: needs 1 <= k <= {rollouts}"));
        }
    }

    let mut out = BTreeMap::new();
    for (name, ids) in splits {
        let mut successes = vec![0usize; rollouts];
        let mut pass = vec![0.0f64; ks.len()];
        let mut m = SplitMetrics {
            tasks: ids.len(),
            verdicts: 0,
            missing: 0,
            per_rollout: Vec::new(),
            mean_success: 0.0,
            pass_at_k: BTreeMap::new(),
            condition_failures: ConditionFailures::default(),
            error_histogram: BTreeMap::new(),
        };
        for id in ids {
            let mut c = 0;
            for (r, hits) in successes.iter_mut().enumerate() {
                match by_pair.get(&(id.as_str(), r as u32)) {
                    Some(v) => {
                        m.verdicts += 1;
                        if v.passed() {
                            c += 1;
                            *hits += 1;
                        } else {
                            *m.error_histogram.entry(v.error_category).or_default() += 1;
                        }
                        m.condition_failures.tests += usize::from(!v.cond_tests);
                        m.condition_failures.reliance += usize::from(!v.cond_reliance);
                        m.condition_failures.no_forbidden += usize::from(!v.cond_no_forbidden);
                    }
                    None => m.missing += 1,
                }
            }
            for (slot, &k) in pass.iter_mut().zip(ks) {
                if (1..=rollouts).contains(&k) {
                    *slot += pass_at_k(rollouts, c, k)?;
                }
            }
        }
        if m.missing > 0 {
            warnings.push(format!(
                "split {name}: {} of {} (task, rollout) pairs missing, scored as failures",
                m.missing,
                ids.len() * rollouts
            ));
        }
        let n = ids.len().max(1) as f64;
        m.per_rollout = successes.iter().map(|&s| s as f64 / n).collect();
        m.mean_success = m.per_rollout.iter().sum::<f64>() / rollouts as f64;
        for (total, &k) in pass.iter().zip(ks) {
            if (1..=rollouts).contains(&k) {
                m.pass_at_k.insert(format!("pass@{k}"), total / n);
            }
        }
        out.insert(name.clone(), m);
    }
    Ok(MetricReport {
        rollouts,
        splits: out,
        warnings,
    })
}

impl MetricReport {
    /// Fixed-width table: one row per split, rates as percentages.
    pub fn to_table(&self) -> String {
        let ks: BTreeSet<&String> = self.splits.values().flat_map(|m| m.pass_at_k.keys()).collect();
        let mut ks: Vec<&String> = ks.into_iter().collect();
        ks.sort_by_key(|k| k.trim_start_matches("pass@").parse::<usize>().unwrap_or(usize::MAX));
        let mut s = String::new();
        let _ = write!(s, "{:<14}{:>7}{:>9}", "split", "tasks", "mean");
        for k in &ks {
            let _ = write!(s, "{k:>10}");
        }
        for c in ErrorCategory::FAILURES {
            let _ = write!(s, "  {c}");
        }
        s.push('\n');
        for (name, m) in &self.splits {
            let _ = write!(s, "{name:<14}{:>7}{:>9.2}", m.tasks, 100.0 * m.mean_success);
            for k in &ks {
                match m.pass_at_k.get(*k) {
                    Some(p) => {
                        let _ = write!(s, "{:>10.2}", 100.0 * p);
                    }
                    None => {
                        let _ = write!(s, "{:>10}", "-");
                    }
                }
            }
            for c in ErrorCategory::FAILURES {
                let n = m.error_histogram.get(&c).copied().unwrap_or(0);
                let _ = write!(s, "  {n:>width$}", width = c.as_str().len());
            }
            s.push('\n');
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{CaseStatus, SandboxResult};
    use crate::verify::{analyze, VerifierConfig};

    /// Average over every k-subset of attempts of "any success".
    fn exhaustive(n: usize, c: usize, k: usize) -> f64 {
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                total += 1;
                if mask & ((1 << c) - 1) != 0 {
                    hit += 1;
                }
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn estimator_matches_subset_enumeration() {
        for n in 1..=9 {
            for c in 0..=n {
                for k in 1..=n {
                    let p = pass_at_k(n, c, k).unwrap();
                    assert!((p - exhaustive(n, c, k)).abs() < 1e-12, "n={n} c={c} k={k}");
                }
            }
        }
        assert_eq!(pass_at_k(10, 5, 1).unwrap(), 0.5);
        assert_eq!(pass_at_k(64, 0, 64).unwrap(), 0.0);
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 4, 1).is_err());
    }

    fn verdict(task: &str, rollout: u32, ok: bool) -> Verdict {
        let cfg = VerifierConfig::new("zwc", ["numpy"]);
        Verdict {
            task_id: task.into(),
            rollout_index: rollout,
            r: u8::from(ok),
            cond_tests: ok,
            cond_reliance: true,
            cond_no_forbidden: true,
            error_category: if ok { ErrorCategory::None } else { ErrorCategory::Other },
            static_report: analyze("def f():\n    return 1\n", "f", &cfg),
            sandbox_result: SandboxResult::uniform(task, 1, CaseStatus::Pass, ""),
        }
    }

    #[test]
    fn aggregate_by_split() {
        // a: 2/3, b: 0/3, c: 3/3
        let mut vs = Vec::new();
        for (t, oks) in [("a", [true, false, true]), ("b", [false; 3]), ("c", [true; 3])] {
            for (r, ok) in oks.into_iter().enumerate() {
                vs.push(verdict(t, r as u32, ok));
            }
        }
        let splits = vec![("test_single".to_string(), vec!["a".into(), "b".into()]), ("test_multi".to_string(), vec!["c".into()])];
        let rep = aggregate(&vs, &splits, 3, &[1, 2, 5]).unwrap();
        let s = &rep.splits["test_single"];
        assert_eq!(s.per_rollout, vec![0.5, 0.0, 0.5]);
        assert!((s.mean_success - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.pass_at_k["pass@1"] - s.mean_success).abs() < 1e-15);
        assert!((s.pass_at_k["pass@2"] - 0.5).abs() < 1e-15);
        assert_eq!(s.error_histogram.values().sum::<usize>(), 4);
        assert_eq!(s.condition_failures.tests, 4);
        assert_eq!(rep.splits["test_multi"].mean_success, 1.0);
        assert!(rep.splits["test_multi"].error_histogram.is_empty());
        assert!(rep.warnings.iter().any(|w| w.contains("pass@5")));
        let table = rep.to_table();
        assert!(table.contains("test_single") && table.contains("pass@2"));
    }

    #[test]
    fn missing_and_duplicate_rollouts() {
        let vs = vec![verdict("a", 0, true)];
        let rep = aggregate(&vs, &[], 2, &[1]).unwrap();
        assert_eq!(rep.splits["all"].missing, 1);
        assert_eq!(rep.splits["all"].mean_success, 0.5);
        assert!(!rep.warnings.is_empty());
        let dup = vec![verdict("a", 0, true), verdict("a", 0, false)];
        assert!(matches!(aggregate(&dup, &[], 2, &[1]), Err(GradeError::Duplicate { .. })));
        assert!(aggregate(&[verdict("a", 5, true)], &[], 2, &[1]).is_err());
        let empty = aggregate(&[], &[], 5, &[1]).unwrap();
        assert_eq!(empty.splits["all"].tasks, 0);
    }
}
