use std::collections::BTreeMap;

use super::space::ParamValue;
use super::study::TrialRecord;
use crate::envs::EnvName;

pub const TOP_K: usize = 5;
/// Numeric parameters with more distinct values than this are grouped into this many equal-width bins.
pub const NUMERIC_BINS: usize = 4;

/// Mean score of all trials where `param` took a value in `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub param: String,
    /// The category, the number, or a bin label `[lo, hi]`.
    pub value: String,
    pub count: usize,
    pub per_env: BTreeMap<EnvName, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTwoReport {
    pub marginals: Vec<Marginal>,
    /// Per environment, `(trial index, score)` of the best trials, best first.
    pub top: BTreeMap<EnvName, Vec<(usize, f64)>>,
}

/// Value marginals and per-environment leaders over the scored trials.
pub fn study_two_report(records: &[TrialRecord]) -> StudyTwoReport {
    let scored: Vec<&TrialRecord> = records.iter().filter(|r| r.objective().is_some()).collect();
    let mut names: Vec<&String> = scored.iter().flat_map(|r| r.sample.keys()).collect();
    names.sort();
    names.dedup();

    let mut marginals = Vec::new();
    for name in names {
        let groups = group_values(&scored, name);
        for (label, members) in groups {
            let mut per_env = BTreeMap::new();
            let envs: Vec<EnvName> = {
                let mut e: Vec<EnvName> = members.iter().flat_map(|r| r.scores.keys().copied()).collect();
                e.sort();
                e.dedup();
                e
            };
            for env in envs {
                let v: Vec<f64> = members.iter().filter_map(|r| r.scores.get(&env).copied()).collect();
                per_env.insert(env, v.iter().sum::<f64>() / v.len() as f64);
            }
            let mean = members.iter().filter_map(|r| r.objective()).sum::<f64>() / members.len() as f64;
            marginals.push(Marginal {
                param: name.clone(),
                value: label,
                count: members.len(),
                per_env,
                mean,
            });
        }
    }

    let mut top: BTreeMap<EnvName, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &scored {
        for (&env, &s) in &r.scores {
            top.entry(env).or_default().push((r.index, s));
        }
    }
    for list in top.values_mut() {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        list.truncate(TOP_K);
    }
    StudyTwoReport { marginals, top }
}

fn group_values<'r>(records: &[&'r TrialRecord], name: &str) -> Vec<(String, Vec<&'r TrialRecord>)> {
    let present: Vec<(&ParamValue, &TrialRecord)> =
        records.iter().filter_map(|r| r.sample.get(name).map(|v| (v, *r))).collect();
    let numeric: Option<Vec<f64>> = present.iter().map(|(v, _)| v.as_f64()).collect();
    let mut groups: BTreeMap<String, (f64, Vec<&TrialRecord>)> = BTreeMap::new();
    match numeric {
        Some(xs) => {
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() <= NUMERIC_BINS {
                for ((v, r), x) in present.iter().zip(&xs) {
                    groups.entry(v.to_string()).or_insert((*x, Vec::new())).1.push(*r);
                }
            } else {
                let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
                let width = (hi - lo) / NUMERIC_BINS as f64;
                for ((_, r), x) in present.iter().zip(&xs) {
                    let b = (((x - lo) / width) as usize).min(NUMERIC_BINS - 1);
                    let (a, z) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
                    groups
                        .entry(format!("[{a:.4e}, {z:.4e}]"))
                        .or_insert((a, Vec::new()))
                        .1
                        .push(*r);
                }
            }
        }
        None => {
            for (v, r) in &present {
                groups.entry(v.to_string()).or_insert((0.0, Vec::new())).1.push(*r);
            }
        }
    }
    let mut out: Vec<(String, f64, Vec<&TrialRecord>)> =
        groups.into_iter().map(|(k, (key, m))| (k, key, m)).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out.into_iter().map(|(k, _, m)| (k, m)).collect()
}
