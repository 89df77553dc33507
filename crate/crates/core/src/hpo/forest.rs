use std::collections::BTreeMap;

use super::space::{ParamKind, ParamValue, SearchSpace};
use super::study::TrialRecord;
use crate::envs::EnvName;
use crate::error::{Result, TbqnError};
use crate::rng::RngState;

pub const MIN_RECORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            bootstrap: true,
        }
    }
}

/// Normalised per-parameter importances, in search-space order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub params: Vec<String>,
    pub per_env: BTreeMap<EnvName, Vec<f64>>,
    /// Arithmetic mean of the per-environment vectors.
    pub averaged: Vec<f64>,
}

impl ImportanceReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().position(|p| p == name).map(|i| self.averaged[i])
    }

    /// Parameter names ordered from most to least important.
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.params.len()).collect();
        idx.sort_by(|&a, &b| self.averaged[b].total_cmp(&self.averaged[a]));
        idx.into_iter().map(|i| self.params[i].as_str()).collect()
    }
}

/// Mean-decrease-impurity importance of every search parameter, per environment and averaged.
pub fn mdi_importance(
    records: &[TrialRecord],
    space: &SearchSpace,
    cfg: &ForestConfig,
    rng: &mut RngState,
) -> Result<ImportanceReport> {
    let usable: Vec<&TrialRecord> = records.iter().filter(|r| r.objective().is_some()).collect();
    if usable.len() < MIN_RECORDS {
        return Err(TbqnError::InsufficientData(format!(
            "importance needs at least {MIN_RECORDS} scored trials, got {}",
            usable.len()
        )));
    }
    let (rows, owner) = encode(&usable, space);
    let envs: Vec<EnvName> = {
        let mut e: Vec<EnvName> = usable.iter().flat_map(|r| r.scores.keys().copied()).collect();
        e.sort();
        e.dedup();
        e
    };
    let mut per_env = BTreeMap::new();
    for env in envs {
        let (x, y): (Vec<&Vec<f64>>, Vec<f64>) = usable
            .iter()
            .zip(&rows)
            .filter_map(|(r, row)| r.scores.get(&env).map(|&s| (row, s)))
            .unzip();
        let x: Vec<Vec<f64>> = x.into_iter().cloned().collect();
        let features = forest_importance(&x, &y, cfg, &mut rng.derive(env.as_str()));
        let mut per_param = vec![0.0; space.len()];
        for (f, v) in features.iter().enumerate() {
            per_param[owner[f]] += v;
        }
        per_env.insert(env, normalise(per_param));
    }
    let n = per_env.len() as f64;
    let averaged = (0..space.len())
        .map(|i| per_env.values().map(|v| v[i]).sum::<f64>() / n)
        .collect();
    Ok(ImportanceReport {
        params: space.names().map(String::from).collect(),
        per_env,
        averaged,
    })
}

/// Scales to sum 1, or uniform when everything is zero.
fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
    v
}

/// Numeric parameters become one column each, categoricals one indicator column per value.
/// Returns the rows and, per column, the index of the owning parameter.
fn encode(records: &[&TrialRecord], space: &SearchSpace) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut owner = Vec::new();
    for (i, p) in space.params.iter().enumerate() {
        match &p.kind {
            ParamKind::Categorical(values) => owner.extend(std::iter::repeat(i).take(values.len())),
            _ => owner.push(i),
        }
    }
    let rows = records
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(owner.len());
            for p in &space.params {
                let v = r.sample.get(&p.name);
                match &p.kind {
                    ParamKind::Categorical(values) => {
                        for c in values {
                            let hit = matches!(v, Some(ParamValue::Categorical(s)) if s == c);
                            row.push(if hit { 1.0 } else { 0.0 });
                        }
                    }
                    _ => row.push(v.and_then(|v| v.as_f64()).unwrap_or(f64::NAN)),
                }
            }
            row
        })
        .collect();
    (rows, owner)
}

/// Per-feature importances averaged over trees, each tree normalised first.
fn forest_importance(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, rng: &mut RngState) -> Vec<f64> {
    let n_features = x.first().map_or(0, |r| r.len());
    let mtry = ((n_features as f64).sqrt().floor() as usize).max(1);
    let mut total = vec![0.0; n_features];
    for _ in 0..cfg.trees {
        let rows: Vec<usize> = if cfg.bootstrap {
            (0..y.len()).map(|_| rng.below(y.len())).collect()
        } else {
            (0..y.len()).collect()
        };
        let mut imp = vec![0.0; n_features];
        let mut tree = Tree { x, y, mtry, max_depth: cfg.max_depth, imp: &mut imp, rng };
        tree.grow(rows, 0);
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            total.iter_mut().zip(&imp).for_each(|(t, v)| *t += v / sum);
        }
    }
    total
}

struct Tree<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    max_depth: usize,
    imp: &'a mut [f64],
    rng: &'a mut RngState,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// `n * var(parent) - n_l * var(left) - n_r * var(right)`
    decrease: f64,
}

impl Tree<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) {
        if depth >= self.max_depth || rows.len() < 2 {
            return;
        }
        let Some(split) = self.best_split(&rows) else { return };
        self.imp[split.feature] += split.decrease;
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[r][split.feature] <= split.threshold);
        self.grow(left, depth + 1);
        self.grow(right, depth + 1);
    }

    /// Examines features in random order until at least `mtry` were tried and a split was found.
    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let n_features = self.x[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, self.rng.below(i + 1));
        }
        let mut best: Option<Split> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_split_on(rows, f) {
                if best.as_ref().map_or(true, |b| s.decrease > b.decrease) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn best_split_on(&self, rows: &[usize], f: usize) -> Option<Split> {
        let mut pts: Vec<(f64, f64)> = rows.iter().map(|&r| (self.x[r][f], self.y[r])).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pts.len() as f64;
        let (sum, sq) = pts.iter().fold((0.0, 0.0), |(s, q), p| (s + p.1, q + p.1 * p.1));
        let parent = sq - sum * sum / n;
        let (mut ls, mut lq) = (0.0, 0.0);
        let mut best: Option<Split> = None;
        for i in 0..pts.len() - 1 {
            ls += pts[i].1;
            lq += pts[i].1 * pts[i].1;
            if pts[i].0 == pts[i + 1].0 {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = n - nl;
            let (rs, rq) = (sum - ls, sq - lq);
            let child = (lq - ls * ls / nl) + (rq - rs * rs / nr);
            let decrease = parent - child;
            if decrease > 1e-12 * parent.abs().max(1e-300) && best.as_ref().map_or(true, |b| decrease > b.decrease) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (pts[i].0 + pts[i + 1].0),
                    decrease,
                });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::{sample_random, Sample};

    fn records(space: &SearchSpace, n: usize, seed: u64, score: impl Fn(&Sample, &mut RngState) -> f64) -> Vec<TrialRecord> {
        let mut rng = RngState::new(seed);
        (0..n)
            .map(|i| {
                let s = sample_random(space, &mut rng);
                let y = score(&s, &mut rng);
                TrialRecord::scored(i, s, BTreeMap::from([(EnvName::CartPole, y)]))
            })
            .collect()
    }

    #[test]
    fn informative_parameter_dominates() {
        let space = SearchSpace::parse("a uniform 0 1\nb uniform 0 1\nc categorical x y z\nd int_uniform 1 5").unwrap();
        let recs = records(&space, 200, 3, |s, rng| s["a"].as_f64().unwrap() + 0.1 * rng.normal());
        let rep = mdi_importance(&recs, &space, &ForestConfig::default(), &mut RngState::new(0)).unwrap();
        assert!(rep.get("a").unwrap() > 0.5, "{rep:?}");
        assert_eq!(rep.ranking()[0], "a");
        assert!((rep.averaged.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn categorical_signal_is_summed_back() {
        let space = SearchSpace::parse("a uniform 0 1\nc categorical x y z w").unwrap();
        let recs = records(&space, 120, 4, |s, _| if s["c"] == ParamValue::Categorical("y".into()) { 5.0 } else { 0.0 });
        let rep = mdi_importance(&recs, &space, &ForestConfig::default(), &mut RngState::new(1)).unwrap();
        assert!(rep.get("c").unwrap() > 0.9);
        assert_eq!(rep.averaged.len(), 2);
    }

    #[test]
    fn constant_scores_give_uniform() {
        let space = SearchSpace::parse("a uniform 0 1\nb uniform 0 1\nc uniform 0 1").unwrap();
        let recs = records(&space, 30, 5, |_, _| 7.0);
        let rep = mdi_importance(&recs, &space, &ForestConfig::default(), &mut RngState::new(2)).unwrap();
        for v in rep.averaged {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_records() {
        let space = SearchSpace::parse("a uniform 0 1").unwrap();
        let recs = records(&space, 9, 6, |s, _| s["a"].as_f64().unwrap());
        assert!(matches!(
            mdi_importance(&recs, &space, &ForestConfig::default(), &mut RngState::new(0)),
            Err(TbqnError::InsufficientData(_))
        ));
    }

    #[test]
    fn environment_average_is_mean_of_reports() {
        let space = SearchSpace::parse("a uniform 0 1\nb uniform 0 1\nc uniform 0 1").unwrap();
        let mut rng = RngState::new(9);
        let recs: Vec<TrialRecord> = (0..40)
            .map(|i| {
                let s = sample_random(&space, &mut rng);
                let scores = BTreeMap::from([
                    (EnvName::CartPole, s["a"].as_f64().unwrap()),
                    (EnvName::Acrobot, s["b"].as_f64().unwrap()),
                    (EnvName::MountainCar, s["c"].as_f64().unwrap() + s["a"].as_f64().unwrap()),
                ]);
                TrialRecord::scored(i, s, scores)
            })
            .collect();
        let rep = mdi_importance(&recs, &space, &ForestConfig::default(), &mut RngState::new(3)).unwrap();
        assert_eq!(rep.per_env.len(), 3);
        for i in 0..3 {
            let mean = rep.per_env.values().map(|v| v[i]).sum::<f64>() / 3.0;
            assert!((rep.averaged[i] - mean).abs() < 1e-15);
        }
        for v in rep.per_env.values() {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
