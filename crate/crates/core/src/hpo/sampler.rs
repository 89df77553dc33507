use std::f64::consts::{PI, SQRT_2};

use super::space::{ParamKind, ParamSpec, ParamValue, Sample, SearchSpace};
use super::study::TrialRecord;
use crate::rng::RngState;

/// Independent draw of every parameter from its prior.
pub fn sample_random(space: &SearchSpace, rng: &mut RngState) -> Sample {
    space
        .params
        .iter()
        .map(|p| (p.name.clone(), draw_prior(p, rng)))
        .collect()
}

fn draw_prior(p: &ParamSpec, rng: &mut RngState) -> ParamValue {
    match &p.kind {
        ParamKind::Categorical(values) => ParamValue::Categorical(values[rng.below(values.len())].clone()),
        ParamKind::Uniform { lo, hi } => ParamValue::Real(rng.uniform_range(*lo, *hi)),
        ParamKind::LogUniform { lo, hi } => ParamValue::Real(rng.uniform_range(lo.ln(), hi.ln()).exp().clamp(*lo, *hi)),
        ParamKind::IntUniform { lo, hi } => ParamValue::Int(lo + rng.below((hi - lo + 1) as usize) as i64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeConfig {
    /// Below this many scored trials the sampler falls back to random draws.
    pub startup_trials: usize,
    /// Fraction of trials treated as "good".
    pub gamma: f64,
    /// Draws from the good density among which the best ratio wins.
    pub candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            startup_trials: 10,
            gamma: 0.25,
            candidates: 24,
        }
    }
}

/// Tree-structured Parzen estimator proposal, univariate per parameter. Higher scores are better.
pub fn sample_tpe(space: &SearchSpace, history: &[TrialRecord], cfg: &TpeConfig, rng: &mut RngState) -> Sample {
    let mut scored: Vec<(&Sample, f64)> = history
        .iter()
        .filter_map(|r| r.objective().map(|s| (&r.sample, s)))
        .collect();
    if scored.len() < cfg.startup_trials.max(2) {
        return sample_random(space, rng);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let n_good = ((cfg.gamma * scored.len() as f64).ceil() as usize).clamp(1, scored.len() - 1);
    let (good, bad) = scored.split_at(n_good);

    let mut out = Sample::new();
    for p in &space.params {
        let pick = |set: &[(&Sample, f64)]| -> Vec<ParamValue> {
            set.iter().filter_map(|(s, _)| s.get(&p.name).cloned()).collect()
        };
        let (gv, bv) = (pick(good), pick(bad));
        let value = match &p.kind {
            ParamKind::Categorical(values) => {
                let l = category_weights(values, &gv);
                let g = category_weights(values, &bv);
                let best = (0..cfg.candidates.max(1))
                    .map(|_| weighted_index(&l, rng))
                    .max_by(|&a, &b| (l[a] / g[a]).total_cmp(&(l[b] / g[b])).then(b.cmp(&a)))
                    .unwrap_or(0);
                ParamValue::Categorical(values[best].clone())
            }
            _ => {
                let range = p.internal_range().expect("numeric parameter");
                let to_x = |v: &[ParamValue]| -> Vec<f64> {
                    v.iter().filter_map(|x| x.as_f64()).map(|x| p.to_internal(x)).collect()
                };
                let l = Parzen::new(&to_x(&gv), range);
                let g = Parzen::new(&to_x(&bv), range);
                let mut best = (f64::NEG_INFINITY, l.sample(rng));
                for i in 0..cfg.candidates.max(1) {
                    let x = if i == 0 { best.1 } else { l.sample(rng) };
                    let score = l.log_pdf(x) - g.log_pdf(x);
                    if score > best.0 {
                        best = (score, x);
                    }
                }
                p.from_internal(best.1)
            }
        };
        out.insert(p.name.clone(), value);
    }
    out
}

fn category_weights(values: &[String], observed: &[ParamValue]) -> Vec<f64> {
    let mut counts = vec![1.0; values.len()];
    for v in observed {
        if let ParamValue::Categorical(s) = v {
            if let Some(i) = values.iter().position(|c| c == s) {
                counts[i] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

fn weighted_index(w: &[f64], rng: &mut RngState) -> usize {
    let mut u = rng.uniform() * w.iter().sum::<f64>();
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.len() - 1
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / SQRT_2))
}

/// Mixture of truncated Gaussians at the observations plus a uniform prior component.
struct Parzen {
    centres: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn new(xs: &[f64], (lo, hi): (f64, f64)) -> Self {
        let width = hi - lo;
        let n = xs.len().max(1) as f64;
        Self {
            centres: xs.to_vec(),
            bandwidth: (width / n.sqrt()).max(width / 50.0),
            lo,
            hi,
        }
    }

    fn components(&self) -> f64 {
        self.centres.len() as f64 + 1.0
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let s = self.bandwidth;
        let mut density = 1.0 / (self.hi - self.lo);
        for &mu in &self.centres {
            let z = (x - mu) / s;
            let mass = std_normal_cdf((self.hi - mu) / s) - std_normal_cdf((self.lo - mu) / s);
            density += (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt()) / mass.max(1e-300);
        }
        (density / self.components()).ln()
    }

    fn sample(&self, rng: &mut RngState) -> f64 {
        let k = rng.below(self.centres.len() + 1);
        if k == self.centres.len() {
            return rng.uniform_range(self.lo, self.hi);
        }
        let mu = self.centres[k];
        for _ in 0..100 {
            let x = mu + self.bandwidth * rng.normal();
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        mu.clamp(self.lo, self.hi)
    }
}
