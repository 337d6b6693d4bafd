//! Mutual information between prompt features and the generated pronoun.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::{mean_se, StatsError};
use crate::collector::{Measurement, Validity};
use crate::schema::{ContextSetting, Gender, Template};

/// Plug-in MI (bits) from the joint contingency table of two categorical columns.
pub fn mi_discrete<A: Ord, B: Ord>(x: &[A], f: &[B]) -> Result<f64, StatsError> {
    if x.len() != f.len() || x.is_empty() {
        return Err(StatsError::Precondition(format!(
            "need equal nonzero lengths, got {} and {}",
            x.len(),
            f.len()
        )));
    }
    let n = x.len() as f64;
    let mut joint: BTreeMap<(&A, &B), f64> = BTreeMap::new();
    let mut px: BTreeMap<&A, f64> = BTreeMap::new();
    let mut pf: BTreeMap<&B, f64> = BTreeMap::new();
    for (a, b) in x.iter().zip(f) {
        *joint.entry((a, b)).or_default() += 1.0;
        *px.entry(a).or_default() += 1.0;
        *pf.entry(b).or_default() += 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &nab)| nab / n * (nab * n / (px[a] * pf[b])).log2())
        .sum();
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiKnn {
    pub bits: f64,
    /// Classes that were dropped (singletons) or used a reduced k.
    pub flags: Vec<String>,
}

/// Distance from `v[i]` to its k-th nearest neighbour within sorted `v`.
fn kth_distance(v: &[f64], i: usize, k: usize) -> f64 {
    let lo = i.saturating_sub(k);
    let hi = i.min(v.len() - 1 - k);
    (lo..=hi)
        .map(|l| (v[i] - v[l]).max(v[l + k] - v[i]))
        .fold(f64::INFINITY, f64::min)
}

fn just_below(d: f64) -> f64 {
    if d > 0.0 {
        f64::from_bits(d.to_bits() - 1)
    } else {
        0.0
    }
}

/// Nearest-neighbour MI (bits) between a discrete label and a continuous
/// feature. The feature is scaled to unit variance and perturbed by Gaussian
/// noise of amplitude 1e-10 × max(1, mean |f|) to break distance ties.
/// Classes with one member are ignored; classes smaller than k + 1 use k = size − 1.
pub fn mi_knn<L: Ord + std::fmt::Debug>(
    labels: &[L],
    f: &[f64],
    k: usize,
    seed: u64,
) -> Result<MiKnn, StatsError> {
    let n = labels.len();
    if n != f.len() {
        return Err(StatsError::Precondition(format!(
            "length mismatch: {n} vs {}",
            f.len()
        )));
    }
    if k == 0 || n < k + 1 {
        return Err(StatsError::Precondition(format!(
            "need k >= 1 and at least k + 1 samples (k = {k}, n = {n})"
        )));
    }
    let mean = f.iter().sum::<f64>() / n as f64;
    let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let mut rng = crate::seed::rng(seed);
    let scaled: Vec<f64> = f.iter().map(|v| v / scale).collect();
    let amp = 1e-10 * (scaled.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1.0);
    let values: Vec<f64> = scaled
        .iter()
        .map(|v| v + amp * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut classes: BTreeMap<&L, Vec<f64>> = BTreeMap::new();
    for (l, &v) in labels.iter().zip(&values) {
        classes.entry(l).or_default().push(v);
    }
    let mut flags = Vec::new();
    // (value, radius, k used, class size)
    let mut points: Vec<(f64, f64, usize, usize)> = Vec::with_capacity(n);
    for (label, mut vs) in classes {
        let count = vs.len();
        if count < 2 {
            flags.push(format!("class {label:?} has a single member and is ignored"));
            continue;
        }
        let kc = k.min(count - 1);
        if kc < k {
            flags.push(format!("class {label:?} has {count} members; using k = {kc}"));
        }
        vs.sort_by(f64::total_cmp);
        for i in 0..count {
            points.push((vs[i], just_below(kth_distance(&vs, i, kc)), kc, count));
        }
    }
    if points.is_empty() {
        return Ok(MiKnn { bits: 0.0, flags });
    }
    let mut all: Vec<f64> = points.iter().map(|p| p.0).collect();
    all.sort_by(f64::total_cmp);
    let m = points.len() as f64;
    let (mut sum_k, mut sum_count, mut sum_m) = (0.0, 0.0, 0.0);
    for &(v, r, kc, count) in &points {
        let lo = all.partition_point(|&u| v - u > r);
        let hi = all.partition_point(|&u| u - v <= r);
        sum_k += digamma(kc as f64);
        sum_count += digamma(count as f64);
        sum_m += digamma((hi - lo) as f64);
    }
    let nats = digamma(m) + (sum_k - sum_count - sum_m) / m;
    Ok(MiKnn {
        bits: nats.max(0.0) / LN_2,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Unprimed,
    Primed,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Unprimed => "unprimed",
            Regime::Primed => "primed",
        }
    }

    fn includes(self, s: ContextSetting) -> bool {
        match self {
            Regime::Unprimed => s == ContextSetting::Unprimed,
            Regime::Primed => s.is_discourse_primed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    PrimeGender,
    RoleType,
    Stereotype,
    Case,
    Order,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::PrimeGender => "prime_gender",
            Feature::RoleType => "role_type",
            Feature::Stereotype => "stereotype",
            Feature::Case => "case",
            Feature::Order => "order",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiEstimator {
    Discrete,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub regime: Regime,
    pub feature: Feature,
    pub estimator: MiEstimator,
    pub n_samples: usize,
    pub n_templates: usize,
    /// MI over all individual measurements in the regime.
    pub mi_bits: Option<f64>,
    /// Mean and standard error over template folds.
    pub fold_mean_bits: Option<f64>,
    pub se_bits: Option<f64>,
    pub n_folds: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiOptions {
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for MiOptions {
    fn default() -> Self {
        Self {
            k: 3,
            folds: 10,
            seed: 0,
        }
    }
}

struct Sample {
    template: usize,
    fold: usize,
    fem: bool,
    prime: u8,
    role: u8,
    case: u8,
    order: u8,
    rating: Option<f64>,
}

fn feature_code(s: &Sample, feature: Feature) -> Option<u64> {
    Some(match feature {
        Feature::PrimeGender => s.prime as u64,
        Feature::RoleType => s.role as u64,
        Feature::Case => s.case as u64,
        Feature::Order => s.order as u64,
        Feature::Stereotype => s.rating?.to_bits(),
    })
}

fn estimate_one(
    samples: &[&Sample],
    feature: Feature,
    estimator: MiEstimator,
    opts: &MiOptions,
    stream: &str,
) -> Result<MiKnn, StatsError> {
    let used: Vec<&&Sample> = samples
        .iter()
        .filter(|s| feature_code(s, feature).is_some())
        .collect();
    let y: Vec<bool> = used.iter().map(|s| s.fem).collect();
    match estimator {
        MiEstimator::Discrete => {
            let x: Vec<u64> = used.iter().map(|s| feature_code(s, feature).unwrap()).collect();
            mi_discrete(&x, &y).map(|bits| MiKnn {
                bits,
                flags: Vec::new(),
            })
        }
        MiEstimator::Knn => {
            let x: Vec<f64> = used.iter().map(|s| s.rating.unwrap_or(0.0)).collect();
            mi_knn(&y, &x, opts.k, crate::seed::substream(opts.seed, stream))
        }
    }
}

/// MI between each feature and the generated pronoun, per regime. Only valid
/// measurements of templates in `valid_set` contribute. The stereotype
/// feature is estimated both with the nearest-neighbour estimator
/// (continuous ratings) and the plug-in estimator (ratings as categories).
pub fn feature_mi_table(
    measurements: &[Measurement],
    templates: &[Template],
    ratings: &BTreeMap<String, Option<f64>>,
    valid_set: &BTreeSet<String>,
    opts: &MiOptions,
) -> Vec<MiRow> {
    let folds = opts.folds.max(1);
    let index: BTreeMap<&str, (usize, &Template)> = templates
        .iter()
        .enumerate()
        .map(|(i, t)| (t.template_id.as_str(), (i, t)))
        .collect();
    let mut valid: Vec<&Measurement> = measurements
        .iter()
        .filter(|m| m.validity == Validity::Valid && valid_set.contains(&m.template_id))
        .collect();
    // canonical order keeps tie-breaking noise independent of log order
    valid.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));

    let samples: Vec<(ContextSetting, Sample)> = valid
        .iter()
        .filter_map(|m| {
            let (ti, t) = index.get(m.template_id.as_str())?;
            let fold_key = crate::seed::short_id(&[&t.template_id]);
            let fold = (u64::from_str_radix(&fold_key[..8], 16).unwrap_or(0) % folds as u64) as usize;
            Some((
                m.setting,
                Sample {
                    template: *ti,
                    fold,
                    fem: m.gender == Some(Gender::Feminine),
                    prime: match m.setting.prime_gender() {
                        Some(Gender::Feminine) => 1,
                        Some(Gender::Masculine) => 2,
                        None => 0,
                    },
                    role: t.target_role_kind as u8,
                    case: t.pronoun_case as u8,
                    order: m.order as u8,
                    rating: ratings.get(&t.template_id).copied().flatten(),
                },
            ))
        })
        .collect();

    let mut rows = Vec::new();
    for regime in [Regime::Unprimed, Regime::Primed] {
        let in_regime: Vec<&Sample> = samples
            .iter()
            .filter(|(s, _)| regime.includes(*s))
            .map(|(_, x)| x)
            .collect();
        let mut features = vec![
            (Feature::RoleType, MiEstimator::Discrete),
            (Feature::Stereotype, MiEstimator::Knn),
            (Feature::Stereotype, MiEstimator::Discrete),
            (Feature::Case, MiEstimator::Discrete),
            (Feature::Order, MiEstimator::Discrete),
        ];
        if regime == Regime::Primed {
            features.insert(0, (Feature::PrimeGender, MiEstimator::Discrete));
        }
        for (feature, estimator) in features {
            let stream = format!("{}/{}/{:?}", regime.as_str(), feature.as_str(), estimator);
            let used: Vec<&Sample> = in_regime
                .iter()
                .copied()
                .filter(|s| feature_code(s, feature).is_some())
                .collect();
            let n_templates = used.iter().map(|s| s.template).collect::<BTreeSet<_>>().len();
            let mut notes = Vec::new();
            let mi_bits = match estimate_one(&used, feature, estimator, opts, &stream) {
                Ok(r) => {
                    notes.extend(r.flags);
                    Some(r.bits)
                }
                Err(e) => {
                    notes.push(e.to_string());
                    None
                }
            };
            let fold_values: Vec<f64> = (0..folds)
                .filter_map(|f| {
                    let part: Vec<&Sample> = used.iter().copied().filter(|s| s.fold == f).collect();
                    if part.is_empty() {
                        return None;
                    }
                    estimate_one(&part, feature, estimator, opts, &format!("{stream}/fold{f}"))
                        .ok()
                        .map(|r| r.bits)
                })
                .collect();
            let (fold_mean, se) = mean_se(fold_values.iter().copied());
            let n_folds = fold_values.len();
            rows.push(MiRow {
                regime,
                feature,
                estimator,
                n_samples: used.len(),
                n_templates,
                mi_bits,
                fold_mean_bits: (n_folds > 0).then_some(fold_mean),
                se_bits: (n_folds > 1).then_some(se),
                n_folds,
                notes,
            });
        }
    }
    rows
}

/// Feature with the largest pooled MI in a regime, over all estimators.
pub fn top_feature(rows: &[MiRow], regime: Regime) -> Option<Feature> {
    rows.iter()
        .filter(|r| r.regime == regime)
        .filter_map(|r| Some((r.mi_bits?, r.feature)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, f)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    #[test]
    fn discrete_fixtures() {
        let x = [0, 1, 0, 1];
        assert!((mi_discrete(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        // product table
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        assert_eq!(mi_discrete(&a, &b).unwrap(), 0.0);
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (x, f, n) in [(0, 0, 30), (0, 1, 10), (1, 0, 10), (1, 1, 30)] {
            xs.extend(std::iter::repeat_n(x, n));
            fs.extend(std::iter::repeat_n(f, n));
        }
        assert!((mi_discrete(&xs, &fs).unwrap() - 0.188722).abs() < 1e-6);
    }

    #[test]
    fn knn_kth_distance_window() {
        let v = [0.0, 1.0, 3.0, 6.0];
        assert_eq!(kth_distance(&v, 0, 1), 1.0);
        assert_eq!(kth_distance(&v, 1, 2), 2.0);
        assert_eq!(kth_distance(&v, 3, 1), 3.0);
    }

    /// Brute-force reference of the same estimator for small inputs.
    fn brute_knn(labels: &[u8], v: &[f64], k: usize) -> f64 {
        let n = v.len();
        let (mut sk, mut sc, mut sm, mut used) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let same: Vec<f64> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| (v[j] - v[i]).abs())
                .collect();
            if same.is_empty() {
                continue;
            }
            let kc = k.min(same.len());
            let mut d = same.clone();
            d.sort_by(f64::total_cmp);
            let r = just_below(d[kc - 1]);
            let m = (0..n)
                .filter(|&j| {
                    labels.iter().filter(|&&l| l == labels[j]).count() > 1 && (v[j] - v[i]).abs() <= r
                })
                .count();
            sk += digamma(kc as f64);
            sc += digamma((same.len() + 1) as f64);
            sm += digamma(m as f64);
            used += 1.0;
        }
        ((digamma(used) + (sk - sc - sm) / used).max(0.0)) / LN_2
    }

    #[test]
    fn knn_matches_brute_force_on_distinct_values() {
        let mut rng = crate::seed::rng(1);
        let labels: Vec<u8> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let v: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 + rng.random::<f64>() * 2.0)
            .collect();
        // zero noise seed effect is negligible at 1e-10 but rescaling matters: compare on scaled data
        let mean = v.iter().sum::<f64>() / 60.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 60.0).sqrt();
        let scaled: Vec<f64> = v.iter().map(|x| x / sd).collect();
        let fast = mi_knn(&labels, &v, 3, 7).unwrap().bits;
        let slow = brute_knn(&labels, &scaled, 3);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }

    #[test]
    fn singleton_classes_are_flagged() {
        let labels = [0, 0, 0, 0, 0, 1];
        let f = [0.1, 0.2, 0.3, 0.4, 0.5, 9.0];
        let r = mi_knn(&labels, &f, 3, 0).unwrap();
        assert!(r.flags.iter().any(|s| s.contains("single member")));
        assert!(mi_knn(&[0, 1], &[0.0, 1.0], 3, 0).is_err());
    }

    #[test]
    fn copied_binary_label_gives_one_bit() {
        let mut rng = crate::seed::rng(2);
        let labels: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let f: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 + 1e-3 * rng.random::<f64>())
            .collect();
        let bits = mi_knn(&labels, &f, 3, 3).unwrap().bits;
        assert!((bits - 1.0).abs() < 0.1, "{bits}");
    }

    proptest! {
        #[test]
        fn discrete_nonnegative_and_relabel_invariant(v in prop::collection::vec((0u8..4, 0u8..3), 1..80)) {
            let (x, f): (Vec<u8>, Vec<u8>) = v.into_iter().unzip();
            let a = mi_discrete(&x, &f).unwrap();
            let relabeled: Vec<u8> = x.iter().map(|c| 3 - c).collect();
            let b = mi_discrete(&relabeled, &f).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
            let hx = mi_discrete(&x, &x).unwrap();
            let mut counts = BTreeMap::new();
            for c in &x { *counts.entry(c).or_insert(0.0) += 1.0; }
            let n = x.len() as f64;
            let entropy: f64 = counts.values().map(|c: &f64| -(c / n) * (c / n).log2()).sum();
            prop_assert!((hx - entropy).abs() < 1e-9);
        }
    }
}
