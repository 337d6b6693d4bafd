//! Bernoulli estimates and distribution-level statistics.

pub mod mi;
pub mod spearman;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{Measurement, Validity};
use crate::norms::NormsTable;
use crate::schema::{ContextSetting, Gender, OptionOrder, Template};
pub use mi::{feature_mi_table, mi_discrete, mi_knn, Feature, MiEstimator, MiKnn, MiRow, Regime};
pub use spearman::{ranks, spearman, spearman_permutation, spearman_table, SpearmanResult, SpearmanRow};

/// Default add-ε smoothing for KL divergence.
pub const DEFAULT_KL_EPSILON: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no template has valid measurements in every analyzed setting")]
    EmptyValidSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOrder {
    MascFem,
    FemMasc,
    Pooled,
}

impl From<OptionOrder> for CellOrder {
    fn from(o: OptionOrder) -> Self {
        match o {
            OptionOrder::MascFem => CellOrder::MascFem,
            OptionOrder::FemMasc => CellOrder::FemMasc,
        }
    }
}

impl CellOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            CellOrder::MascFem => "masc_fem",
            CellOrder::FemMasc => "fem_masc",
            CellOrder::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliEstimate {
    pub template_id: String,
    pub setting: ContextSetting,
    pub order: CellOrder,
    /// All recorded trials, valid or not.
    pub n_trials: u64,
    pub n_valid: u64,
    pub n_feminine: u64,
    pub p_hat: f64,
}

type CellKey = (String, ContextSetting, CellOrder);

/// Estimates keyed by (template, setting, order), iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateTable {
    cells: BTreeMap<CellKey, BernoulliEstimate>,
}

impl EstimateTable {
    pub fn from_estimates(estimates: impl IntoIterator<Item = BernoulliEstimate>) -> Self {
        Self {
            cells: estimates
                .into_iter()
                .map(|e| ((e.template_id.clone(), e.setting, e.order), e))
                .collect(),
        }
    }

    pub fn get(&self, template_id: &str, setting: ContextSetting, order: CellOrder) -> Option<&BernoulliEstimate> {
        self.cells.get(&(template_id.to_string(), setting, order))
    }

    pub fn pooled(&self, template_id: &str, setting: ContextSetting) -> Option<&BernoulliEstimate> {
        self.get(template_id, setting, CellOrder::Pooled)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BernoulliEstimate> {
        self.cells.values()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn to_vec(&self) -> Vec<BernoulliEstimate> {
        self.cells.values().cloned().collect()
    }

    pub fn template_ids(&self) -> BTreeSet<String> {
        self.cells.keys().map(|k| k.0.clone()).collect()
    }
}

/// One estimate per (template, setting, order) cell with valid trials, plus
/// the order-pooled cell. Invalid measurements only count toward `n_trials`.
pub fn estimate(measurements: &[Measurement]) -> EstimateTable {
    let mut counts: BTreeMap<CellKey, (u64, u64, u64)> = BTreeMap::new();
    for m in measurements {
        let valid = m.validity == Validity::Valid;
        let fem = valid && m.gender == Some(Gender::Feminine);
        for order in [CellOrder::from(m.order), CellOrder::Pooled] {
            let c = counts
                .entry((m.template_id.clone(), m.setting, order))
                .or_default();
            c.0 += 1;
            c.1 += valid as u64;
            c.2 += fem as u64;
        }
    }
    EstimateTable {
        cells: counts
            .into_iter()
            .filter(|(_, c)| c.1 > 0)
            .map(|((template_id, setting, order), (n_trials, n_valid, n_feminine))| {
                let key = (template_id.clone(), setting, order);
                let est = BernoulliEstimate {
                    template_id,
                    setting,
                    order,
                    n_trials,
                    n_valid,
                    n_feminine,
                    p_hat: n_feminine as f64 / n_valid as f64,
                };
                (key, est)
            })
            .collect(),
    }
}

/// Templates with a valid pooled estimate in every one of `settings`.
pub fn valid_template_set(table: &EstimateTable, settings: &[ContextSetting]) -> BTreeSet<String> {
    table
        .template_ids()
        .into_iter()
        .filter(|t| settings.iter().all(|&s| table.pooled(t, s).is_some()))
        .collect()
}

fn xlog2(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).log2()
    }
}

/// Bernoulli KL divergence D(p || q) in bits. With `smoothing` ε > 0 both
/// probabilities are first replaced by (n·p + ε) / (n + 2ε).
pub fn kl_bernoulli(p: f64, q: f64, smoothing: f64, n_p: u64, n_q: u64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(StatsError::Precondition(format!(
            "probabilities must lie in [0, 1], got p = {p}, q = {q}"
        )));
    }
    if !(smoothing >= 0.0) {
        return Err(StatsError::Precondition("smoothing must be >= 0".into()));
    }
    let smooth = |x: f64, n: u64| {
        if smoothing > 0.0 {
            let n = n as f64;
            ((x * n).round() + smoothing) / (n + 2.0 * smoothing)
        } else {
            x
        }
    };
    let (p, q) = (smooth(p, n_p), smooth(q, n_q));
    if p == q {
        return Ok(0.0);
    }
    if (q == 0.0 && p > 0.0) || (q == 1.0 && p < 1.0) {
        return Err(StatsError::Domain(format!(
            "divergence from q = {q} is infinite for p = {p}; use smoothing > 0"
        )));
    }
    Ok((xlog2(p, q) + xlog2(1.0 - p, 1.0 - q)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanKl {
    pub setting: ContextSetting,
    pub baseline: ContextSetting,
    pub epsilon: f64,
    pub n_templates: usize,
    pub mean_bits: f64,
    pub se_bits: f64,
    pub per_template: BTreeMap<String, f64>,
}

/// Mean over `valid_set` of KL(p̂_i(f|setting) || p̂_i(f|baseline)), pooled orders.
pub fn mean_kl(
    table: &EstimateTable,
    setting: ContextSetting,
    baseline: ContextSetting,
    valid_set: &BTreeSet<String>,
    epsilon: f64,
) -> Result<MeanKl, StatsError> {
    if valid_set.is_empty() {
        return Err(StatsError::EmptyValidSet);
    }
    let mut per_template = BTreeMap::new();
    for t in valid_set {
        let missing = || StatsError::Precondition(format!("template {t} lacks a pooled estimate"));
        let p = table.pooled(t, setting).ok_or_else(missing)?;
        let q = table.pooled(t, baseline).ok_or_else(missing)?;
        let kl = kl_bernoulli(p.p_hat, q.p_hat, epsilon, p.n_valid, q.n_valid).map_err(|e| {
            StatsError::Domain(format!("template {t}, {setting} vs {baseline}: {e}"))
        })?;
        per_template.insert(t.clone(), kl);
    }
    let (mean, se) = mean_se(per_template.values().copied());
    Ok(MeanKl {
        setting,
        baseline,
        epsilon,
        n_templates: per_template.len(),
        mean_bits: mean,
        se_bits: se,
        per_template,
    })
}

/// Mean and standard error of the mean (0 for fewer than two values).
pub fn mean_se(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Femininity rating of each template's target antecedent, when known.
pub fn join_norms(templates: &[Template], norms: &NormsTable) -> BTreeMap<String, Option<f64>> {
    templates
        .iter()
        .map(|t| (t.template_id.clone(), norms.lookup(t.target_noun())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub setting: ContextSetting,
    pub n_templates: usize,
    /// Templates with p̂ exactly 0 and exactly 1.
    pub at_zero: usize,
    pub at_one: usize,
    /// Interior values counted in equal-width bins over (0, 1).
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

/// Distribution of pooled p̂ over templates for one setting.
pub fn histogram(
    table: &EstimateTable,
    setting: ContextSetting,
    valid_set: &BTreeSet<String>,
    bins: usize,
) -> Histogram {
    let bins = bins.max(1);
    let mut h = Histogram {
        setting,
        n_templates: 0,
        at_zero: 0,
        at_one: 0,
        bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        bin_counts: vec![0; bins],
    };
    for t in valid_set {
        let Some(e) = table.pooled(t, setting) else {
            continue;
        };
        h.n_templates += 1;
        match e.p_hat {
            p if p == 0.0 => h.at_zero += 1,
            p if p == 1.0 => h.at_one += 1,
            p => h.bin_counts[((p * bins as f64) as usize).min(bins - 1)] += 1,
        }
    }
    h
}
