//! Rank correlation with tie correction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{EstimateTable, StatsError};
use crate::schema::ContextSetting;

/// Average ranks (1-based); ties share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub n: usize,
    pub rho: Option<f64>,
    /// Two-sided p-value from the t approximation with n − 2 degrees of freedom.
    pub p_value: Option<f64>,
    /// Two-sided permutation p-value, when requested; preferred when the two disagree.
    pub p_permutation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Precondition(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::Precondition(format!("need at least 3 pairs, got {n}")));
    }
    let Some(rho) = pearson(&ranks(x), &ranks(y)) else {
        return Ok(SpearmanResult {
            n,
            rho: None,
            p_value: None,
            p_permutation: None,
            flag: Some("constant input; correlation undefined".into()),
        });
    };
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(SpearmanResult {
        n,
        rho: Some(rho),
        p_value: Some(p_value),
        p_permutation: None,
        flag: None,
    })
}

/// Two-sided permutation p-value (add-one corrected) for Spearman's rho.
pub fn spearman_permutation(x: &[f64], y: &[f64], replicates: usize, seed: u64) -> Option<f64> {
    let rx = ranks(x);
    let mut ry = ranks(y);
    let observed = pearson(&rx, &ry)?.abs();
    let mut rng = crate::seed::rng(seed);
    let mut extreme = 0usize;
    for _ in 0..replicates {
        ry.shuffle(&mut rng);
        if pearson(&rx, &ry).map_or(0.0, f64::abs) >= observed - 1e-12 {
            extreme += 1;
        }
    }
    Some((extreme + 1) as f64 / (replicates + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub setting: ContextSetting,
    #[serde(flatten)]
    pub result: SpearmanResult,
}

/// Correlation of each template's femininity rating with its pooled p̂ per setting,
/// over valid templates with a known rating.
pub fn spearman_table(
    table: &EstimateTable,
    ratings: &BTreeMap<String, Option<f64>>,
    settings: &[ContextSetting],
    valid_set: &BTreeSet<String>,
    permutation_replicates: usize,
    seed: u64,
) -> Vec<SpearmanRow> {
    settings
        .iter()
        .map(|&setting| {
            let (x, y): (Vec<f64>, Vec<f64>) = valid_set
                .iter()
                .filter_map(|t| {
                    let r = ratings.get(t).copied().flatten()?;
                    Some((r, table.pooled(t, setting)?.p_hat))
                })
                .unzip();
            let mut result = spearman(&x, &y).unwrap_or_else(|e| SpearmanResult {
                n: x.len(),
                rho: None,
                p_value: None,
                p_permutation: None,
                flag: Some(e.to_string()),
            });
            if permutation_replicates > 0 && result.rho.is_some() {
                let s = crate::seed::substream(seed, setting.as_str());
                result.p_permutation = spearman_permutation(&x, &y, permutation_replicates, s);
            }
            SpearmanRow { setting, result }
        })
        .collect()
}
