//! Report sections, the fragments that carry them between subcommands, and
//! the flat tables written next to the structured report.

pub mod tables;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cbd::{
    analyze_pairs, contextuality_summary, overlap_matrix, CbdError, CbdOptions,
    ContextualitySummary, DeltaCResult, PoolingRule, SkippedPair,
};
use crate::collector::{Measurement, MetapromptReport, RunHeader, ValidityReport};
use crate::config::RunConfig;
use crate::norms::NormsTable;
use crate::schema::{pair_index, ContextSetting, SchemaError, Template};
use crate::stats::mi::{feature_mi_table, top_feature, Feature, MiOptions, MiRow, Regime};
use crate::stats::spearman::{spearman_table, SpearmanRow};
use crate::stats::{
    estimate, histogram, join_norms, mean_kl, mean_se, valid_template_set, BernoulliEstimate,
    EstimateTable, Histogram, MeanKl, StatsError,
};

pub const REPORT_FORMAT: &str = "ctxaudit-report/1";

/// Provenance shared by every fragment of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentHeader {
    pub schema_hash: String,
    /// Absent for fragments that do not read the measurement log.
    pub log_hash: Option<String>,
    pub config_hash: String,
}

impl FragmentHeader {
    /// Same schema and config, and the same log when both name one.
    pub fn consistent_with(&self, other: &FragmentHeader) -> bool {
        self.schema_hash == other.schema_hash
            && self.config_hash == other.config_hash
            && match (&self.log_hash, &other.log_hash) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment<T> {
    pub header: FragmentHeader,
    pub data: T,
}

/// Hash of the deduplicated, trial-ordered measurements, so it does not
/// depend on line order in the log file.
pub fn log_hash(measurements: &[Measurement]) -> String {
    let mut sorted: Vec<&Measurement> = measurements.iter().collect();
    sorted.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let mut bytes = Vec::new();
    for m in sorted {
        serde_json::to_writer(&mut bytes, m).expect("measurement serializes");
        bytes.push(b'\n');
    }
    crate::seed::sha256_hex(&bytes)
}

/// Analysis knobs for the statistics section.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsParams {
    pub settings: Vec<ContextSetting>,
    pub kl_epsilon: f64,
    pub histogram_bins: usize,
    pub spearman_permutations: usize,
    pub spearman_seed: u64,
    pub mi: MiOptions,
}

impl StatsParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            settings: cfg.settings.clone(),
            kl_epsilon: cfg.kl_epsilon,
            histogram_bins: cfg.histogram_bins,
            spearman_permutations: cfg.spearman_permutations,
            spearman_seed: cfg.spearman_seed(),
            mi: MiOptions {
                k: cfg.mi.k,
                folds: cfg.mi.folds,
                seed: cfg.mi_seed(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidSetSummary {
    pub n_templates: usize,
    pub n_valid: usize,
    /// Templates lacking a valid estimate in some analyzed setting.
    pub excluded: Vec<String>,
}

/// Mean over templates of |p̂(f|primed_feminine) − p̂(f|primed_masculine)|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimeShift {
    pub n_templates: usize,
    pub mean_abs_diff: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormsCoverage {
    pub provenance: Option<String>,
    pub n_templates: usize,
    pub n_rated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSection {
    pub valid_templates: ValidSetSummary,
    pub estimates: Vec<BernoulliEstimate>,
    pub distribution: Vec<Histogram>,
    pub mean_kl: Vec<MeanKl>,
    pub prime_shift: Option<PrimeShift>,
    pub norms: NormsCoverage,
    pub spearman: Vec<SpearmanRow>,
    pub mi: Vec<MiRow>,
    pub top_feature: BTreeMap<Regime, Option<Feature>>,
}

/// Every statistic over the valid template set. Fails when no template has
/// valid measurements in every analyzed setting.
pub fn compute_stats(
    templates: &[Template],
    norms: Option<&NormsTable>,
    measurements: &[Measurement],
    params: &StatsParams,
) -> Result<StatsSection, StatsError> {
    let table = estimate(measurements);
    let valid_set = valid_template_set(&table, &params.settings);
    if valid_set.is_empty() {
        return Err(StatsError::EmptyValidSet);
    }
    let logged = table.template_ids();
    let ratings = match norms {
        Some(n) => join_norms(templates, n),
        None => templates.iter().map(|t| (t.template_id.clone(), None)).collect(),
    };

    let distribution = params
        .settings
        .iter()
        .map(|&s| histogram(&table, s, &valid_set, params.histogram_bins))
        .collect();
    let mut kl = Vec::new();
    if params.settings.contains(&ContextSetting::Unprimed) {
        for &s in params.settings.iter().filter(|&&s| s != ContextSetting::Unprimed) {
            kl.push(mean_kl(&table, s, ContextSetting::Unprimed, &valid_set, params.kl_epsilon)?);
        }
    }
    let prime_shift = prime_shift(&table, &valid_set);
    let mi = feature_mi_table(measurements, templates, &ratings, &valid_set, &params.mi);
    let top = [Regime::Unprimed, Regime::Primed]
        .into_iter()
        .map(|r| (r, top_feature(&mi, r)))
        .collect();
    Ok(StatsSection {
        valid_templates: ValidSetSummary {
            n_templates: logged.len(),
            n_valid: valid_set.len(),
            excluded: logged.difference(&valid_set).cloned().collect(),
        },
        estimates: table.to_vec(),
        distribution,
        mean_kl: kl,
        prime_shift,
        norms: NormsCoverage {
            provenance: norms.map(|n| n.provenance.clone()),
            n_templates: valid_set.len(),
            n_rated: valid_set
                .iter()
                .filter(|t| ratings.get(*t).copied().flatten().is_some())
                .count(),
        },
        spearman: spearman_table(
            &table,
            &ratings,
            &params.settings,
            &valid_set,
            params.spearman_permutations,
            params.spearman_seed,
        ),
        mi,
        top_feature: top,
    })
}

fn prime_shift(table: &EstimateTable, valid_set: &BTreeSet<String>) -> Option<PrimeShift> {
    let diffs: Vec<f64> = valid_set
        .iter()
        .filter_map(|t| {
            let f = table.pooled(t, ContextSetting::PrimedFeminine)?;
            let m = table.pooled(t, ContextSetting::PrimedMasculine)?;
            Some((f.p_hat - m.p_hat).abs())
        })
        .collect();
    if diffs.is_empty() {
        return None;
    }
    let (mean, se) = mean_se(diffs.iter().copied());
    Some(PrimeShift {
        n_templates: diffs.len(),
        mean_abs_diff: mean,
        se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub runs: Vec<String>,
    /// Shared contextual pairs for every pair of runs.
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbdSection {
    pub options: CbdOptions,
    pub results: Vec<DeltaCResult>,
    pub skipped: Vec<SkippedPair>,
    /// Summary under the configured pooling rule.
    pub summary: ContextualitySummary,
    /// The same results summarized under the other pooling rules.
    pub alternatives: Vec<ContextualitySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<Overlap>,
}

#[derive(Debug, thiserror::Error)]
pub enum CbdSectionError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Cbd(#[from] CbdError),
}

pub fn compute_cbd(
    templates: &[Template],
    measurements: &[Measurement],
    options: &CbdOptions,
    pooling: PoolingRule,
) -> Result<CbdSection, CbdSectionError> {
    options.validate()?;
    let pairs = pair_index(templates)?;
    let table = estimate(measurements);
    let analysis = analyze_pairs(&table, &pairs, options);
    if analysis.results.is_empty() {
        return Err(CbdError::Precondition(format!(
            "no pair has primed estimates ({} pairs skipped)",
            analysis.skipped.len()
        ))
        .into());
    }
    let summary = contextuality_summary(&analysis.results, pooling)?;
    let alternatives = [PoolingRule::Either, PoolingRule::Both, PoolingRule::PooledCounts]
        .into_iter()
        .filter(|&r| r != pooling)
        .map(|r| contextuality_summary(&analysis.results, r))
        .collect::<Result<_, _>>()?;
    Ok(CbdSection {
        options: *options,
        results: analysis.results,
        skipped: analysis.skipped,
        summary,
        alternatives,
        overlap: None,
    })
}

/// Overlap of this run's contextual pairs with other runs' sections.
pub fn attach_overlap(section: &mut CbdSection, label: &str, others: &[(String, CbdSection)]) {
    let mut runs = vec![label.to_string()];
    let mut sets = vec![section.summary.contextual_pairs.clone()];
    for (name, other) in others {
        runs.push(name.clone());
        sets.push(other.summary.contextual_pairs.clone());
    }
    section.overlap = Some(Overlap {
        matrix: overlap_matrix(&sets),
        runs,
    });
}

/// A section that may be missing from a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Part<T> {
    Present(T),
    Absent,
}

impl<T> Part<T> {
    pub fn present(&self) -> Option<&T> {
        match self {
            Part::Present(t) => Some(t),
            Part::Absent => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub header: FragmentHeader,
    pub run: RunHeader,
    pub config: serde_json::Value,
    pub validity: ValidityReport,
    pub stats: StatsSection,
    pub cbd: Part<CbdSection>,
    pub metaprompt: Part<MetapromptReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, Gateway, MockConfig, Strategy};
    use crate::collector::{execute_plans, plan_trials};
    use crate::schema::OptionOrder;

    fn run(strategy: Strategy, n: u32) -> (Vec<Template>, Vec<Measurement>) {
        let templates = crate::synthetic::schema(4);
        let plans = plan_trials(&templates, &ContextSetting::ALL, &OptionOrder::ALL, n).unwrap();
        let mut cfg = BackendConfig {
            mock: MockConfig {
                strategy,
                ..MockConfig::default()
            },
            ..BackendConfig::default()
        };
        cfg.params.seed = Some(3);
        let gw = Gateway::from_config(&cfg).unwrap();
        (templates, execute_plans(&plans, &gw))
    }

    fn params() -> StatsParams {
        StatsParams::from_config(&RunConfig {
            spearman_permutations: 200,
            ..RunConfig::default()
        })
    }

    #[test]
    fn stats_section_is_complete() {
        let (t, ms) = run(Strategy::PrimeRepeater { repeat_prob: 0.9 }, 30);
        let norms = crate::synthetic::norms(&t, 1.0, 2);
        let s = compute_stats(&t, Some(&norms), &ms, &params()).unwrap();
        assert_eq!(s.valid_templates.n_valid, 8);
        assert_eq!(s.distribution.len(), 5);
        assert_eq!(s.mean_kl.len(), 4);
        assert_eq!(s.spearman.len(), 5);
        assert_eq!(s.top_feature[&Regime::Primed], Some(Feature::PrimeGender));
        assert!(s.prime_shift.unwrap().mean_abs_diff > 0.6);
        assert_eq!(s.norms.n_rated, 8);
    }

    #[test]
    fn invalid_measurements_do_not_move_statistics() {
        let (t, ms) = run(Strategy::Uniform, 20);
        let mut with_invalid = ms.clone();
        for m in with_invalid.iter_mut().step_by(7) {
            m.validity = crate::collector::Validity::MalformedFormat;
            m.parsed = None;
            m.gender = None;
        }
        let kept: Vec<Measurement> = with_invalid
            .iter()
            .filter(|m| m.validity == crate::collector::Validity::Valid)
            .cloned()
            .collect();
        let a = compute_stats(&t, None, &with_invalid, &params()).unwrap();
        let b = compute_stats(&t, None, &kept, &params()).unwrap();
        assert_eq!(a.mean_kl, b.mean_kl);
        assert_eq!(a.mi, b.mi);
        assert_eq!(a.distribution, b.distribution);
        let opts = CbdOptions {
            bootstrap_replicates: 100,
            ..CbdOptions::default()
        };
        let ca = compute_cbd(&t, &with_invalid, &opts, PoolingRule::Either).unwrap();
        let cb = compute_cbd(&t, &kept, &opts, PoolingRule::Either).unwrap();
        let strip = |s: &CbdSection| s.results.iter().map(|r| (r.delta_c, r.ci)).collect::<Vec<_>>();
        assert_eq!(strip(&ca), strip(&cb));
    }

    #[test]
    fn empty_valid_set_is_an_error() {
        let (t, ms) = run(Strategy::Uniform, 2);
        let only_unprimed: Vec<Measurement> = ms
            .into_iter()
            .filter(|m| m.setting == ContextSetting::Unprimed)
            .collect();
        assert!(matches!(
            compute_stats(&t, None, &only_unprimed, &params()),
            Err(StatsError::EmptyValidSet)
        ));
        assert!(compute_cbd(&t, &only_unprimed, &CbdOptions::default(), PoolingRule::Either).is_err());
    }

    #[test]
    fn headers_and_log_hash() {
        let (_, ms) = run(Strategy::Uniform, 2);
        let mut rev = ms.clone();
        rev.reverse();
        assert_eq!(log_hash(&ms), log_hash(&rev));
        let h = FragmentHeader {
            schema_hash: "s".into(),
            log_hash: Some("l".into()),
            config_hash: "c".into(),
        };
        assert!(h.consistent_with(&FragmentHeader { log_hash: None, ..h.clone() }));
        assert!(!h.consistent_with(&FragmentHeader { log_hash: Some("x".into()), ..h.clone() }));
        assert!(!h.consistent_with(&FragmentHeader { config_hash: "d".into(), ..h.clone() }));
    }
}
