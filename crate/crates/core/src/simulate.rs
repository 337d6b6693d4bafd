//! Monte Carlo detection rates of the analysis signatures against simulated
//! backends, as a function of replicates per cell.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind, Gateway, MockConfig, Strategy, TableCell};
use crate::cbd::{analyze_pairs, contextual_pairs, CbdOptions, PoolingRule};
use crate::collector::{execute_plans, plan_trials};
use crate::schema::{pair_index, ContextSetting, OptionOrder, Template};
use crate::stats::mi::{feature_mi_table, top_feature, Feature, MiOptions, Regime};
use crate::stats::spearman::spearman;
use crate::stats::{estimate, join_norms, valid_template_set};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("unknown scenario '{0}' (expected one of delta_c, delta_c_strong, null, repeater, stereotype)")]
    UnknownScenario(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("simulation failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One pair with true ΔC = 0.5; the signature is a contextual verdict.
    DeltaC,
    /// One pair with true ΔC = 1.8.
    DeltaCStrong,
    /// One pair whose targets repeat the prime with 0.95 in both
    /// orderings (true ΔC = 0); any contextual verdict is a false positive.
    Null,
    /// prime_repeater(0.9) on a synthetic schema; the signature is prime
    /// gender ranking first by MI in the primed regime.
    Repeater,
    /// stereotype_follower(0.8) on a synthetic schema; the signature is an
    /// unprimed Spearman correlation with p < 0.001.
    Stereotype,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::DeltaC,
        Scenario::DeltaCStrong,
        Scenario::Null,
        Scenario::Repeater,
        Scenario::Stereotype,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::DeltaC => "delta_c",
            Scenario::DeltaCStrong => "delta_c_strong",
            Scenario::Null => "null",
            Scenario::Repeater => "repeater",
            Scenario::Stereotype => "stereotype",
        }
    }

    fn signature(self) -> &'static str {
        match self {
            Scenario::DeltaC | Scenario::DeltaCStrong | Scenario::Null => "contextual verdict",
            Scenario::Repeater => "prime gender is the top primed-regime MI feature",
            Scenario::Stereotype => "unprimed Spearman rho > 0 with p < 0.001",
        }
    }
}

impl FromStr for Scenario {
    type Err = SimulateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| SimulateError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub scenario: Scenario,
    pub grid: Vec<u32>,
    pub replicates: usize,
    pub seed: u64,
    /// Pairs in the synthetic schema of the repeater and stereotype scenarios.
    pub n_pairs: usize,
    pub cbd: CbdOptions,
    pub pooling: PoolingRule,
    pub mi: MiOptions,
    pub workers: usize,
}

impl SimulateOptions {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            grid: vec![50, 200, 800],
            replicates: 200,
            seed: 0,
            n_pairs: 20,
            cbd: CbdOptions::default(),
            pooling: PoolingRule::Either,
            mi: MiOptions::default(),
            workers: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub n_per_cell: u32,
    pub replicates: usize,
    pub detections: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub scenario: Scenario,
    pub signature: String,
    pub rows: Vec<SimulateRow>,
    pub monotone_nondecreasing: bool,
}

/// Feminine probabilities (given feminine prime, given masculine prime) of
/// the first and second pair members.
type Design = ((f64, f64), (f64, f64));

fn table_strategy(templates: &[Template], (first, second): Design) -> Strategy {
    let mut cells = Vec::new();
    for (t, (pf, pm)) in templates.iter().zip([first, second]) {
        for (setting, p) in [
            (ContextSetting::PrimedFeminine, pf),
            (ContextSetting::PrimedMasculine, pm),
        ] {
            cells.push(TableCell {
                template_id: Some(t.template_id.clone()),
                setting: Some(setting),
                order: None,
                p_feminine: p,
            });
        }
    }
    Strategy::FixedTable {
        default_prob: 0.5,
        cells,
    }
}

/// A one-pair fixed-table design with the given member probabilities.
pub fn designed_pair(design: Design) -> (Vec<Template>, Strategy) {
    let templates = crate::synthetic::schema(1);
    let strategy = table_strategy(&templates, design);
    (templates, strategy)
}

fn gateway(strategy: Strategy, seed: u64, workers: usize) -> Result<Gateway, SimulateError> {
    let mut cfg = BackendConfig {
        kind: BackendKind::MockStrategy,
        max_in_flight: workers.max(1),
        mock: MockConfig {
            strategy,
            ..MockConfig::default()
        },
        ..BackendConfig::default()
    };
    cfg.params.seed = Some(seed);
    Gateway::from_config(&cfg).map_err(|e| SimulateError::Failed(e.to_string()))
}

fn one_replicate(opts: &SimulateOptions, n: u32, rep: usize) -> Result<bool, SimulateError> {
    let key = format!("simulate/{}/{n}/{rep}", opts.scenario.as_str());
    let seed = crate::seed::substream(opts.seed, &key);
    let fail = |e: &dyn std::fmt::Display| SimulateError::Failed(e.to_string());
    let primed = [ContextSetting::PrimedFeminine, ContextSetting::PrimedMasculine];
    match opts.scenario {
        Scenario::DeltaC | Scenario::DeltaCStrong | Scenario::Null => {
            let (templates, strategy) = match opts.scenario {
                Scenario::DeltaC => designed_pair(((0.375, 0.825), (0.825, 0.375))),
                Scenario::DeltaCStrong => designed_pair(((0.05, 0.95), (0.95, 0.05))),
                _ => (
                    crate::synthetic::schema(1),
                    Strategy::PrimeRepeater { repeat_prob: 0.95 },
                ),
            };
            let plans = plan_trials(&templates, &primed, &OptionOrder::ALL, n).map_err(|e| fail(&e))?;
            let ms = execute_plans(&plans, &gateway(strategy, seed, opts.workers)?);
            let pairs = pair_index(&templates).map_err(|e| fail(&e))?;
            let cbd = CbdOptions {
                seed: crate::seed::substream(seed, "bootstrap"),
                ..opts.cbd
            };
            let analysis = analyze_pairs(&estimate(&ms), &pairs, &cbd);
            let (set, _) = contextual_pairs(&analysis.results, opts.pooling);
            Ok(!set.is_empty())
        }
        Scenario::Repeater => {
            let templates = crate::synthetic::schema(opts.n_pairs);
            let norms = crate::synthetic::norms(&templates, 1.0, seed);
            let plans = plan_trials(&templates, &ContextSetting::ALL, &OptionOrder::ALL, n)
                .map_err(|e| fail(&e))?;
            let ms = execute_plans(
                &plans,
                &gateway(Strategy::PrimeRepeater { repeat_prob: 0.9 }, seed, opts.workers)?,
            );
            let valid = valid_template_set(&estimate(&ms), &ContextSetting::ALL);
            let mi = MiOptions {
                seed: crate::seed::substream(seed, "mi_noise"),
                ..opts.mi
            };
            let rows = feature_mi_table(&ms, &templates, &join_norms(&templates, &norms), &valid, &mi);
            Ok(top_feature(&rows, Regime::Primed) == Some(Feature::PrimeGender))
        }
        Scenario::Stereotype => {
            let templates = crate::synthetic::schema(opts.n_pairs);
            let norms = crate::synthetic::norms(&templates, 0.8, seed);
            let ratings = join_norms(&templates, &norms);
            let strategy = Strategy::StereotypeFollower {
                slope: 0.8,
                norms_path: None,
                ratings: templates
                    .iter()
                    .filter_map(|t| Some((t.target_noun().to_string(), ratings[&t.template_id]?)))
                    .collect(),
                missing_rating: 0.5,
            };
            let plans = plan_trials(&templates, &[ContextSetting::Unprimed], &OptionOrder::ALL, n)
                .map_err(|e| fail(&e))?;
            let table = estimate(&execute_plans(&plans, &gateway(strategy, seed, opts.workers)?));
            let (x, y): (Vec<f64>, Vec<f64>) = templates
                .iter()
                .filter_map(|t| {
                    let r = ratings[&t.template_id]?;
                    Some((r, table.pooled(&t.template_id, ContextSetting::Unprimed)?.p_hat))
                })
                .unzip();
            let s = spearman(&x, &y).map_err(|e| fail(&e))?;
            Ok(s.rho.is_some_and(|r| r > 0.0) && s.p_value.is_some_and(|p| p < 1e-3))
        }
    }
}

pub fn simulate(opts: &SimulateOptions) -> Result<SimulateReport, SimulateError> {
    if opts.grid.is_empty() {
        return Err(SimulateError::Precondition("grid must list at least one n".into()));
    }
    if opts.grid.contains(&0) {
        return Err(SimulateError::Precondition("n_per_cell must be >= 1".into()));
    }
    if opts.replicates == 0 {
        return Err(SimulateError::Precondition("replicates must be >= 1".into()));
    }
    if matches!(opts.scenario, Scenario::Repeater | Scenario::Stereotype) && opts.n_pairs < 3 {
        return Err(SimulateError::Precondition("n_pairs must be >= 3".into()));
    }
    opts.cbd.validate().map_err(|e| SimulateError::Precondition(e.to_string()))?;
    let mut rows = Vec::with_capacity(opts.grid.len());
    for &n in &opts.grid {
        let mut detections = 0;
        for rep in 0..opts.replicates {
            detections += one_replicate(opts, n, rep)? as usize;
        }
        rows.push(SimulateRow {
            n_per_cell: n,
            replicates: opts.replicates,
            detections,
            rate: detections as f64 / opts.replicates as f64,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.n_per_cell);
    Ok(SimulateReport {
        scenario: opts.scenario,
        signature: opts.scenario.signature().to_string(),
        monotone_nondecreasing: sorted.windows(2).all(|w| w[1].rate >= w[0].rate),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preconditions() {
        assert!(matches!("bogus".parse::<Scenario>(), Err(SimulateError::UnknownScenario(_))));
        assert_eq!("null".parse::<Scenario>().unwrap(), Scenario::Null);
        let mut o = SimulateOptions::new(Scenario::DeltaC);
        o.grid = vec![0];
        assert!(matches!(simulate(&o), Err(SimulateError::Precondition(_))));
    }

    #[test]
    fn strong_design_is_detected() {
        let mut o = SimulateOptions::new(Scenario::DeltaCStrong);
        o.grid = vec![100];
        o.replicates = 5;
        o.cbd.bootstrap_replicates = 0;
        let r = simulate(&o).unwrap();
        assert_eq!(r.rows[0].detections, 5);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut o = SimulateOptions::new(Scenario::Null);
        o.grid = vec![30];
        o.replicates = 6;
        o.cbd.bootstrap_replicates = 100;
        assert_eq!(simulate(&o).unwrap(), simulate(&o).unwrap());
    }
}
