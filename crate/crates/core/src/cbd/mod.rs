//! Contextuality-by-Default analysis of template pairs under steering.
//!
//! For a pair (first = occupation-target member, second = participant-target
//! member), ordering o1 primes with the first member's sentence and measures
//! the second member's pronoun; o2 does the reverse. Variables are coded
//! feminine = +1, masculine = −1.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ContextSetting, TemplatePair};
use crate::stats::{CellOrder, EstimateTable};
pub use oracle::coupling_oracle;

/// Minimum bootstrap replicates.
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbdError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ProductEstimator,
    MixtureEstimator,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointEstimator {
    /// Exact joint expectation under a prime that is feminine with rate r.
    #[default]
    Mixture,
    /// (2P₁ − 1)(2P₂ − 1) from the two marginal probabilities.
    Product,
}

impl JointEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            JointEstimator::Mixture => "mixture",
            JointEstimator::Product => "product",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbdSystem {
    pub e1_o1: f64,
    pub e2_o1: f64,
    pub e1_o2: f64,
    pub e2_o2: f64,
    pub j_o1: f64,
    pub j_o2: f64,
    pub provenance: Provenance,
}

/// The four atoms (++, +−, −+, −−) of a 2×2 distribution with the given moments.
pub fn atoms(e_a: f64, e_b: f64, j: f64) -> [f64; 4] {
    [
        (1.0 + e_a + e_b + j) / 4.0,
        (1.0 + e_a - e_b - j) / 4.0,
        (1.0 - e_a + e_b - j) / 4.0,
        (1.0 - e_a - e_b + j) / 4.0,
    ]
}

impl CbdSystem {
    pub fn validate(&self) -> Result<(), CbdError> {
        let values = [
            self.e1_o1, self.e2_o1, self.e1_o2, self.e2_o2, self.j_o1, self.j_o2,
        ];
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(CbdError::Domain(format!("values must lie in [-1, 1]: {values:?}")));
        }
        for (name, e_a, e_b, j) in [
            ("o1", self.e1_o1, self.e2_o1, self.j_o1),
            ("o2", self.e1_o2, self.e2_o2, self.j_o2),
        ] {
            if atoms(e_a, e_b, j).iter().any(|&a| a < -1e-9) {
                return Err(CbdError::Domain(format!(
                    "ordering {name} is not a valid 2x2 distribution (e = {e_a}, {e_b}; j = {j})"
                )));
            }
        }
        Ok(())
    }
}

pub fn expectation_from_p(p: f64) -> f64 {
    2.0 * p - 1.0
}

pub fn joint_product(p_i: f64, p_j: f64) -> f64 {
    4.0 * p_i * p_j - 2.0 * p_i - 2.0 * p_j + 1.0
}

pub fn joint_mixture(prime_rate: f64, p_given_f: f64, p_given_m: f64) -> f64 {
    prime_rate * (2.0 * p_given_f - 1.0) - (1.0 - prime_rate) * (2.0 * p_given_m - 1.0)
}

pub fn delta_c(system: &CbdSystem) -> Result<f64, CbdError> {
    system.validate()?;
    let s = system;
    Ok((s.j_o1 - s.j_o2).abs() - ((s.e1_o1 - s.e1_o2).abs() + (s.e2_o1 - s.e2_o2).abs()))
}

pub fn is_contextual(delta_c: f64, tol: f64) -> bool {
    delta_c > tol
}

/// Valid and feminine counts for one template under one setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCount {
    pub n_valid: u64,
    pub n_feminine: u64,
}

impl CellCount {
    fn p(self) -> f64 {
        self.n_feminine as f64 / self.n_valid as f64
    }
}

/// Counts for one pair member under the feminine and masculine primes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemberCounts {
    pub primed_feminine: CellCount,
    pub primed_masculine: CellCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub first: MemberCounts,
    pub second: MemberCounts,
}

/// Target probabilities P(feminine | prime) for both members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProbs {
    pub first_f: f64,
    pub first_m: f64,
    pub second_f: f64,
    pub second_m: f64,
}

impl PairCounts {
    pub fn probs(&self) -> Result<PairProbs, CbdError> {
        let cells = [
            self.first.primed_feminine,
            self.first.primed_masculine,
            self.second.primed_feminine,
            self.second.primed_masculine,
        ];
        if cells.iter().any(|c| c.n_valid == 0 || c.n_feminine > c.n_valid) {
            return Err(CbdError::Precondition("every primed cell needs valid trials".into()));
        }
        Ok(PairProbs {
            first_f: cells[0].p(),
            first_m: cells[1].p(),
            second_f: cells[2].p(),
            second_m: cells[3].p(),
        })
    }
}

/// Build the steering system: in o1 the prime is X1 (the first member's
/// sentence) and the measured target is X2 (the second member); in o2 the roles swap.
pub fn steering_system(p: &PairProbs, prime_rate: f64, estimator: JointEstimator) -> CbdSystem {
    let r = prime_rate;
    let prime_e = expectation_from_p(r);
    let pooled = |pf: f64, pm: f64| r * pf + (1.0 - r) * pm;
    let (p2, p1) = (pooled(p.second_f, p.second_m), pooled(p.first_f, p.first_m));
    let joint = |pf: f64, pm: f64, pooled: f64| match estimator {
        JointEstimator::Mixture => joint_mixture(r, pf, pm),
        JointEstimator::Product => joint_product(r, pooled),
    };
    CbdSystem {
        e1_o1: prime_e,
        e2_o1: expectation_from_p(p2),
        j_o1: joint(p.second_f, p.second_m, p2),
        e1_o2: expectation_from_p(p1),
        e2_o2: prime_e,
        j_o2: joint(p.first_f, p.first_m, p1),
        provenance: match estimator {
            JointEstimator::Mixture => Provenance::MixtureEstimator,
            JointEstimator::Product => Provenance::ProductEstimator,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbdOptions {
    pub estimator: JointEstimator,
    /// Design rate of the feminine prime.
    pub prime_rate: f64,
    pub tolerance: f64,
    /// 0 disables the bootstrap.
    pub bootstrap_replicates: usize,
    /// Additionally require the bootstrap lower bound to exceed 0.
    pub ci_gate: bool,
    pub seed: u64,
}

impl Default for CbdOptions {
    fn default() -> Self {
        Self {
            estimator: JointEstimator::Mixture,
            prime_rate: 0.5,
            tolerance: 0.0,
            bootstrap_replicates: 1000,
            ci_gate: false,
            seed: 0,
        }
    }
}

impl CbdOptions {
    pub fn validate(&self) -> Result<(), CbdError> {
        if !(0.0..=1.0).contains(&self.prime_rate) {
            return Err(CbdError::Precondition("prime_rate must lie in [0, 1]".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(CbdError::Precondition("tolerance must be >= 0".into()));
        }
        if self.bootstrap_replicates != 0 && self.bootstrap_replicates < MIN_BOOTSTRAP {
            return Err(CbdError::Precondition(format!(
                "bootstrap needs at least {MIN_BOOTSTRAP} replicates"
            )));
        }
        if self.ci_gate && self.bootstrap_replicates == 0 {
            return Err(CbdError::Precondition("ci_gate requires the bootstrap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCResult {
    pub pair_id: String,
    /// Option order of the measurements, or `pooled` for order-pooled counts.
    pub order: CellOrder,
    pub delta_c: f64,
    /// delta_c > tolerance.
    pub contextual: bool,
    /// contextual and bootstrap lower bound > 0; present when the gate is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contextual_gated: Option<bool>,
    pub estimator: JointEstimator,
    pub prime_rate: f64,
    pub tolerance: f64,
    pub ci: Option<(f64, f64)>,
    pub counts: PairCounts,
    pub system: CbdSystem,
}

impl DeltaCResult {
    /// Verdict used in summaries: the gated one when the gate is on.
    pub fn flagged(&self) -> bool {
        self.contextual_gated.unwrap_or(self.contextual)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair_id: String,
    pub order: CellOrder,
    pub reason: String,
}

fn cell(table: &EstimateTable, template: &str, setting: ContextSetting, order: CellOrder) -> Option<CellCount> {
    table.get(template, setting, order).map(|e| CellCount {
        n_valid: e.n_valid,
        n_feminine: e.n_feminine,
    })
}

pub fn pair_counts(table: &EstimateTable, pair: &TemplatePair, order: CellOrder) -> Result<PairCounts, String> {
    let member = |id: &str| -> Result<MemberCounts, String> {
        let get = |s| cell(table, id, s, order).ok_or_else(|| format!("{id} has no valid {s} measurements"));
        Ok(MemberCounts {
            primed_feminine: get(ContextSetting::PrimedFeminine)?,
            primed_masculine: get(ContextSetting::PrimedMasculine)?,
        })
    };
    Ok(PairCounts {
        first: member(&pair.first.template_id)?,
        second: member(&pair.second.template_id)?,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile interval (2.5%, 97.5%) for ΔC from parametric resampling of
/// each primed cell's binomial counts.
pub fn bootstrap_ci(
    counts: &PairCounts,
    prime_rate: f64,
    estimator: JointEstimator,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64), CbdError> {
    if replicates < MIN_BOOTSTRAP {
        return Err(CbdError::Precondition(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {replicates}"
        )));
    }
    let p = counts.probs()?;
    let cells = [
        (counts.first.primed_feminine.n_valid, p.first_f),
        (counts.first.primed_masculine.n_valid, p.first_m),
        (counts.second.primed_feminine.n_valid, p.second_f),
        (counts.second.primed_masculine.n_valid, p.second_m),
    ];
    let dists: Vec<Binomial> = cells
        .iter()
        .map(|&(n, p)| Binomial::new(n, p).map_err(|e| CbdError::Domain(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut rng = crate::seed::rng(seed);
    let mut values = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let draw: Vec<f64> = dists
            .iter()
            .zip(&cells)
            .map(|(d, &(n, _))| d.sample(&mut rng) as f64 / n as f64)
            .collect();
        let probs = PairProbs {
            first_f: draw[0],
            first_m: draw[1],
            second_f: draw[2],
            second_m: draw[3],
        };
        values.push(delta_c(&steering_system(&probs, prime_rate, estimator))?);
    }
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, 0.025), percentile(&values, 0.975)))
}

fn analyze_counts(pair_id: &str, order: CellOrder, counts: PairCounts, opts: &CbdOptions) -> Result<DeltaCResult, CbdError> {
    let system = steering_system(&counts.probs()?, opts.prime_rate, opts.estimator);
    let dc = delta_c(&system)?;
    let contextual = is_contextual(dc, opts.tolerance);
    let ci = if opts.bootstrap_replicates > 0 {
        let seed = crate::seed::substream(opts.seed, &format!("{pair_id}/{}", order.as_str()));
        Some(bootstrap_ci(&counts, opts.prime_rate, opts.estimator, opts.bootstrap_replicates, seed)?)
    } else {
        None
    };
    Ok(DeltaCResult {
        pair_id: pair_id.to_string(),
        order,
        delta_c: dc,
        contextual,
        contextual_gated: opts
            .ci_gate
            .then(|| contextual && ci.is_some_and(|(lo, _)| lo > 0.0)),
        estimator: opts.estimator,
        prime_rate: opts.prime_rate,
        tolerance: opts.tolerance,
        ci,
        counts,
        system,
    })
}

/// ΔC for one pair and one option order (or pooled orders).
pub fn pair_analysis(
    table: &EstimateTable,
    pair: &TemplatePair,
    order: CellOrder,
    opts: &CbdOptions,
) -> Result<DeltaCResult, SkippedPair> {
    let skip = |reason: String| SkippedPair {
        pair_id: pair.pair_id.clone(),
        order,
        reason,
    };
    let counts = pair_counts(table, pair, order).map_err(skip)?;
    analyze_counts(&pair.pair_id, order, counts, opts).map_err(|e| skip(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CbdAnalysis {
    pub results: Vec<DeltaCResult>,
    pub skipped: Vec<SkippedPair>,
}

/// Per-order and order-pooled results for every pair.
pub fn analyze_pairs(table: &EstimateTable, pairs: &[TemplatePair], opts: &CbdOptions) -> CbdAnalysis {
    let mut out = CbdAnalysis::default();
    for pair in pairs {
        for order in [CellOrder::MascFem, CellOrder::FemMasc, CellOrder::Pooled] {
            match pair_analysis(table, pair, order, opts) {
                Ok(r) => out.results.push(r),
                Err(s) => out.skipped.push(s),
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingRule {
    /// Contextual under at least one option order.
    #[default]
    Either,
    /// Contextual under both option orders.
    Both,
    /// Contextual on counts pooled across orders.
    PooledCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub n_pairs: usize,
    pub n_contextual: usize,
    pub fraction: f64,
}

impl Fraction {
    fn new(n_pairs: usize, n_contextual: usize) -> Self {
        Self {
            n_pairs,
            n_contextual,
            fraction: if n_pairs == 0 {
                0.0
            } else {
                n_contextual as f64 / n_pairs as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualitySummary {
    pub per_order: BTreeMap<CellOrder, Fraction>,
    pub pooled: Fraction,
    pub rule: PoolingRule,
    pub ci_gate: bool,
    pub contextual_pairs: BTreeSet<String>,
}

/// Pair ids counted as contextual under `rule`, and the number of pairs the rule could assess.
pub fn contextual_pairs(results: &[DeltaCResult], rule: PoolingRule) -> (BTreeSet<String>, usize) {
    let mut by_pair: BTreeMap<&str, BTreeMap<CellOrder, bool>> = BTreeMap::new();
    for r in results {
        by_pair.entry(&r.pair_id).or_default().insert(r.order, r.flagged());
    }
    let mut set = BTreeSet::new();
    let mut assessed = 0;
    for (pair, verdicts) in by_pair {
        let per_order: Vec<bool> = [CellOrder::MascFem, CellOrder::FemMasc]
            .iter()
            .filter_map(|o| verdicts.get(o).copied())
            .collect();
        let verdict = match rule {
            PoolingRule::Either if !per_order.is_empty() => Some(per_order.iter().any(|&v| v)),
            PoolingRule::Both if per_order.len() == 2 => Some(per_order.iter().all(|&v| v)),
            PoolingRule::PooledCounts => verdicts.get(&CellOrder::Pooled).copied(),
            _ => None,
        };
        if let Some(v) = verdict {
            assessed += 1;
            if v {
                set.insert(pair.to_string());
            }
        }
    }
    (set, assessed)
}

pub fn contextuality_summary(
    results: &[DeltaCResult],
    rule: PoolingRule,
) -> Result<ContextualitySummary, CbdError> {
    if results.is_empty() {
        return Err(CbdError::Precondition("no contextuality results to summarize".into()));
    }
    let mut per_order = BTreeMap::new();
    for order in [CellOrder::MascFem, CellOrder::FemMasc] {
        let rs: Vec<&DeltaCResult> = results.iter().filter(|r| r.order == order).collect();
        if !rs.is_empty() {
            per_order.insert(order, Fraction::new(rs.len(), rs.iter().filter(|r| r.flagged()).count()));
        }
    }
    let (set, assessed) = contextual_pairs(results, rule);
    Ok(ContextualitySummary {
        per_order,
        pooled: Fraction::new(assessed, set.len()),
        rule,
        ci_gate: results.iter().any(|r| r.contextual_gated.is_some()),
        contextual_pairs: set,
    })
}

/// Pairwise counts of shared contextual pairs across runs.
pub fn overlap_matrix(sets: &[BTreeSet<String>]) -> Vec<Vec<usize>> {
    sets.iter()
        .map(|a| sets.iter().map(|b| a.intersection(b).count()).collect())
        .collect()
}
