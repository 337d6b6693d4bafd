//! Trial planning, execution against a backend, and the measurement log.

pub mod log;
pub mod metaprompt;
pub mod parse;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{build_prompt, BackendError, Gateway, GenerationParams, TrialMeta};
use crate::schema::{
    expand, pronoun_options, ContextSetting, Gender, OptionOrder, PronounLexicon, SchemaError,
    Template,
};
pub use log::{read_log, run, MeasurementLog, RunHeader, RunOutcome};
pub use metaprompt::{run_metaprompts, MetapromptAccuracy, MetapromptReport, MetapromptTrial};
pub use parse::{parse_answer, parse_response, Validity};

/// Default replicates per (template, setting, order) cell.
pub const DEFAULT_N_PER_CELL: u32 = 110;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Log {
        path: String,
        line: usize,
        message: String,
    },
    #[error("log header mismatch: log has {found}, run expects {expected}")]
    HeaderMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial_id: String,
    pub template_id: String,
    pub setting: ContextSetting,
    pub order: OptionOrder,
    pub replicate: u32,
    pub passage: String,
    pub options: (String, String),
    pub target_noun: String,
}

pub fn trial_id(template_id: &str, setting: ContextSetting, order: OptionOrder, replicate: u32) -> String {
    crate::seed::short_id(&[
        template_id,
        setting.as_str(),
        order.as_str(),
        &replicate.to_string(),
    ])
}

/// Every (template, setting, order, replicate) combination, in that nesting order.
pub fn plan_trials(
    templates: &[Template],
    settings: &[ContextSetting],
    orders: &[OptionOrder],
    n_per_cell: u32,
) -> Result<Vec<TrialPlan>, CollectorError> {
    if n_per_cell == 0 {
        return Err(CollectorError::Precondition("n_per_cell must be >= 1".into()));
    }
    let mut plans =
        Vec::with_capacity(templates.len() * settings.len() * orders.len() * n_per_cell as usize);
    for t in templates {
        for &setting in settings {
            let passage = expand(t, setting)?;
            for &order in orders {
                let (a, b) = pronoun_options(t.pronoun_case, order);
                for replicate in 0..n_per_cell {
                    plans.push(TrialPlan {
                        trial_id: trial_id(&t.template_id, setting, order, replicate),
                        template_id: t.template_id.clone(),
                        setting,
                        order,
                        replicate,
                        passage: passage.clone(),
                        options: (a.to_string(), b.to_string()),
                        target_noun: t.target_noun().to_string(),
                    });
                }
            }
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub trial_id: String,
    pub template_id: String,
    pub setting: ContextSetting,
    pub order: OptionOrder,
    pub replicate: u32,
    pub raw_response: String,
    pub parsed: Option<String>,
    pub validity: Validity,
    pub gender: Option<Gender>,
    pub backend: String,
    pub params: GenerationParams,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Execute one trial. Backend failures become `backend_error` records.
pub fn run_trial(plan: &TrialPlan, gateway: &Gateway) -> Measurement {
    let config = gateway.config();
    let options = (plan.options.0.as_str(), plan.options.1.as_str());
    let result = build_prompt(&plan.passage, options, config.dialect, config.params).and_then(|req| {
        let req = req.with_meta(TrialMeta {
            trial_id: plan.trial_id.clone(),
            template_id: plan.template_id.clone(),
            setting: Some(plan.setting),
            order: Some(plan.order),
            target_noun: plan.target_noun.clone(),
            ..TrialMeta::default()
        });
        gateway.complete(&req)
    });
    let (raw_response, parsed, validity, error) = match result {
        Ok(raw) => {
            let (parsed, validity) = parse_response(&raw, options);
            (raw, parsed, validity, None)
        }
        Err(e) => (String::new(), None, Validity::BackendError, Some(e.to_string())),
    };
    let gender = parsed.as_deref().and_then(PronounLexicon::gender_of);
    Measurement {
        trial_id: plan.trial_id.clone(),
        template_id: plan.template_id.clone(),
        setting: plan.setting,
        order: plan.order,
        replicate: plan.replicate,
        raw_response,
        parsed,
        validity,
        gender,
        backend: gateway.fingerprint(),
        params: config.params,
        timestamp_ms: now_ms(),
        error,
    }
}

/// Apply `f` to every item on `workers` threads, handing results to `sink`
/// on the calling thread as they complete.
pub(crate) fn pool<T, R, F, S>(items: &[T], workers: usize, f: F, mut sink: S)
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
    S: FnMut(usize, R),
{
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() || tx.send((i, f(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            sink(i, r);
        }
    });
}

/// Run plans in memory, returning measurements in plan order.
pub fn execute_plans(plans: &[TrialPlan], gateway: &Gateway) -> Vec<Measurement> {
    let mut out: Vec<Option<Measurement>> = vec![None; plans.len()];
    pool(
        plans,
        gateway.max_in_flight(),
        |p| run_trial(p, gateway),
        |i, m| out[i] = Some(m),
    );
    out.into_iter().map(|m| m.expect("every plan ran")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub setting: ContextSetting,
    pub order: OptionOrder,
    pub total: usize,
    pub valid: usize,
    pub fraction_valid: f64,
    pub by_category: BTreeMap<Validity, usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidityReport {
    pub rows: Vec<ValidityRow>,
    pub total: usize,
    pub valid: usize,
    pub fraction_valid: f64,
    pub by_category: BTreeMap<Validity, usize>,
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Valid fraction per (setting, order) cell plus overall.
pub fn validity_report(measurements: &[Measurement]) -> ValidityReport {
    let mut cells: BTreeMap<(ContextSetting, OptionOrder), BTreeMap<Validity, usize>> =
        BTreeMap::new();
    let mut overall: BTreeMap<Validity, usize> = BTreeMap::new();
    for m in measurements {
        *cells
            .entry((m.setting, m.order))
            .or_default()
            .entry(m.validity)
            .or_default() += 1;
        *overall.entry(m.validity).or_default() += 1;
    }
    let rows = cells
        .into_iter()
        .map(|((setting, order), by_category)| {
            let total = by_category.values().sum();
            let valid = by_category.get(&Validity::Valid).copied().unwrap_or(0);
            ValidityRow {
                setting,
                order,
                total,
                valid,
                fraction_valid: fraction(valid, total),
                by_category,
            }
        })
        .collect();
    let total = measurements.len();
    let valid = overall.get(&Validity::Valid).copied().unwrap_or(0);
    ValidityReport {
        rows,
        total,
        valid,
        fraction_valid: fraction(valid, total),
        by_category: overall,
    }
}
