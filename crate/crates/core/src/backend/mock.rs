//! Simulated responders.
//!
//! Every draw comes from a counter-based generator keyed by
//! `(seed, trial_id)`, so a trial's response never depends on which worker
//! ran it or in what order.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{extract_options, extract_passage};
use super::{BackendConfig, BackendError, ChatRequest, Completer, TrialMeta};
use crate::norms::NormsTable;
use crate::schema::{ContextSetting, Gender, OptionOrder, PronounLexicon, BLANK};

/// One row of a fixed probability table. Unset keys match anything; the most
/// specific matching row wins, earlier rows winning ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<ContextSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OptionOrder>,
    pub p_feminine: f64,
}

fn half() -> f64 {
    0.5
}

/// How a simulated backend picks between the two offered pronouns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    /// Fair coin.
    Uniform,
    /// Copy the priming pronoun's gender with `repeat_prob`; fair coin when
    /// there is no gendered prime.
    PrimeRepeater { repeat_prob: f64 },
    /// P(feminine) = clamp(0.5 + slope * (rating - 0.5), 0, 1) for the
    /// target antecedent's femininity rating.
    StereotypeFollower {
        slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norms_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        ratings: BTreeMap<String, f64>,
        #[serde(default = "half")]
        missing_rating: f64,
    },
    /// Pick the first listed option with `first_option_prob`.
    OrderPicker { first_option_prob: f64 },
    FixedTable {
        #[serde(default = "half")]
        default_prob: f64,
        #[serde(default)]
        cells: Vec<TableCell>,
    },
    /// Route by setting: unprimed (and null, unless given) vs discourse-primed.
    Composite {
        unprimed: Box<Strategy>,
        primed: Box<Strategy>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        null: Option<Box<Strategy>>,
    },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Uniform
    }
}

fn unit(name: &str, v: f64) -> Result<(), BackendError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(BackendError::Config(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Uniform => "uniform".into(),
            Strategy::PrimeRepeater { repeat_prob } => format!("prime_repeater({repeat_prob})"),
            Strategy::StereotypeFollower { slope, .. } => format!("stereotype_follower({slope})"),
            Strategy::OrderPicker { first_option_prob } => {
                format!("order_picker({first_option_prob})")
            }
            Strategy::FixedTable { cells, .. } => format!("fixed_table({} cells)", cells.len()),
            Strategy::Composite {
                unprimed,
                primed,
                null,
            } => format!(
                "composite(unprimed={}, primed={}{})",
                unprimed.name(),
                primed.name(),
                null.as_ref()
                    .map(|n| format!(", null={}", n.name()))
                    .unwrap_or_default()
            ),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            Strategy::Uniform => Ok(()),
            Strategy::PrimeRepeater { repeat_prob } => unit("repeat_prob", *repeat_prob),
            Strategy::StereotypeFollower {
                slope,
                ratings,
                missing_rating,
                ..
            } => {
                if !slope.is_finite() {
                    return Err(BackendError::Config("slope must be finite".into()));
                }
                unit("missing_rating", *missing_rating)?;
                ratings.values().try_for_each(|r| unit("rating", *r))
            }
            Strategy::OrderPicker { first_option_prob } => {
                unit("first_option_prob", *first_option_prob)
            }
            Strategy::FixedTable { default_prob, cells } => {
                unit("default_prob", *default_prob)?;
                cells.iter().try_for_each(|c| unit("p_feminine", c.p_feminine))
            }
            Strategy::Composite {
                unprimed,
                primed,
                null,
            } => {
                unprimed.validate()?;
                primed.validate()?;
                null.as_ref().map_or(Ok(()), |n| n.validate())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetapromptBehavior {
    /// Always the correct answer.
    #[default]
    Oracle,
    /// Uniform over the listed options.
    Uniform,
    /// Gender questions answered from the prime pronoun in the text; others uniform.
    PrimeEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub strategy: Strategy,
    /// Fraction of trials answered with an unusable response.
    pub malformed_rate: f64,
    pub metaprompt: MetapromptBehavior,
    /// Responses for `mock_scripted`. `!fail` is a transport failure,
    /// `!http:<status>` an HTTP error.
    pub script: Vec<String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Uniform,
            malformed_rate: 0.0,
            metaprompt: MetapromptBehavior::Oracle,
            script: Vec::new(),
        }
    }
}

impl MockConfig {
    pub fn validate_rates(&self) -> Result<(), BackendError> {
        unit("malformed_rate", self.malformed_rate)
    }
}

/// Responses used for injected malformations, cycled by draw.
pub const MALFORMED_RESPONSES: [&str; 3] = [
    "I'm sorry, I cannot determine that.",
    "{'BLANK': 'they'}",
    "",
];

#[derive(Debug, Default)]
pub struct MockCounters {
    pub calls: AtomicU64,
    pub injected_malformed: AtomicU64,
}

enum Resolved {
    Uniform,
    PrimeRepeater(f64),
    Stereotype {
        slope: f64,
        norms: NormsTable,
        missing: f64,
    },
    OrderPicker(f64),
    Table {
        default: f64,
        cells: Vec<TableCell>,
    },
    Composite {
        unprimed: Box<Resolved>,
        primed: Box<Resolved>,
        null: Option<Box<Resolved>>,
    },
}

fn resolve(s: &Strategy) -> Result<Resolved, BackendError> {
    Ok(match s {
        Strategy::Uniform => Resolved::Uniform,
        Strategy::PrimeRepeater { repeat_prob } => Resolved::PrimeRepeater(*repeat_prob),
        Strategy::StereotypeFollower {
            slope,
            norms_path,
            ratings,
            missing_rating,
        } => {
            let mut norms = match norms_path {
                Some(p) => NormsTable::load(p).map_err(|e| BackendError::Config(e.to_string()))?,
                None => NormsTable::new("inline"),
            };
            for (noun, r) in ratings {
                norms.insert(noun, *r).map_err(BackendError::Config)?;
            }
            Resolved::Stereotype {
                slope: *slope,
                norms,
                missing: *missing_rating,
            }
        }
        Strategy::OrderPicker { first_option_prob } => Resolved::OrderPicker(*first_option_prob),
        Strategy::FixedTable { default_prob, cells } => Resolved::Table {
            default: *default_prob,
            cells: cells.clone(),
        },
        Strategy::Composite {
            unprimed,
            primed,
            null,
        } => Resolved::Composite {
            unprimed: Box::new(resolve(unprimed)?),
            primed: Box::new(resolve(primed)?),
            null: null.as_deref().map(resolve).transpose()?.map(Box::new),
        },
    })
}

/// What the simulated responder can see about a forced-choice trial.
struct View<'a> {
    meta: Option<&'a TrialMeta>,
    setting: ContextSetting,
    prime: Option<Gender>,
    order: OptionOrder,
}

enum Pick {
    Feminine(f64),
    First(f64),
}

impl Resolved {
    fn pick(&self, v: &View<'_>) -> Pick {
        match self {
            Resolved::Uniform => Pick::Feminine(0.5),
            Resolved::PrimeRepeater(r) => match v.prime {
                Some(Gender::Feminine) => Pick::Feminine(*r),
                Some(Gender::Masculine) => Pick::Feminine(1.0 - r),
                None => Pick::Feminine(0.5),
            },
            Resolved::Stereotype {
                slope,
                norms,
                missing,
            } => {
                let rating = v
                    .meta
                    .and_then(|m| norms.lookup(&m.target_noun))
                    .unwrap_or(*missing);
                Pick::Feminine((0.5 + slope * (rating - 0.5)).clamp(0.0, 1.0))
            }
            Resolved::OrderPicker(p) => Pick::First(*p),
            Resolved::Table { default, cells } => {
                let template = v.meta.map(|m| m.template_id.as_str());
                let best = cells
                    .iter()
                    .filter(|c| {
                        c.template_id.as_deref().is_none_or(|t| Some(t) == template)
                            && c.setting.is_none_or(|s| s == v.setting)
                            && c.order.is_none_or(|o| o == v.order)
                    })
                    .fold(None::<(usize, &TableCell)>, |best, c| {
                        let specificity = c.template_id.is_some() as usize
                            + c.setting.is_some() as usize
                            + c.order.is_some() as usize;
                        match best {
                            Some((b, _)) if b >= specificity => best,
                            _ => Some((specificity, c)),
                        }
                    });
                Pick::Feminine(best.map_or(*default, |(_, c)| c.p_feminine))
            }
            Resolved::Composite {
                unprimed,
                primed,
                null,
            } => match v.setting {
                s if s.is_discourse_primed() => primed.pick(v),
                ContextSetting::Null1 | ContextSetting::Null2 => {
                    null.as_deref().unwrap_or(unprimed).pick(v)
                }
                _ => unprimed.pick(v),
            },
        }
    }
}

/// Gendered pronoun in the sentence(s) preceding the one holding BLANK.
pub fn prime_gender_in(passage: &str) -> Option<Gender> {
    let blank = passage.find(BLANK)?;
    let before = &passage[..blank];
    let cut = before.rfind(['.', '!', '?']).map_or(0, |i| i + 1);
    let mut found = None;
    for word in passage[..cut].split(|c: char| !c.is_alphabetic()) {
        if let Some(g) = PronounLexicon::gender_of(word) {
            match found {
                None => found = Some(g),
                Some(prev) if prev != g => return None,
                _ => {}
            }
        }
    }
    found
}

fn infer_setting(passage: &str) -> ContextSetting {
    if let Some(g) = prime_gender_in(passage) {
        return match g {
            Gender::Feminine => ContextSetting::PrimedFeminine,
            Gender::Masculine => ContextSetting::PrimedMasculine,
        };
    }
    match passage.trim_start() {
        p if p.starts_with(crate::schema::NULL_PRIME_1) => ContextSetting::Null1,
        p if p.starts_with(crate::schema::NULL_PRIME_2) => ContextSetting::Null2,
        _ => ContextSetting::Unprimed,
    }
}

fn trial_key(request: &ChatRequest) -> String {
    match &request.meta {
        Some(m) if !m.trial_id.is_empty() => m.trial_id.clone(),
        _ => crate::seed::sha256_hex(request.user_text().as_bytes()),
    }
}

fn format_answer(request: &ChatRequest, key: &str, word: &str) -> String {
    if request.has_assistant_prefix() {
        format!("{word}'}}")
    } else {
        format!("{{'{key}': '{word}'}}")
    }
}

pub struct StrategyMock {
    strategy: Resolved,
    seed: u64,
    malformed_rate: f64,
    metaprompt: MetapromptBehavior,
    counters: Arc<MockCounters>,
}

impl StrategyMock {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.mock.strategy.validate()?;
        config.mock.validate_rates()?;
        Ok(Self {
            strategy: resolve(&config.mock.strategy)?,
            seed: config.params.seed.unwrap_or(0),
            malformed_rate: config.mock.malformed_rate,
            metaprompt: config.mock.metaprompt,
            counters: Arc::new(MockCounters::default()),
        })
    }

    pub fn counters(&self) -> Arc<MockCounters> {
        self.counters.clone()
    }

    fn answer_question(
        &self,
        request: &ChatRequest,
        meta: &TrialMeta,
        rng: &mut impl Rng,
    ) -> Result<String, BackendError> {
        let options = extract_options(request.user_text());
        let uniform = |rng: &mut dyn rand::RngCore| -> Result<String, BackendError> {
            if options.is_empty() {
                return Err(BackendError::Precondition("question lists no options".into()));
            }
            Ok(options[rng.random_range(0..options.len())].clone())
        };
        let answer = match (self.metaprompt, meta.question) {
            (MetapromptBehavior::Oracle, _) => meta.correct_answer.clone().ok_or_else(|| {
                BackendError::Precondition("oracle mock needs the correct answer".into())
            })?,
            (MetapromptBehavior::PrimeEcho, Some(super::QuestionKind::GenderTracking)) => {
                let passage = extract_passage(request.user_text()).unwrap_or("");
                match prime_gender_in(passage) {
                    Some(Gender::Feminine) => "female".into(),
                    Some(Gender::Masculine) => "male".into(),
                    None => uniform(rng)?,
                }
            }
            _ => uniform(rng)?,
        };
        Ok(format!("{{'ANSWER': '{answer}'}}"))
    }
}

impl Completer for StrategyMock {
    fn complete_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let key = trial_key(request);
        let mut rng = crate::seed::keyed_rng(self.seed, &key);
        if let Some(meta) = request.meta.as_ref().filter(|m| m.question.is_some()) {
            return self.answer_question(request, meta, &mut rng);
        }

        let u: f64 = rng.random();
        if u < self.malformed_rate {
            self.counters
                .injected_malformed
                .fetch_add(1, Ordering::Relaxed);
            let i = rng.random_range(0..MALFORMED_RESPONSES.len());
            return Ok(MALFORMED_RESPONSES[i].to_string());
        }

        let user = request.user_text();
        let options = extract_options(user);
        let [first, second] = options.as_slice() else {
            return Err(BackendError::Precondition(format!(
                "expected two options, found {}",
                options.len()
            )));
        };
        let passage = extract_passage(user).unwrap_or("");
        let meta = request.meta.as_ref();
        let order = match PronounLexicon::gender_of(first) {
            Some(Gender::Feminine) => OptionOrder::FemMasc,
            _ => OptionOrder::MascFem,
        };
        let view = View {
            meta,
            setting: meta
                .and_then(|m| m.setting)
                .unwrap_or_else(|| infer_setting(passage)),
            prime: prime_gender_in(passage),
            order,
        };
        let draw: f64 = rng.random();
        let word = match self.strategy.pick(&view) {
            Pick::First(p) => {
                if draw < p {
                    first
                } else {
                    second
                }
            }
            Pick::Feminine(p) => {
                let fem_first = order == OptionOrder::FemMasc;
                match (draw < p, fem_first) {
                    (true, true) | (false, false) => first,
                    _ => second,
                }
            }
        };
        Ok(format_answer(request, "BLANK", word))
    }
}

pub struct ScriptedMock {
    script: Vec<String>,
    seed: u64,
}

impl ScriptedMock {
    pub fn new(config: &BackendConfig) -> Self {
        Self {
            script: config.mock.script.clone(),
            seed: config.params.seed.unwrap_or(0),
        }
    }
}

impl Completer for ScriptedMock {
    fn complete_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if self.script.is_empty() {
            return Err(BackendError::Config("empty script".into()));
        }
        let mut rng = crate::seed::keyed_rng(self.seed, &trial_key(request));
        let entry = &self.script[rng.random_range(0..self.script.len())];
        if entry == "!fail" {
            return Err(BackendError::Transport {
                attempts: 1,
                message: "scripted transport failure".into(),
            });
        }
        if let Some(code) = entry.strip_prefix("!http:") {
            return Err(BackendError::Http {
                status: code.parse().unwrap_or(500),
                body_snippet: "scripted HTTP failure".into(),
                attempts: 1,
            });
        }
        Ok(entry.clone())
    }
}
