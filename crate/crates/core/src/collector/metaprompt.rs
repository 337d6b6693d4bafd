//! Comprehension questions asked about the same passages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{parse_answer, pool, CollectorError};
use crate::backend::prompt::{question_text, QuestionKind};
use crate::backend::{build_metaprompt, Gateway, TrialMeta};
use crate::schema::{expand, ContextSetting, Gender, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapromptTrial {
    pub trial_id: String,
    pub question_kind: QuestionKind,
    pub template_id: String,
    pub setting: ContextSetting,
    pub response: String,
    pub answer: Option<String>,
    pub expected: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapromptAccuracy {
    pub question_kind: QuestionKind,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetapromptReport {
    pub accuracy: Vec<MetapromptAccuracy>,
    pub trials: Vec<MetapromptTrial>,
}

/// Settings a question is asked under; gender tracking needs a gendered prime.
pub fn applicable_settings(kind: QuestionKind) -> &'static [ContextSetting] {
    match kind {
        QuestionKind::GenderTracking => {
            &[ContextSetting::PrimedFeminine, ContextSetting::PrimedMasculine]
        }
        _ => &ContextSetting::ALL,
    }
}

struct Job<'a> {
    template: &'a Template,
    kind: QuestionKind,
    setting: ContextSetting,
    replicate: usize,
}

fn expected_answer(job: &Job<'_>) -> String {
    match job.kind {
        QuestionKind::Anaphora => job.template.target_noun().to_lowercase(),
        QuestionKind::PartOfSpeech => "pronoun".into(),
        QuestionKind::GenderTracking => match job.setting.prime_gender() {
            Some(Gender::Feminine) => "female".into(),
            _ => "male".into(),
        },
    }
}

pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let (n, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Ask each question `n_per_question` times per template, cycling through the
/// question's applicable settings.
pub fn run_metaprompts(
    templates: &[Template],
    gateway: &Gateway,
    n_per_question: usize,
) -> Result<MetapromptReport, CollectorError> {
    if n_per_question == 0 {
        return Err(CollectorError::Precondition(
            "n_per_question must be >= 1".into(),
        ));
    }
    let mut jobs = Vec::new();
    for t in templates {
        for kind in QuestionKind::ALL {
            let settings = applicable_settings(kind);
            for replicate in 0..n_per_question {
                jobs.push(Job {
                    template: t,
                    kind,
                    setting: settings[replicate % settings.len()],
                    replicate,
                });
            }
        }
    }
    let prepared = jobs
        .iter()
        .map(|job| {
            let t = job.template;
            let passage = expand(t, job.setting)?;
            let question = question_text(
                job.kind,
                (&t.occupation_noun, &t.participant_noun),
                t.other_noun(),
            );
            let trial_id = crate::seed::short_id(&[
                "metaprompt",
                &t.template_id,
                job.kind.as_str(),
                &job.replicate.to_string(),
            ]);
            let meta = TrialMeta {
                trial_id: trial_id.clone(),
                template_id: t.template_id.clone(),
                setting: Some(job.setting),
                target_noun: t.target_noun().to_string(),
                other_noun: t.other_noun().to_string(),
                question: Some(job.kind),
                correct_answer: Some(expected_answer(job)),
                ..TrialMeta::default()
            };
            let request =
                build_metaprompt(&passage, &question, gateway.config().params, Some(meta));
            Ok((trial_id, request))
        })
        .collect::<Result<Vec<_>, CollectorError>>()?;

    let mut trials: Vec<Option<MetapromptTrial>> = vec![None; jobs.len()];
    pool(
        &prepared,
        gateway.max_in_flight(),
        |(_, req)| gateway.complete(req),
        |i, result| {
            let job = &jobs[i];
            let expected = expected_answer(job);
            let (response, error) = match result {
                Ok(r) => (r, None),
                Err(e) => (String::new(), Some(e.to_string())),
            };
            let answer = parse_answer(&response);
            trials[i] = Some(MetapromptTrial {
                trial_id: prepared[i].0.clone(),
                question_kind: job.kind,
                template_id: job.template.template_id.clone(),
                setting: job.setting,
                correct: answer.as_deref() == Some(expected.as_str()),
                response,
                answer,
                expected,
                error,
            });
        },
    );
    let trials: Vec<MetapromptTrial> = trials.into_iter().flatten().collect();

    let mut tally: BTreeMap<QuestionKind, (usize, usize)> = BTreeMap::new();
    for t in &trials {
        let e = tally.entry(t.question_kind).or_default();
        e.0 += 1;
        e.1 += t.correct as usize;
    }
    let accuracy = tally
        .into_iter()
        .map(|(question_kind, (n, n_correct))| {
            let (ci_low, ci_high) = wilson_interval(n_correct, n);
            MetapromptAccuracy {
                question_kind,
                n,
                n_correct,
                accuracy: n_correct as f64 / n as f64,
                ci_low,
                ci_high,
            }
        })
        .collect();
    Ok(MetapromptReport { accuracy, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, MetapromptBehavior, MockConfig};

    fn gateway(behavior: MetapromptBehavior) -> Gateway {
        Gateway::from_config(&BackendConfig {
            mock: MockConfig {
                metaprompt: behavior,
                ..MockConfig::default()
            },
            ..BackendConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_scores_perfectly() {
        let t = crate::collector::tests::mechanic_pair();
        let r = run_metaprompts(&t, &gateway(MetapromptBehavior::Oracle), 6).unwrap();
        assert_eq!(r.accuracy.len(), 3);
        assert!(r.accuracy.iter().all(|a| a.accuracy == 1.0 && a.n == 12));
    }

    #[test]
    fn prime_echo_tracks_gender() {
        let t = crate::collector::tests::mechanic_pair();
        let r = run_metaprompts(&t, &gateway(MetapromptBehavior::PrimeEcho), 10).unwrap();
        let g = r
            .accuracy
            .iter()
            .find(|a| a.question_kind == QuestionKind::GenderTracking)
            .unwrap();
        assert_eq!(g.accuracy, 1.0);
        assert!(r
            .trials
            .iter()
            .filter(|t| t.question_kind == QuestionKind::GenderTracking)
            .all(|t| t.setting.is_discourse_primed()));
    }

    #[test]
    fn uniform_part_of_speech_near_one_seventh() {
        let t = crate::collector::tests::mechanic_pair();
        let r = run_metaprompts(&t, &gateway(MetapromptBehavior::Uniform), 1400).unwrap();
        let pos = r
            .accuracy
            .iter()
            .find(|a| a.question_kind == QuestionKind::PartOfSpeech)
            .unwrap();
        assert_eq!(pos.n, 2800);
        assert!(pos.ci_low <= 1.0 / 7.0 && 1.0 / 7.0 <= pos.ci_high, "{pos:?}");
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }
}
