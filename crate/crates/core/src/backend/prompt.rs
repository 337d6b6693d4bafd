//! Forced-choice and comprehension prompt construction.

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatMessage, ChatRequest, GenerationParams, Role, TrialMeta};
use crate::schema::{count_token, BLANK};

pub const SYSTEM_PROMPT: &str = "Below you will find a passage in *bold* which contains precisely one instance of the term BLANK. Your task is to replace BLANK with one of the options provided. The task is designed to be unambiguous, so please provide only one token for the blank and do not reorder the data. Do not repeat the sentence.";

pub const ASSISTANT_PREFIX: &str = "{'BLANK':'";

pub const POS_OPTIONS: [&str; 7] = [
    "noun",
    "verb",
    "pronoun",
    "adjective",
    "adverb",
    "preposition",
    "article",
];

pub const GENDER_OPTIONS: [&str; 3] = ["male", "female", "nonbinary"];

/// Whether the endpoint accepts an assistant-role prefix message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    WithAssistantPrefix,
    NoAssistantPrefix,
}

pub fn user_prompt(passage: &str, options: (&str, &str)) -> String {
    format!(
        "Given this passage:  *{passage}* Replace BLANK with one of the options: [{}, {}]. Respond only in the following format {{'BLANK': '<text>'}}",
        options.0, options.1
    )
}

/// Build the forced-choice request for one passage.
pub fn build_prompt(
    passage: &str,
    options: (&str, &str),
    dialect: Dialect,
    params: GenerationParams,
) -> Result<ChatRequest, BackendError> {
    let blanks = count_token(passage, BLANK);
    if blanks != 1 {
        return Err(BackendError::Precondition(format!(
            "passage must contain exactly one BLANK, found {blanks}"
        )));
    }
    let mut messages = vec![
        ChatMessage::new(Role::System, SYSTEM_PROMPT),
        ChatMessage::new(Role::User, user_prompt(passage, options)),
    ];
    if dialect == Dialect::WithAssistantPrefix {
        messages.push(ChatMessage::new(Role::Assistant, ASSISTANT_PREFIX));
    }
    Ok(ChatRequest {
        messages,
        params,
        meta: None,
    })
}

/// Comprehension question kinds asked about a passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Anaphora,
    PartOfSpeech,
    GenderTracking,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [
        QuestionKind::Anaphora,
        QuestionKind::PartOfSpeech,
        QuestionKind::GenderTracking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::Anaphora => "anaphora",
            QuestionKind::PartOfSpeech => "part_of_speech",
            QuestionKind::GenderTracking => "gender_tracking",
        }
    }
}

/// Question text. `roles` is (occupation noun, participant noun); `other_role`
/// is the noun the priming pronoun refers to.
pub fn question_text(kind: QuestionKind, roles: (&str, &str), other_role: &str) -> String {
    match kind {
        QuestionKind::Anaphora => format!(
            "Answer saying who the pronoun replaced by BLANK is referring to. Select from one of the following options: {{{}, {}}}.",
            roles.0, roles.1
        ),
        QuestionKind::PartOfSpeech => format!(
            "Answer saying what part of speech the BLANK should be. Select from one of the following options: [{}].",
            POS_OPTIONS.join(", ")
        ),
        QuestionKind::GenderTracking => format!(
            "Answer saying the gender of the {other_role}. Select from one of the following options: [{}].",
            GENDER_OPTIONS.join(", ")
        ),
    }
}

/// Comprehension request; answers are requested as `{'ANSWER': '<text>'}`.
pub fn build_metaprompt(
    passage: &str,
    question: &str,
    params: GenerationParams,
    meta: Option<TrialMeta>,
) -> ChatRequest {
    let user = format!(
        "Given this passage:  *{passage}* {question} Respond only in the following format {{'ANSWER': '<text>'}}"
    );
    ChatRequest {
        messages: vec![
            ChatMessage::new(Role::System, SYSTEM_PROMPT),
            ChatMessage::new(Role::User, user),
        ],
        params,
        meta,
    }
}

/// The passage between the bold markers of a user message.
pub fn extract_passage(user: &str) -> Option<&str> {
    let start = user.find('*')? + 1;
    let end = user[start..].find("* ")? + start;
    Some(&user[start..end])
}

/// Options listed after "options: " in either `[a, b]` or `{a, b}` form.
pub fn extract_options(user: &str) -> Vec<String> {
    let Some(pos) = user.rfind("options: ") else {
        return Vec::new();
    };
    let rest = &user[pos + "options: ".len()..];
    let (open, close) = match rest.chars().next() {
        Some('[') => ('[', ']'),
        Some('{') => ('{', '}'),
        _ => return Vec::new(),
    };
    let inner = rest.trim_start_matches(open);
    let Some(end) = inner.find(close) else {
        return Vec::new();
    };
    inner[..end]
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
