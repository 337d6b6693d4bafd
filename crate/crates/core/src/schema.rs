//! Sentence schemas: loading, structural validation, and expansion into
//! concrete passages for each context setting and option order.
//!
//! A schema file is delimited text (comma, or tab for `.tsv`) with a header row
//! naming the columns `template_id, pair_id, target_role_kind, occupation_noun,
//! participant_noun, pronoun_case, body, partner_body`. `BLANK` and `PRONOUN`
//! are literal uppercase slot tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slot token that the backend is asked to fill.
pub const BLANK: &str = "BLANK";
/// Slot token in a partner sentence that receives the priming pronoun.
pub const PRONOUN: &str = "PRONOUN";

pub const NULL_PRIME_1: &str = "The sky is blue.";
pub const NULL_PRIME_2: &str = "North is south.";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {rule}")]
    Row { row: usize, rule: String },
    #[error("{} schema violation(s); first: {}", .0.len(), .0[0])]
    Violations(Vec<String>),
    #[error("unpaired templates: {}", .0.join(", "))]
    Pairing(Vec<String>),
    #[error("template {0}: primed setting requested but partner_body has no PRONOUN slot")]
    MissingPronounSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Feminine,
    Masculine,
}

impl Gender {
    /// Coded value used by the contextuality analysis (feminine = +1).
    pub fn sign(self) -> f64 {
        match self {
            Gender::Feminine => 1.0,
            Gender::Masculine => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PronounCase {
    Nominative,
    Accusative,
    PossessiveDependent,
    PossessiveIndependent,
}

impl PronounCase {
    pub const ALL: [PronounCase; 4] = [
        PronounCase::Nominative,
        PronounCase::Accusative,
        PronounCase::PossessiveDependent,
        PronounCase::PossessiveIndependent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PronounCase::Nominative => "nominative",
            PronounCase::Accusative => "accusative",
            PronounCase::PossessiveDependent => "possessive_dependent",
            PronounCase::PossessiveIndependent => "possessive_independent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim())
    }
}

/// English binary pronoun paradigm.
pub struct PronounLexicon;

impl PronounLexicon {
    pub fn form(gender: Gender, case: PronounCase) -> &'static str {
        use Gender::*;
        use PronounCase::*;
        match (gender, case) {
            (Feminine, Nominative) => "she",
            (Feminine, Accusative) => "her",
            (Feminine, PossessiveDependent) => "her",
            (Feminine, PossessiveIndependent) => "hers",
            (Masculine, Nominative) => "he",
            (Masculine, Accusative) => "him",
            (Masculine, PossessiveDependent) => "his",
            (Masculine, PossessiveIndependent) => "his",
        }
    }

    pub const FEMININE: [&'static str; 3] = ["she", "her", "hers"];
    pub const MASCULINE: [&'static str; 3] = ["he", "him", "his"];

    /// Gender of a surface form, case-insensitively.
    pub fn gender_of(word: &str) -> Option<Gender> {
        let w = word.to_ascii_lowercase();
        if Self::FEMININE.contains(&w.as_str()) {
            Some(Gender::Feminine)
        } else if Self::MASCULINE.contains(&w.as_str()) {
            Some(Gender::Masculine)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Occupation,
    Participant,
}

impl RoleKind {
    pub fn other(self) -> Self {
        match self {
            RoleKind::Occupation => RoleKind::Participant,
            RoleKind::Participant => RoleKind::Occupation,
        }
    }
}

/// The five priming conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSetting {
    Unprimed,
    PrimedFeminine,
    PrimedMasculine,
    #[serde(rename = "null_1")]
    Null1,
    #[serde(rename = "null_2")]
    Null2,
}

impl ContextSetting {
    pub const ALL: [ContextSetting; 5] = [
        ContextSetting::Unprimed,
        ContextSetting::PrimedFeminine,
        ContextSetting::PrimedMasculine,
        ContextSetting::Null1,
        ContextSetting::Null2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextSetting::Unprimed => "unprimed",
            ContextSetting::PrimedFeminine => "primed_feminine",
            ContextSetting::PrimedMasculine => "primed_masculine",
            ContextSetting::Null1 => "null_1",
            ContextSetting::Null2 => "null_2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim())
    }

    /// Gender of the priming pronoun, for the two discourse-primed settings.
    pub fn prime_gender(self) -> Option<Gender> {
        match self {
            ContextSetting::PrimedFeminine => Some(Gender::Feminine),
            ContextSetting::PrimedMasculine => Some(Gender::Masculine),
            _ => None,
        }
    }

    pub fn is_discourse_primed(self) -> bool {
        self.prime_gender().is_some()
    }
}

impl fmt::Display for ContextSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Left-to-right order of the two pronoun options in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionOrder {
    MascFem,
    FemMasc,
}

impl OptionOrder {
    pub const ALL: [OptionOrder; 2] = [OptionOrder::MascFem, OptionOrder::FemMasc];

    pub fn as_str(self) -> &'static str {
        match self {
            OptionOrder::MascFem => "masc_fem",
            OptionOrder::FemMasc => "fem_masc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim())
    }
}

impl fmt::Display for OptionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered pair of pronoun surface forms as shown to the backend.
pub fn pronoun_options(case: PronounCase, order: OptionOrder) -> (&'static str, &'static str) {
    let fem = PronounLexicon::form(Gender::Feminine, case);
    let masc = PronounLexicon::form(Gender::Masculine, case);
    match order {
        OptionOrder::MascFem => (masc, fem),
        OptionOrder::FemMasc => (fem, masc),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub pair_id: String,
    pub target_role_kind: RoleKind,
    pub occupation_noun: String,
    pub participant_noun: String,
    pub pronoun_case: PronounCase,
    pub body: String,
    pub partner_body: String,
    /// Case of the PRONOUN slot in `partner_body`; the partner template's own case.
    pub partner_case: PronounCase,
}

impl Template {
    /// Noun the target BLANK refers to.
    pub fn target_noun(&self) -> &str {
        match self.target_role_kind {
            RoleKind::Occupation => &self.occupation_noun,
            RoleKind::Participant => &self.participant_noun,
        }
    }

    /// Noun the priming pronoun refers to.
    pub fn other_noun(&self) -> &str {
        match self.target_role_kind {
            RoleKind::Occupation => &self.participant_noun,
            RoleKind::Participant => &self.occupation_noun,
        }
    }

    /// The prime sentence for a setting, or `None` when unprimed.
    pub fn prime_sentence(&self, setting: ContextSetting) -> Result<Option<String>, SchemaError> {
        match setting {
            ContextSetting::Unprimed => Ok(None),
            ContextSetting::Null1 => Ok(Some(NULL_PRIME_1.to_string())),
            ContextSetting::Null2 => Ok(Some(NULL_PRIME_2.to_string())),
            ContextSetting::PrimedFeminine | ContextSetting::PrimedMasculine => {
                if count_token(&self.partner_body, PRONOUN) != 1 {
                    return Err(SchemaError::MissingPronounSlot(self.template_id.clone()));
                }
                let gender = setting.prime_gender().expect("primed setting");
                let form = PronounLexicon::form(gender, self.partner_case);
                Ok(Some(fill_slot(&self.partner_body, PRONOUN, form)))
            }
        }
    }
}

/// Expand a template into the passage shown for `setting`. BLANK is kept verbatim.
pub fn expand(template: &Template, setting: ContextSetting) -> Result<String, SchemaError> {
    Ok(match template.prime_sentence(setting)? {
        None => template.body.clone(),
        Some(prime) => format!("{prime} {}", template.body),
    })
}

/// Number of occurrences of `token` delimited by non-alphanumeric characters.
pub fn count_token(text: &str, token: &str) -> usize {
    token_positions(text, token).len()
}

fn token_positions(text: &str, token: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    text.match_indices(token)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
            let end = i + token.len();
            let after = end >= bytes.len() || !bytes[end].is_ascii_alphanumeric();
            before && after
        })
        .collect()
}

fn fill_slot(text: &str, token: &str, value: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for i in token_positions(text, token) {
        out.push_str(&text[last..i]);
        out.push_str(value);
        last = i + token.len();
    }
    out.push_str(&text[last..]);
    out
}

/// Both members of a pair, occupation-target member first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePair {
    pub pair_id: String,
    pub first: Template,
    pub second: Template,
}

/// Group templates by pair id. Pairs come out sorted by pair id.
pub fn pair_index(templates: &[Template]) -> Result<Vec<TemplatePair>, SchemaError> {
    let mut groups: BTreeMap<&str, Vec<&Template>> = BTreeMap::new();
    for t in templates {
        groups.entry(t.pair_id.as_str()).or_default().push(t);
    }
    let mut orphans = Vec::new();
    let mut pairs = Vec::new();
    for (pair_id, members) in groups {
        match members.as_slice() {
            [a, b] if a.target_role_kind != b.target_role_kind => {
                let (first, second) = if a.target_role_kind == RoleKind::Occupation {
                    (a, b)
                } else {
                    (b, a)
                };
                pairs.push(TemplatePair {
                    pair_id: pair_id.to_string(),
                    first: (*first).clone(),
                    second: (*second).clone(),
                });
            }
            _ => orphans.extend(members.iter().map(|t| t.template_id.clone())),
        }
    }
    if orphans.is_empty() {
        Ok(pairs)
    } else {
        orphans.sort();
        Err(SchemaError::Pairing(orphans))
    }
}

#[derive(Debug, Deserialize)]
struct SchemaRow {
    template_id: String,
    pair_id: String,
    target_role_kind: String,
    occupation_noun: String,
    participant_noun: String,
    pronoun_case: String,
    body: String,
    partner_body: String,
}

/// Outcome of schema validation: the well-formed templates plus every violation.
#[derive(Debug, Default)]
pub struct SchemaCheck {
    pub templates: Vec<Template>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parse and check a schema without failing on the first problem.
pub fn check_schema(path: &Path) -> Result<SchemaCheck, SchemaError> {
    let bytes = std::fs::read(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    };
    check_schema_bytes(&bytes, delimiter)
}

pub fn check_schema_bytes(bytes: &[u8], delimiter: u8) -> Result<SchemaCheck, SchemaError> {
    let mut check = SchemaCheck::default();
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(check);
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::Headers)
        .from_reader(bytes);
    let mut rows: Vec<(usize, SchemaRow)> = Vec::new();
    for (i, rec) in reader.deserialize::<SchemaRow>().enumerate() {
        // header is line 1
        let row = i + 2;
        match rec {
            Ok(r) => rows.push((row, r)),
            Err(e) => check.violations.push(format!("row {row}: unparseable record: {e}")),
        }
    }

    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut partial: Vec<(usize, Template)> = Vec::new();
    for (row, r) in rows {
        let mut errs = Vec::new();
        let role = match r.target_role_kind.trim() {
            "occupation" => Some(RoleKind::Occupation),
            "participant" => Some(RoleKind::Participant),
            other => {
                errs.push(format!("target_role_kind '{other}' is not occupation|participant"));
                None
            }
        };
        let case = PronounCase::parse(&r.pronoun_case);
        if case.is_none() {
            errs.push(format!("pronoun_case '{}' is not a known case", r.pronoun_case));
        }
        if r.template_id.trim().is_empty() {
            errs.push("empty template_id".into());
        }
        if r.pair_id.trim().is_empty() {
            errs.push("empty pair_id".into());
        }
        let blanks = count_token(&r.body, BLANK);
        if blanks != 1 {
            errs.push(format!("body must contain exactly one {BLANK} token, found {blanks}"));
        }
        let slots = count_token(&r.partner_body, PRONOUN);
        if slots != 1 {
            errs.push(format!(
                "partner_body must contain exactly one {PRONOUN} slot, found {slots}"
            ));
        }
        if count_token(&r.partner_body, BLANK) != 0 {
            errs.push(format!("partner_body must not contain {BLANK}"));
        }
        if let Some(prev) = seen_ids.insert(r.template_id.clone(), row) {
            errs.push(format!("duplicate template_id '{}' (first at row {prev})", r.template_id));
        }
        if !errs.is_empty() {
            for e in errs {
                check.violations.push(format!("row {row} ({}): {e}", r.template_id));
            }
            continue;
        }
        let case = case.expect("checked");
        partial.push((
            row,
            Template {
                template_id: r.template_id.trim().to_string(),
                pair_id: r.pair_id.trim().to_string(),
                target_role_kind: role.expect("checked"),
                occupation_noun: r.occupation_noun.trim().to_string(),
                participant_noun: r.participant_noun.trim().to_string(),
                pronoun_case: case,
                body: r.body,
                partner_body: r.partner_body,
                partner_case: case,
            },
        ));
    }

    let templates: Vec<Template> = partial.iter().map(|(_, t)| t.clone()).collect();
    match pair_index(&templates) {
        Ok(pairs) => {
            let mut by_id: BTreeMap<String, Template> = BTreeMap::new();
            for p in pairs {
                let (mut a, mut b) = (p.first, p.second);
                a.partner_case = b.pronoun_case;
                b.partner_case = a.pronoun_case;
                for (t, partner) in [(&a, &b), (&b, &a)] {
                    let expected = fill_slot(&partner.body, BLANK, PRONOUN);
                    if t.partner_body.trim() != expected.trim() {
                        check.warnings.push(format!(
                            "template {}: partner_body differs from partner {}'s body",
                            t.template_id, partner.template_id
                        ));
                    }
                }
                by_id.insert(a.template_id.clone(), a);
                by_id.insert(b.template_id.clone(), b);
            }
            // keep file order
            check.templates = partial
                .into_iter()
                .filter_map(|(_, t)| by_id.remove(&t.template_id))
                .collect();
        }
        Err(SchemaError::Pairing(orphans)) => {
            check
                .violations
                .push(format!("unpaired templates: {}", orphans.join(", ")));
            check.templates = templates;
        }
        Err(e) => return Err(e),
    }
    Ok(check)
}

/// Load a schema file, failing on any violation.
pub fn load_schema(path: &Path) -> Result<Vec<Template>, SchemaError> {
    let check = check_schema(path)?;
    into_templates(check)
}

pub fn load_schema_bytes(bytes: &[u8], delimiter: u8) -> Result<Vec<Template>, SchemaError> {
    into_templates(check_schema_bytes(bytes, delimiter)?)
}

fn into_templates(check: SchemaCheck) -> Result<Vec<Template>, SchemaError> {
    if let Some(first) = check.violations.first() {
        if check.violations.len() == 1 {
            if let Some(rest) = first.strip_prefix("unpaired templates: ") {
                return Err(SchemaError::Pairing(
                    rest.split(", ").map(str::to_string).collect(),
                ));
            }
            if let Some((row, rule)) = parse_row_violation(first) {
                return Err(SchemaError::Row { row, rule });
            }
        }
        return Err(SchemaError::Violations(check.violations));
    }
    Ok(check.templates)
}

fn parse_row_violation(v: &str) -> Option<(usize, String)> {
    let rest = v.strip_prefix("row ")?;
    let (num, rule) = rest.split_once(' ')?;
    Some((num.trim_end_matches(':').parse().ok()?, rule.to_string()))
}

/// Write templates in the schema file format.
pub fn write_schema(path: &Path, templates: &[Template]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "template_id",
        "pair_id",
        "target_role_kind",
        "occupation_noun",
        "participant_noun",
        "pronoun_case",
        "body",
        "partner_body",
    ])?;
    for t in templates {
        let role = match t.target_role_kind {
            RoleKind::Occupation => "occupation",
            RoleKind::Participant => "participant",
        };
        w.write_record([
            t.template_id.as_str(),
            &t.pair_id,
            role,
            &t.occupation_noun,
            &t.participant_noun,
            t.pronoun_case.as_str(),
            &t.body,
            &t.partner_body,
        ])?;
    }
    w.flush()
}
