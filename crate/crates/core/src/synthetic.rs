//! Synthetic schemas and norms for simulation, tests and scale checks.
//!
//! Nouns carry the pair index ("mechanic3") so every pair has its own
//! antecedents and norms entries.

use rand::Rng;

use crate::norms::NormsTable;
use crate::schema::{PronounCase, RoleKind, Template, BLANK, PRONOUN};

const OCCUPATIONS: [&str; 8] = [
    "mechanic", "nurse", "engineer", "librarian", "pilot", "baker", "surgeon", "tailor",
];
const PARTICIPANTS: [&str; 8] = [
    "customer", "patient", "client", "visitor", "passenger", "student", "tenant", "guest",
];

/// (occupation-target body, its case, participant-target body, its case).
/// `{o}` and `{p}` stand for the two nouns.
const DESIGNS: [(&str, PronounCase, &str, PronounCase); 4] = [
    (
        "The {o} called to inform the {p} that BLANK had completed the repair.",
        PronounCase::Nominative,
        "The {o} called to inform the {p} that BLANK car would be ready in the morning.",
        PronounCase::PossessiveDependent,
    ),
    (
        "The {o} handed the {p} a form before BLANK shift ended.",
        PronounCase::PossessiveDependent,
        "The {o} handed the {p} a form and asked BLANK to sign it.",
        PronounCase::Accusative,
    ),
    (
        "The {p} asked the {o} whether the clinic still employed BLANK.",
        PronounCase::Accusative,
        "The {p} asked the {o} whether BLANK could get an earlier appointment.",
        PronounCase::Nominative,
    ),
    (
        "The {o} told the {p} that the signature on the permit was BLANK.",
        PronounCase::PossessiveIndependent,
        "The {o} told the {p} that the umbrella left by the door was BLANK.",
        PronounCase::PossessiveIndependent,
    ),
];

/// A schema of `n_pairs` well-formed pairs (2·n_pairs templates).
pub fn schema(n_pairs: usize) -> Vec<Template> {
    let mut out = Vec::with_capacity(2 * n_pairs);
    for i in 0..n_pairs {
        let occ = format!("{}{i}", OCCUPATIONS[i % OCCUPATIONS.len()]);
        let part = format!("{}{i}", PARTICIPANTS[(i / OCCUPATIONS.len()) % PARTICIPANTS.len()]);
        let (occ_body, occ_case, part_body, part_case) = DESIGNS[i % DESIGNS.len()];
        let fill = |s: &str| s.replace("{o}", &occ).replace("{p}", &part);
        let (occ_body, part_body) = (fill(occ_body), fill(part_body));
        let pair_id = format!("pair{i:04}");
        let member = |suffix: &str, role, body: &String, case, partner: &String, partner_case| Template {
            template_id: format!("t{i:04}{suffix}"),
            pair_id: pair_id.clone(),
            target_role_kind: role,
            occupation_noun: occ.clone(),
            participant_noun: part.clone(),
            pronoun_case: case,
            body: body.clone(),
            partner_body: partner.replace(BLANK, PRONOUN),
            partner_case,
        };
        out.push(member("a", RoleKind::Occupation, &occ_body, occ_case, &part_body, part_case));
        out.push(member("b", RoleKind::Participant, &part_body, part_case, &occ_body, occ_case));
    }
    out
}

/// Ratings drawn uniformly from [0, 1] for each noun of the schema; each
/// noun is covered with probability `coverage`.
pub fn norms(templates: &[Template], coverage: f64, seed: u64) -> NormsTable {
    let mut rng = crate::seed::rng(seed);
    let mut table = NormsTable::new(format!("synthetic(seed={seed}, coverage={coverage})"));
    let mut nouns: Vec<&str> = templates
        .iter()
        .flat_map(|t| [t.occupation_noun.as_str(), t.participant_noun.as_str()])
        .collect();
    nouns.sort_unstable();
    nouns.dedup();
    for noun in nouns {
        let rating: f64 = rng.random();
        if rng.random::<f64>() < coverage {
            table.insert(noun, rating).expect("rating in range");
        }
    }
    table
}
