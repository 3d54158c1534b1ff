//! Canonical answer values and the majority-vote (mode) primitive.
//!
//! Every answer that enters a vote is first reduced to a canonical key:
//! wrappers such as `\boxed{…}` and `$…$` are stripped, whitespace is
//! normalized, and integers are rewritten in minimal decimal form. Text
//! from which no answer can be extracted maps to the distinguished
//! [`AnswerKey::Abstain`] value, which is excluded from voting so that
//! unparseable probe output never wins a vote.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical answer value: the equality domain for all voting.
///
/// `Value` holds the normalized text key; `Abstain` marks an answer that
/// could not be extracted. Ordering is lexicographic byte order on the
/// key, with `Abstain` sorting first; vote tie-breaking relies on this.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnswerKey {
    Abstain,
    Value(String),
}

impl AnswerKey {
    pub fn is_abstain(&self) -> bool {
        matches!(self, AnswerKey::Abstain)
    }

    /// The canonical text, or `None` for an abstention.
    pub fn value(&self) -> Option<&str> {
        match self {
            AnswerKey::Abstain => None,
            AnswerKey::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerKey::Abstain => f.write_str("<abstain>"),
            AnswerKey::Value(v) => f.write_str(v),
        }
    }
}

/// An answer as produced by a model: the raw text plus its canonical key.
///
/// Equality, ordering, and hashing are all defined on the canonical key
/// alone; `raw` is carried for persistence fidelity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Answer {
    raw: String,
    key: AnswerKey,
}

impl Answer {
    /// The text exactly as produced.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn key(&self) -> &AnswerKey {
        &self.key
    }

    pub fn is_abstain(&self) -> bool {
        self.key.is_abstain()
    }

    /// Wraps a canonical key back into an `Answer`, using the canonical
    /// text as the raw form. Used for synthesized answers such as vote
    /// winners, where no single raw source string exists.
    pub fn from_key(key: AnswerKey) -> Self {
        let raw = match &key {
            AnswerKey::Abstain => String::new(),
            AnswerKey::Value(v) => v.clone(),
        };
        Answer { raw, key }
    }

    pub fn abstain() -> Self {
        Answer {
            raw: String::new(),
            key: AnswerKey::Abstain,
        }
    }
}

impl PartialEq for Answer {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Answer {}

impl PartialOrd for Answer {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Answer {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

impl std::hash::Hash for Answer {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.key.fmt(f)
    }
}

impl From<&str> for Answer {
    fn from(raw: &str) -> Self {
        canonicalize(raw)
    }
}

/// Normalizes raw model output into an [`Answer`].
///
/// Trims surrounding whitespace, strips enclosing `\boxed{…}` and `$…$`
/// wrappers (repeatedly, so nested wrappers unwrap), collapses internal
/// whitespace runs to a single space, and rewrites integers (optional
/// sign, `,` thousands separators ignored) in minimal decimal form.
/// An empty result canonicalizes to [`AnswerKey::Abstain`]. Total: never
/// fails.
pub fn canonicalize(raw: &str) -> Answer {
    let mut text = raw.trim();
    loop {
        let stripped = strip_wrapper(text);
        if stripped == text {
            break;
        }
        text = stripped;
    }
    let cleaned: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let key = if cleaned.is_empty() {
        AnswerKey::Abstain
    } else {
        match minimal_integer_form(&cleaned) {
            Some(n) => AnswerKey::Value(n),
            None => AnswerKey::Value(cleaned),
        }
    };
    Answer {
        raw: raw.to_string(),
        key,
    }
}

fn strip_wrapper(text: &str) -> &str {
    let text = text.trim();
    if let Some(inner) = text.strip_prefix("\\boxed{").and_then(|s| s.strip_suffix('}')) {
        return inner.trim();
    }
    if text.len() >= 2 && text.starts_with('$') && text.ends_with('$') {
        return text[1..text.len() - 1].trim();
    }
    text
}

/// Minimal decimal form of an integer literal, or `None` if the text is
/// not an integer. String-based so arbitrarily long digit runs survive.
fn minimal_integer_form(text: &str) -> Option<String> {
    let no_commas: String = text.chars().filter(|&c| c != ',').collect();
    let (negative, digits) = match no_commas.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, no_commas.strip_prefix('+').unwrap_or(&no_commas)),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let trimmed = digits.trim_start_matches('0');
    if trimmed.is_empty() {
        return Some("0".to_string());
    }
    Some(if negative {
        format!("-{trimmed}")
    } else {
        trimmed.to_string()
    })
}

/// Vote counts over canonical answer values. Abstentions are not
/// tallied; `total` is the number of counted (non-abstain) ballots.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl VoteTally {
    pub fn count(&self, value: &str) -> u64 {
        self.counts.get(value).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("cannot vote over an empty answer list")]
    EmptyVote,
}

/// Majority vote over a list of answers.
///
/// Abstentions are excluded from the tally; if every entry abstains the
/// winner is the abstain value itself. Ties break to the smallest
/// canonical value in lexicographic byte order, so the result depends
/// only on the input multiset, never on input order.
pub fn mode(answers: &[Answer]) -> Result<(Answer, VoteTally), VoteError> {
    mode_keys(answers.iter().map(Answer::key))
}

/// [`mode`] over bare canonical keys.
pub fn mode_keys<'a, I>(keys: I) -> Result<(Answer, VoteTally), VoteError>
where
    I: IntoIterator<Item = &'a AnswerKey>,
{
    let mut tally = VoteTally::default();
    let mut seen_any = false;
    for key in keys {
        seen_any = true;
        if let AnswerKey::Value(v) = key {
            *tally.counts.entry(v.clone()).or_insert(0) += 1;
            tally.total += 1;
        }
    }
    if !seen_any {
        return Err(VoteError::EmptyVote);
    }
    // BTreeMap iterates in ascending key order, so keeping the first
    // strictly-greatest count lands on the lexicographically smallest
    // winner among ties.
    let mut winner: Option<(&String, u64)> = None;
    for (value, &count) in &tally.counts {
        match winner {
            Some((_, best)) if count <= best => {}
            _ => winner = Some((value, count)),
        }
    }
    let winner = match winner {
        Some((value, _)) => Answer::from_key(AnswerKey::Value(value.clone())),
        None => Answer::abstain(),
    };
    Ok((winner, tally))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> AnswerKey {
        canonicalize(s).key().clone()
    }

    #[test]
    fn canonicalize_strips_boxed_wrapper() {
        assert_eq!(key("  \\boxed{117} "), AnswerKey::Value("117".into()));
    }

    #[test]
    fn canonicalize_minimal_decimal_form() {
        assert_eq!(key("017"), AnswerKey::Value("17".into()));
        assert_eq!(key("+042"), AnswerKey::Value("42".into()));
        assert_eq!(key("-007"), AnswerKey::Value("-7".into()));
        assert_eq!(key("000"), AnswerKey::Value("0".into()));
        assert_eq!(key("-0"), AnswerKey::Value("0".into()));
        assert_eq!(key("1,234,567"), AnswerKey::Value("1234567".into()));
    }

    #[test]
    fn canonicalize_empty_is_abstain() {
        assert_eq!(key(""), AnswerKey::Abstain);
        assert_eq!(key("   "), AnswerKey::Abstain);
        assert_eq!(key("$ $"), AnswerKey::Abstain);
        assert_eq!(key("\\boxed{}"), AnswerKey::Abstain);
    }

    #[test]
    fn canonicalize_nested_wrappers_and_whitespace() {
        assert_eq!(key("$\\boxed{ 42 }$"), AnswerKey::Value("42".into()));
        assert_eq!(key("x   +\t1"), AnswerKey::Value("x + 1".into()));
    }

    #[test]
    fn canonicalize_non_integer_text_passes_through() {
        assert_eq!(key("sqrt(2)"), AnswerKey::Value("sqrt(2)".into()));
        assert_eq!(key("12abc"), AnswerKey::Value("12abc".into()));
        assert_eq!(key(",,,"), AnswerKey::Value(",,,".into()));
    }

    #[test]
    fn canonicalize_is_pure() {
        for raw in ["\\boxed{ 9 }", "12", "", "foo bar"] {
            assert_eq!(canonicalize(raw).key(), canonicalize(raw).key());
        }
    }

    #[test]
    fn mode_strict_majority() {
        let answers: Vec<Answer> = ["a", "a", "b"].iter().map(|s| canonicalize(s)).collect();
        let (winner, tally) = mode(&answers).unwrap();
        assert_eq!(winner.key(), &AnswerKey::Value("a".into()));
        assert_eq!(tally.count("a"), 2);
        assert_eq!(tally.count("b"), 1);
        assert_eq!(tally.total, 3);
    }

    #[test]
    fn mode_tie_breaks_to_smallest_canonical() {
        let answers: Vec<Answer> = ["b", "a"].iter().map(|s| canonicalize(s)).collect();
        let (winner, _) = mode(&answers).unwrap();
        assert_eq!(winner.key(), &AnswerKey::Value("a".into()));
    }

    #[test]
    fn mode_excludes_abstain() {
        let answers = vec![Answer::abstain(), canonicalize("c"), Answer::abstain()];
        let (winner, tally) = mode(&answers).unwrap();
        assert_eq!(winner.key(), &AnswerKey::Value("c".into()));
        assert_eq!(tally.total, 1);
    }

    #[test]
    fn mode_all_abstain_wins_abstain() {
        let answers = vec![Answer::abstain(), Answer::abstain()];
        let (winner, tally) = mode(&answers).unwrap();
        assert!(winner.is_abstain());
        assert_eq!(tally.total, 0);
        assert!(tally.counts.is_empty());
    }

    #[test]
    fn mode_empty_input_is_an_error() {
        assert_eq!(mode(&[]).unwrap_err(), VoteError::EmptyVote);
    }

    #[test]
    fn mode_groups_by_canonical_not_raw() {
        let answers = vec![canonicalize("\\boxed{17}"), canonicalize(" 017 "), canonicalize("18")];
        let (winner, tally) = mode(&answers).unwrap();
        assert_eq!(winner.key(), &AnswerKey::Value("17".into()));
        assert_eq!(tally.count("17"), 2);
    }
}
