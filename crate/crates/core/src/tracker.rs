//! Target-phrase detection and the practice-box usage state.
//!
//! Detection works on token sequences produced by [`normalize`]: a phrase is
//! used when any of its configured variants appears as a contiguous run of
//! tokens. Matches for one phrase never overlap; matches of different phrases
//! may.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PhraseInventory, PracticeSet, ReminderPolicy, TargetPhrase};
use crate::ids::PhraseId;

/// Uses needed before a phrase counts as practised.
pub const PRACTICE_TARGET: u32 = 2;

/// Lowercases, treats punctuation as a separator, and splits on whitespace.
/// Apostrophes inside a word are kept (`it's`, `i'll`); curly apostrophes are
/// folded to `'`.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' => '\'',
            c if c.is_alphanumeric() || c == '\'' => c,
            _ => ' ',
        })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Half-open token interval `[start, end)` into the normalized transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub phrase_id: PhraseId,
    pub occurrences: u32,
    pub spans: Vec<Span>,
}

/// Variants of the practised phrases, tokenized once and indexed by first token.
#[derive(Clone, Debug)]
pub struct PhraseMatcher {
    phrases: Vec<CompiledPhrase>,
}

#[derive(Clone, Debug)]
struct CompiledPhrase {
    id: PhraseId,
    // first token -> variants starting with it, longest first
    by_head: HashMap<String, Vec<Vec<String>>>,
}

impl PhraseMatcher {
    pub fn new<'a>(phrases: impl IntoIterator<Item = &'a TargetPhrase>) -> Self {
        let phrases = phrases
            .into_iter()
            .map(|p| {
                let mut by_head: HashMap<String, Vec<Vec<String>>> = HashMap::new();
                for variant in &p.variants {
                    let tokens = normalize(variant);
                    if let Some(head) = tokens.first() {
                        let bucket = by_head.entry(head.clone()).or_default();
                        if !bucket.contains(&tokens) {
                            bucket.push(tokens);
                        }
                    }
                }
                for bucket in by_head.values_mut() {
                    bucket.sort_by_key(|v| std::cmp::Reverse(v.len()));
                }
                CompiledPhrase { id: p.id.clone(), by_head }
            })
            .collect();
        Self { phrases }
    }

    pub fn for_practice(practice: &PracticeSet, inventory: &PhraseInventory) -> Self {
        Self::new(practice.phrases(inventory))
    }

    /// One result per compiled phrase, in construction order.
    pub fn detect_tokens(&self, tokens: &[String]) -> Vec<DetectionResult> {
        self.phrases
            .iter()
            .map(|phrase| {
                let mut spans = Vec::new();
                let mut i = 0;
                while i < tokens.len() {
                    let hit = phrase.by_head.get(&tokens[i]).and_then(|candidates| {
                        candidates
                            .iter()
                            .find(|v| tokens[i..].starts_with(v))
                            .map(Vec::len)
                    });
                    match hit {
                        Some(len) => {
                            spans.push(Span { start: i, end: i + len });
                            i += len;
                        }
                        None => i += 1,
                    }
                }
                DetectionResult {
                    phrase_id: phrase.id.clone(),
                    occurrences: spans.len() as u32,
                    spans,
                }
            })
            .collect()
    }

    pub fn detect(&self, transcript: &str) -> Vec<DetectionResult> {
        self.detect_tokens(&normalize(transcript))
    }
}

/// Detects each practised phrase in a learner transcript.
pub fn detect(transcript: &str, practice: &PracticeSet, inventory: &PhraseInventory) -> Vec<DetectionResult> {
    PhraseMatcher::for_practice(practice, inventory).detect(transcript)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Neutral,
    Red,
    Green,
}

impl Color {
    pub fn for_count(count: u32) -> Self {
        match count {
            0 => Color::Neutral,
            1 => Color::Red,
            _ => Color::Green,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageState {
    pub phrase_id: PhraseId,
    pub count: u32,
    pub color: Color,
}

impl UsageState {
    pub fn new(phrase_id: PhraseId) -> Self {
        Self { phrase_id, count: 0, color: Color::Neutral }
    }
}

pub fn initial_usage(practice: &PracticeSet) -> Vec<UsageState> {
    practice.ids().iter().cloned().map(UsageState::new).collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("detection for phrase {0} which is not being tracked")]
pub struct UnknownPhrase(pub PhraseId);

/// Adds each detection's occurrences to the matching state and recomputes colours.
pub fn apply_detections(
    states: &[UsageState],
    detections: &[DetectionResult],
) -> Result<Vec<UsageState>, UnknownPhrase> {
    let mut next = states.to_vec();
    for d in detections {
        let state = next
            .iter_mut()
            .find(|s| s.phrase_id == d.phrase_id)
            .ok_or_else(|| UnknownPhrase(d.phrase_id.clone()))?;
        state.count += d.occurrences;
        state.color = Color::for_count(state.count);
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderDecision {
    pub turn_index: u8,
    pub phrase_ids: Vec<PhraseId>,
}

impl ReminderDecision {
    pub fn is_empty(&self) -> bool {
        self.phrase_ids.is_empty()
    }
}

/// On a reminder turn, picks up to `policy.max_phrases` phrases still below
/// the practice target, lowest count first, ties broken by inventory order.
pub fn reminder_due(
    states: &[UsageState],
    turn_index: u8,
    policy: &ReminderPolicy,
    inventory: &PhraseInventory,
) -> ReminderDecision {
    let mut phrase_ids = Vec::new();
    if policy.turns.contains(&turn_index) {
        let mut candidates: Vec<&UsageState> = states.iter().filter(|s| s.count < PRACTICE_TARGET).collect();
        candidates.sort_by_key(|s| (s.count, inventory.position(&s.phrase_id).unwrap_or(usize::MAX)));
        phrase_ids = candidates
            .into_iter()
            .take(policy.max_phrases)
            .map(|s| s.phrase_id.clone())
            .collect();
    }
    ReminderDecision { turn_index, phrase_ids }
}
