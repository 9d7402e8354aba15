//! Static game content and its loader.
//!
//! A game is described by a single TOML document (see `docs/config.md`). The
//! loader is all-or-nothing: [`GameConfig::from_toml_str`] either returns a
//! configuration whose every invariant holds or a [`ConfigError`] naming the
//! first violation found.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{HeroId, NpcId, PhraseId, SceneId};
use crate::tracker::normalize;

pub const CONFIG_VERSION: u32 = 1;
pub const INVENTORY_SIZE: usize = 12;
pub const PRACTICE_SIZE: usize = 5;
pub const HERO_COUNT: usize = 4;
pub const PHASE_COUNT: usize = 3;
pub const TOTAL_TURNS: u8 = 12;

/// Phase turn ranges used when a `[[phases]]` table omits `turns`.
pub const DEFAULT_PHASE_TURNS: [TurnRange; PHASE_COUNT] = [
    TurnRange { first: 1, last: 4 },
    TurnRange { first: 5, last: 8 },
    TurnRange { first: 9, last: 12 },
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config document: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Validation(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PracticeError {
    #[error("practice set has {0} phrases, expected {PRACTICE_SIZE}")]
    WrongSize(usize),
    #[error("phrase {0} is not in the inventory")]
    UnknownPhrase(PhraseId),
    #[error("phrase {0} selected twice")]
    Duplicate(PhraseId),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown game state {0:?}")]
pub struct UnknownState(pub String);

/// A slang expression the learner can choose to practise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPhrase {
    pub id: PhraseId,
    pub canonical: String,
    pub meaning: String,
    pub example: String,
    /// Surface forms counted as a use of the phrase, canonical included.
    pub variants: Vec<String>,
    /// Meaning keywords used by the deterministic grader.
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhraseInventory(Vec<TargetPhrase>);

impl PhraseInventory {
    pub fn new(phrases: Vec<TargetPhrase>) -> Self {
        Self(phrases)
    }

    pub fn get(&self, id: &PhraseId) -> Option<&TargetPhrase> {
        self.0.iter().find(|p| &p.id == id)
    }

    /// Position of `id` in authored order; used as the reminder tie-break.
    pub fn position(&self, id: &PhraseId) -> Option<usize> {
        self.0.iter().position(|p| &p.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TargetPhrase> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The five phrases a learner chose, in selection order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PracticeSet(Vec<PhraseId>);

impl PracticeSet {
    pub fn new(ids: Vec<PhraseId>, inventory: &PhraseInventory) -> Result<Self, PracticeError> {
        if ids.len() != PRACTICE_SIZE {
            return Err(PracticeError::WrongSize(ids.len()));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if inventory.get(id).is_none() {
                return Err(PracticeError::UnknownPhrase(id.clone()));
            }
            if !seen.insert(id) {
                return Err(PracticeError::Duplicate(id.clone()));
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[PhraseId] {
        &self.0
    }

    pub fn contains(&self, id: &PhraseId) -> bool {
        self.0.contains(id)
    }

    /// Resolves every id against `inventory`. Ids were checked at construction.
    pub fn phrases<'a>(&self, inventory: &'a PhraseInventory) -> Vec<&'a TargetPhrase> {
        self.0.iter().filter_map(|id| inventory.get(id)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hero {
    pub id: HeroId,
    pub name: String,
    pub description: String,
    pub abilities: Vec<String>,
    pub portrait_asset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Npc {
    pub id: NpcId,
    pub name: String,
    /// Persona text passed to the game master.
    pub description: String,
    pub portrait_asset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneAsset {
    pub id: SceneId,
    pub image_ref: String,
    pub state_tags: BTreeSet<String>,
}

/// Inclusive turn interval, written `[first, last]` in the document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(u8, u8)", into = "(u8, u8)")]
pub struct TurnRange {
    pub first: u8,
    pub last: u8,
}

impl TurnRange {
    pub fn contains(&self, turn: u8) -> bool {
        self.first <= turn && turn <= self.last
    }
}

impl From<(u8, u8)> for TurnRange {
    fn from((first, last): (u8, u8)) -> Self {
        Self { first, last }
    }
}

impl From<TurnRange> for (u8, u8) {
    fn from(r: TurnRange) -> Self {
        (r.first, r.last)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub number: u8,
    pub title: String,
    pub goal: String,
    pub turns: TurnRange,
    /// Location every branch of this phase converges on at its last turn.
    pub checkpoint: String,
    pub locations: Vec<String>,
    #[serde(default)]
    pub encounters: Vec<String>,
}

impl PhaseSpec {
    pub fn allows(&self, location: &str) -> bool {
        self.locations.iter().any(|l| l == location)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderPolicy {
    pub turns: Vec<u8>,
    pub max_phrases: usize,
}

impl Default for ReminderPolicy {
    fn default() -> Self {
        Self { turns: vec![6, 9, 12], max_phrases: 2 }
    }
}

/// Minimum checkpoint totals for the two upper endings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeThresholds {
    pub triumphant_at: u32,
    pub mixed_at: u32,
}

/// Chat-completion endpoint used when the external provider is selected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSettings {
    pub endpoint: String,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub config_version: u32,
    pub start_location: String,
    pub intro_video_ref: String,
    pub classroom_persona: String,
    #[serde(default)]
    pub reminders: ReminderPolicy,
    pub outcome: OutcomeThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderSettings>,
    pub phrases: PhraseInventory,
    pub heroes: Vec<Hero>,
    pub npcs: Vec<Npc>,
    pub scenes: Vec<SceneAsset>,
    pub phases: Vec<PhaseSpec>,
}

impl GameConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        fill_default_phase_turns(&mut doc);
        let config: GameConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 of the canonical serialization; recorded in session logs so a
    /// replay can refuse a different configuration.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate(self).map_err(ConfigError::Validation)
    }

    pub fn hero(&self, id: &HeroId) -> Option<&Hero> {
        self.heroes.iter().find(|h| &h.id == id)
    }

    pub fn npc(&self, id: &NpcId) -> Option<&Npc> {
        self.npcs.iter().find(|n| &n.id == id)
    }

    pub fn scene(&self, id: &SceneId) -> Option<&SceneAsset> {
        self.scenes.iter().find(|s| &s.id == id)
    }

    pub fn phase(&self, number: u8) -> Option<&PhaseSpec> {
        self.phases.iter().find(|p| p.number == number)
    }

    /// Phase whose range contains `turn`. Turn 0 (not started) maps to phase 1.
    pub fn phase_for_turn(&self, turn: u8) -> &PhaseSpec {
        let turn = turn.max(1);
        self.phases
            .iter()
            .find(|p| p.turns.contains(turn))
            .expect("validated phases partition every turn")
    }

    pub fn is_phase_final(&self, turn: u8) -> bool {
        self.phases.iter().any(|p| p.turns.last == turn)
    }

    pub fn all_locations(&self) -> BTreeSet<&str> {
        self.phases
            .iter()
            .flat_map(|p| p.locations.iter().map(String::as_str))
            .collect()
    }
}

/// First configured scene whose tags contain `state_label`.
pub fn resolve_scene<'a>(state_label: &str, config: &'a GameConfig) -> Result<&'a SceneAsset, UnknownState> {
    if !config.phases.iter().any(|p| p.allows(state_label)) {
        return Err(UnknownState(state_label.to_owned()));
    }
    config
        .scenes
        .iter()
        .find(|s| s.state_tags.contains(state_label))
        .ok_or_else(|| UnknownState(state_label.to_owned()))
}

fn fill_default_phase_turns(doc: &mut toml::Table) {
    let Some(toml::Value::Array(phases)) = doc.get_mut("phases") else {
        return;
    };
    for phase in phases.iter_mut() {
        let toml::Value::Table(table) = phase else { continue };
        if table.contains_key("turns") {
            continue;
        }
        let Some(number) = table.get("number").and_then(toml::Value::as_integer) else {
            continue;
        };
        if let Some(range) = usize::try_from(number - 1).ok().and_then(|i| DEFAULT_PHASE_TURNS.get(i)) {
            table.insert(
                "turns".into(),
                toml::Value::Array(vec![i64::from(range.first).into(), i64::from(range.last).into()]),
            );
        }
    }
}

fn unique<'a, I>(ids: I, what: &str) -> Result<(), String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(format!("{what} id {id} duplicated"));
        }
    }
    Ok(())
}

fn validate(c: &GameConfig) -> Result<(), String> {
    if c.config_version != CONFIG_VERSION {
        return Err(format!(
            "unsupported config_version {} (expected {CONFIG_VERSION})",
            c.config_version
        ));
    }

    if c.phrases.len() != INVENTORY_SIZE {
        return Err(format!("inventory size {} ≠ {INVENTORY_SIZE}", c.phrases.len()));
    }
    unique(c.phrases.iter().map(|p| p.id.as_str()), "phrase")?;
    for p in c.phrases.iter() {
        let canonical = normalize(&p.canonical);
        if canonical.is_empty() {
            return Err(format!("phrase {} has an empty canonical form", p.id));
        }
        if p.variants.is_empty() {
            return Err(format!("phrase {} has no variants", p.id));
        }
        if p.variants.iter().any(|v| normalize(v).is_empty()) {
            return Err(format!("phrase {} has an empty variant", p.id));
        }
        if !p.variants.iter().any(|v| normalize(v) == canonical) {
            return Err(format!("phrase {} variants do not include the canonical form", p.id));
        }
    }

    if c.heroes.len() != HERO_COUNT {
        return Err(format!("hero count {} ≠ {HERO_COUNT}", c.heroes.len()));
    }
    unique(c.heroes.iter().map(|h| h.id.as_str()), "hero")?;

    unique(c.npcs.iter().map(|n| n.id.as_str()), "npc")?;
    if let Some(n) = c.npcs.iter().find(|n| n.description.trim().is_empty()) {
        return Err(format!("npc {} has an empty description", n.id));
    }

    validate_phases(c)?;

    if !c.phase(1).is_some_and(|p| p.allows(&c.start_location)) {
        return Err(format!("start location {} is not a phase 1 location", c.start_location));
    }

    unique(c.scenes.iter().map(|s| s.id.as_str()), "scene")?;
    for location in c.all_locations() {
        if !c.scenes.iter().any(|s| s.state_tags.contains(location)) {
            return Err(format!("scene missing for location {location}"));
        }
    }

    if c.reminders.max_phrases == 0 {
        return Err("reminders.max_phrases must be at least 1".into());
    }
    if let Some(t) = c.reminders.turns.iter().find(|t| !(1..=TOTAL_TURNS).contains(*t)) {
        return Err(format!("reminder turn {t} outside 1..={TOTAL_TURNS}"));
    }
    if c.outcome.triumphant_at < c.outcome.mixed_at {
        return Err("outcome.triumphant_at is below outcome.mixed_at".into());
    }
    Ok(())
}

fn validate_phases(c: &GameConfig) -> Result<(), String> {
    if c.phases.len() != PHASE_COUNT {
        return Err(format!("phase count {} ≠ {PHASE_COUNT}", c.phases.len()));
    }
    for (expected, phase) in (1u8..).zip(&c.phases) {
        if phase.number != expected {
            return Err(format!("phase {} listed where phase {expected} expected", phase.number));
        }
        let r = phase.turns;
        if r.first == 0 || r.first > r.last || r.last > TOTAL_TURNS {
            return Err(format!(
                "phase {} turn range {}–{} is not within 1–{TOTAL_TURNS}",
                phase.number, r.first, r.last
            ));
        }
        if phase.locations.is_empty() {
            return Err(format!("phase {} has no locations", phase.number));
        }
        if !phase.allows(&phase.checkpoint) {
            return Err(format!(
                "phase {} checkpoint {} is not among its locations",
                phase.number, phase.checkpoint
            ));
        }
    }
    for turn in 1..=TOTAL_TURNS {
        match c.phases.iter().filter(|p| p.turns.contains(turn)).count() {
            0 => return Err(format!("turn {turn} is not covered by any phase")),
            1 => {}
            _ => return Err(format!("turn ranges overlap at {turn}")),
        }
    }
    for pair in c.phases.windows(2) {
        if pair[0].turns.last >= pair[1].turns.first {
            return Err(format!("phase {} turns precede phase {}", pair[1].number, pair[0].number));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../../../fixtures/config.toml");

    fn fixture_with(edit: impl FnOnce(&mut toml::Table)) -> String {
        let mut doc: toml::Table = FIXTURE.parse().unwrap();
        edit(&mut doc);
        toml::to_string(&doc).unwrap()
    }

    fn validation_message(text: &str) -> String {
        match GameConfig::from_toml_str(text) {
            Err(ConfigError::Validation(msg)) => msg,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn fixture_loads() {
        let c = GameConfig::from_toml_str(FIXTURE).unwrap();
        assert_eq!(c.phrases.len(), 12);
        assert_eq!(c.heroes.len(), 4);
        assert_eq!(c.phases.len(), 3);
        assert_eq!(c.phase_for_turn(4).number, 1);
        assert_eq!(c.phase_for_turn(5).number, 2);
        assert_eq!(c.phase_for_turn(0).number, 1);
        assert!(c.is_phase_final(8));
    }

    #[test]
    fn eleven_phrases_rejected() {
        let text = fixture_with(|doc| {
            doc.get_mut("phrases").unwrap().as_array_mut().unwrap().pop();
        });
        assert_eq!(validation_message(&text), "inventory size 11 ≠ 12");
    }

    #[test]
    fn overlapping_turn_ranges_rejected() {
        let text = fixture_with(|doc| {
            let phases = doc.get_mut("phases").unwrap().as_array_mut().unwrap();
            let set = |p: &mut toml::Value, a: i64, b: i64| {
                p.as_table_mut()
                    .unwrap()
                    .insert("turns".into(), toml::Value::Array(vec![a.into(), b.into()]));
            };
            set(&mut phases[0], 1, 4);
            set(&mut phases[1], 5, 9);
            set(&mut phases[2], 9, 12);
        });
        assert_eq!(validation_message(&text), "turn ranges overlap at 9");
    }

    #[test]
    fn duplicated_hero_rejected() {
        let text = fixture_with(|doc| {
            let heroes = doc.get_mut("heroes").unwrap().as_array_mut().unwrap();
            let first = heroes[0].get("id").unwrap().clone();
            heroes[1].as_table_mut().unwrap().insert("id".into(), first);
        });
        assert!(validation_message(&text).starts_with("hero id"));
    }

    #[test]
    fn location_without_scene_rejected() {
        let text = fixture_with(|doc| {
            let phases = doc.get_mut("phases").unwrap().as_array_mut().unwrap();
            phases[1]
                .get_mut("locations")
                .unwrap()
                .as_array_mut()
                .unwrap()
                .push("nowhere".into());
        });
        assert_eq!(validation_message(&text), "scene missing for location nowhere");
    }

    #[test]
    fn missing_turns_use_default_split() {
        let text = fixture_with(|doc| {
            for p in doc.get_mut("phases").unwrap().as_array_mut().unwrap() {
                p.as_table_mut().unwrap().remove("turns");
            }
        });
        let c = GameConfig::from_toml_str(&text).unwrap();
        let ranges: Vec<_> = c.phases.iter().map(|p| p.turns).collect();
        assert_eq!(ranges, DEFAULT_PHASE_TURNS.to_vec());
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(
            GameConfig::from_toml_str("config_version = = 1"),
            Err(ConfigError::Parse(_))
        ));
        // well-formed TOML, wrong shape
        assert!(matches!(
            GameConfig::from_toml_str("config_version = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let text = fixture_with(|doc| {
            doc.insert("config_version".into(), 2.into());
        });
        assert!(validation_message(&text).contains("config_version"));
    }

    #[test]
    fn round_trip_is_structurally_equal() {
        let c = GameConfig::from_toml_str(FIXTURE).unwrap();
        let again = GameConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.digest(), again.digest());
    }

    #[test]
    fn scene_resolution() {
        let mut c = GameConfig::from_toml_str(FIXTURE).unwrap();
        let start = c.start_location.clone();
        let first = resolve_scene(&start, &c).unwrap().id.clone();
        assert_eq!(resolve_scene(&start, &c).unwrap().id, first);
        assert_eq!(resolve_scene("void", &c), Err(UnknownState("void".into())));

        // a second asset for the same label loses the tie to configuration order
        let mut extra = c.scene(&first).unwrap().clone();
        extra.id = SceneId::new("later-duplicate");
        c.scenes.push(extra);
        assert_eq!(resolve_scene(&start, &c).unwrap().id, first);
    }

    #[test]
    fn practice_set_guards() {
        let c = GameConfig::from_toml_str(FIXTURE).unwrap();
        let ids: Vec<PhraseId> = c.phrases.iter().take(5).map(|p| p.id.clone()).collect();
        assert!(PracticeSet::new(ids.clone(), &c.phrases).is_ok());
        assert_eq!(
            PracticeSet::new(ids[..4].to_vec(), &c.phrases),
            Err(PracticeError::WrongSize(4))
        );
        let mut dup = ids.clone();
        dup[4] = dup[0].clone();
        assert_eq!(PracticeSet::new(dup, &c.phrases), Err(PracticeError::Duplicate(ids[0].clone())));
        let mut unknown = ids;
        unknown[2] = PhraseId::new("not-a-phrase");
        assert!(matches!(
            PracticeSet::new(unknown, &c.phrases),
            Err(PracticeError::UnknownPhrase(_))
        ));
    }
}
