//! Game-master orchestration.
//!
//! A turn goes: [`build_gm_prompt`] serializes the session context into a
//! [`GmRequest`]; a [`NarrativeProvider`] answers with free narrative text
//! followed by a fenced JSON block; [`parse_gm_response`] checks that reply
//! against a [`ResponseContract`] derived from the session. Rejected replies
//! are re-asked by [`request_with_retry`] with the violation as a repair hint.
//!
//! Reply format (see `docs/gm-protocol.md`):
//!
//! ````text
//! The elder smiles. "Going in blind? You'd have to wing it."
//!
//! ```json
//! {"next_state": "elder-hut", "speaking_npc": "elder", "scene": "auto",
//!  "recast_phrases": ["wing-it"], "checkpoint_delta": 1, "party_delta": []}
//! ```
//! ````

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{resolve_scene, GameConfig, PhraseInventory, PracticeSet, TOTAL_TURNS};
use crate::ids::{HeroId, NpcId, PhraseId, SceneId};
use crate::session::{Decision, SessionState};
use crate::tracker::PhraseMatcher;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

pub const GM_SYSTEM_PROMPT: &str = "You are the Game Master of a spoken role-playing adventure for English learners. \
You voice the narrator and the non-player characters, keep the story coherent with the game state you are given, \
and answer in the exact reply format requested.";

const GM_INSTRUCTIONS: &str = "\
INSTRUCTIONS
1. Advance the narrative in response to the player's latest input, in two to five sentences, voiced by one NPC.
2. When it fits the situation, use one or more of the target phrases in meaningful context, optionally paired \
with a synonym. Favour phrases with low usage counts. Never force a phrase where it does not fit.
3. Choose next_state from possible_locations. If required_next_state is set, next_state MUST equal it.
4. End your reply with a fenced ```json block holding exactly these fields:
   next_state (string), speaking_npc (an id from npc_roster), scene (a scene id or \"auto\"),
   recast_phrases (ids of target phrases your narrative actually contains), checkpoint_delta (integer 0-3),
   party_delta (ids of NPCs joining the party this turn), master_assessment (string, only on the final turn).";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: NpcId,
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateBrief {
    pub location: String,
    pub phase: u8,
    pub phase_title: String,
    pub phase_goal: String,
    pub possible_locations: Vec<String>,
    pub encounters: Vec<String>,
    /// Set when the turn closes a phase: the checkpoint every branch converges on.
    pub required_next_state: Option<String>,
    pub final_turn: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseBrief {
    pub id: PhraseId,
    pub phrase: String,
    pub meaning: String,
    pub uses_so_far: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeroBrief {
    pub id: HeroId,
    pub name: String,
    pub abilities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmRequest {
    pub session_id: String,
    /// The turn this request is for (one past the state's turn index).
    pub turn_index: u8,
    pub npc_roster: Vec<RosterEntry>,
    pub current_state: StateBrief,
    pub target_phrases: Vec<PhraseBrief>,
    pub hero: HeroBrief,
    pub party: Vec<NpcId>,
    pub decision_history: Vec<Decision>,
    pub player_input: String,
}

impl GmRequest {
    /// Prompt text sent to the provider. Deterministic for a given request.
    pub fn render(&self) -> String {
        let context = serde_json::to_string_pretty(self).expect("request serializes");
        format!("GAME CONTEXT\n{context}\n\n{GM_INSTRUCTIONS}\n")
    }
}

/// Serializes the session context for the next turn. `player_input` is the
/// learner's transcript for that turn.
pub fn build_gm_prompt(state: &SessionState, config: &GameConfig, player_input: &str) -> GmRequest {
    let turn = (state.turn_index + 1).min(TOTAL_TURNS);
    let phase = config.phase_for_turn(turn);
    let hero = state
        .hero_id
        .as_ref()
        .and_then(|id| config.hero(id))
        .map(|h| HeroBrief { id: h.id.clone(), name: h.name.clone(), abilities: h.abilities.clone() })
        .unwrap_or_else(|| HeroBrief { id: HeroId::new(""), name: String::new(), abilities: vec![] });
    GmRequest {
        session_id: state.session_id.clone(),
        turn_index: turn,
        npc_roster: config
            .npcs
            .iter()
            .map(|n| RosterEntry { id: n.id.clone(), name: n.name.clone(), description: n.description.clone() })
            .collect(),
        current_state: StateBrief {
            location: state.location.clone().unwrap_or_else(|| config.start_location.clone()),
            phase: phase.number,
            phase_title: phase.title.clone(),
            phase_goal: phase.goal.clone(),
            possible_locations: phase.locations.clone(),
            encounters: phase.encounters.clone(),
            required_next_state: (phase.turns.last == turn).then(|| phase.checkpoint.clone()),
            final_turn: turn == TOTAL_TURNS,
        },
        target_phrases: state
            .practice
            .phrases(&config.phrases)
            .into_iter()
            .map(|p| PhraseBrief {
                id: p.id.clone(),
                phrase: p.canonical.clone(),
                meaning: p.meaning.clone(),
                uses_so_far: state.usage_of(&p.id).map_or(0, |u| u.count),
            })
            .collect(),
        hero,
        party: state.party.iter().cloned().collect(),
        decision_history: state.decision_history.clone(),
        player_input: player_input.to_owned(),
    }
}

/// A validated game-master reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmResponse {
    pub narrative: String,
    pub next_state: String,
    pub speaking_npc: NpcId,
    /// Concrete scene; `"auto"` in the raw reply is resolved from `next_state`.
    pub scene: SceneId,
    pub recast_phrases: Vec<PhraseId>,
    pub checkpoint_delta: u8,
    pub party_delta: Vec<NpcId>,
    pub master_assessment: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawReply {
    next_state: String,
    speaking_npc: String,
    #[serde(default = "auto_scene")]
    scene: String,
    #[serde(default)]
    recast_phrases: Vec<String>,
    #[serde(default)]
    checkpoint_delta: i64,
    #[serde(default)]
    party_delta: Vec<String>,
    #[serde(default)]
    master_assessment: Option<String>,
}

fn auto_scene() -> String {
    "auto".into()
}

/// A reply that parsed but broke the response contract.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    #[error("unknown npc {id}")]
    UnknownNpc { id: String },
    #[error("unknown party member {id}")]
    UnknownPartyMember { id: String },
    #[error("illegal next_state {state}: not a location of phase {phase}")]
    IllegalNextState { state: String, phase: u8 },
    #[error("checkpoint required: next_state must be {expected}, got {got}")]
    CheckpointRequired { expected: String, got: String },
    #[error("unknown scene {id}")]
    UnknownScene { id: String },
    #[error("recast outside practice set: {id}")]
    RecastOutsidePractice { id: String },
    #[error("recast not present: narrative does not contain {id}")]
    RecastNotPresent { id: String },
    #[error("master_assessment missing on the final turn")]
    MissingMasterAssessment,
    #[error("master_assessment given before the final turn")]
    UnexpectedMasterAssessment,
}

impl Violation {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::UnknownNpc { .. } => "unknown_npc",
            Violation::UnknownPartyMember { .. } => "unknown_party_member",
            Violation::IllegalNextState { .. } => "illegal_next_state",
            Violation::CheckpointRequired { .. } => "checkpoint_required",
            Violation::UnknownScene { .. } => "unknown_scene",
            Violation::RecastOutsidePractice { .. } => "recast_outside_practice",
            Violation::RecastNotPresent { .. } => "recast_not_present",
            Violation::MissingMasterAssessment => "missing_master_assessment",
            Violation::UnexpectedMasterAssessment => "unexpected_master_assessment",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("contract violation: {0}")]
    ContractViolation(Violation),
}

impl ParseError {
    fn repair_hint(&self) -> String {
        match self {
            ParseError::Malformed(why) => format!(
                "Your previous reply could not be parsed ({why}). Write the narrative, then one fenced ```json block with the required fields."
            ),
            ParseError::ContractViolation(v) => {
                format!("Your previous reply was rejected ({}: {v}). Fix this and reply again.", v.code())
            }
        }
    }
}

/// Everything a reply for one specific turn is checked against.
pub struct ResponseContract<'a> {
    config: &'a GameConfig,
    turn: u8,
    practice: PracticeSet,
    matcher: PhraseMatcher,
}

impl<'a> ResponseContract<'a> {
    /// Contract for the turn following `state.turn_index`.
    pub fn for_next_turn(state: &SessionState, config: &'a GameConfig) -> Self {
        Self::new(config, (state.turn_index + 1).min(TOTAL_TURNS), state.practice.clone())
    }

    pub fn new(config: &'a GameConfig, turn: u8, practice: PracticeSet) -> Self {
        let matcher = PhraseMatcher::for_practice(&practice, &config.phrases);
        Self { config, turn, practice, matcher }
    }

    pub fn turn(&self) -> u8 {
        self.turn
    }
}

fn split_reply(raw: &str) -> Result<(&str, &str), ParseError> {
    const OPEN: &str = "```json";
    let open = raw
        .rfind(OPEN)
        .ok_or_else(|| ParseError::Malformed("no ```json block".into()))?;
    let body_start = open + OPEN.len();
    let close = raw[body_start..]
        .find("```")
        .ok_or_else(|| ParseError::Malformed("unterminated ```json block".into()))?;
    let narrative = raw[..open].trim();
    if narrative.is_empty() {
        return Err(ParseError::Malformed("empty narrative".into()));
    }
    Ok((narrative, &raw[body_start..body_start + close]))
}

/// Parses a raw provider reply and enforces every response invariant,
/// including that each claimed recast phrase really occurs in the narrative.
pub fn parse_gm_response(raw: &str, contract: &ResponseContract<'_>) -> Result<GmResponse, ParseError> {
    let (narrative, block) = split_reply(raw)?;
    let reply: RawReply = serde_json::from_str(block).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let violation = |v| Err(ParseError::ContractViolation(v));
    let config = contract.config;
    let turn = contract.turn;

    let speaking_npc = NpcId::new(reply.speaking_npc);
    if config.npc(&speaking_npc).is_none() {
        return violation(Violation::UnknownNpc { id: speaking_npc.to_string() });
    }
    let mut party_delta = Vec::new();
    for id in reply.party_delta {
        let id = NpcId::new(id);
        if config.npc(&id).is_none() {
            return violation(Violation::UnknownPartyMember { id: id.to_string() });
        }
        if !party_delta.contains(&id) {
            party_delta.push(id);
        }
    }

    let phase = config.phase_for_turn(turn);
    if phase.turns.last == turn {
        if reply.next_state != phase.checkpoint {
            return violation(Violation::CheckpointRequired {
                expected: phase.checkpoint.clone(),
                got: reply.next_state,
            });
        }
    } else if !phase.allows(&reply.next_state) {
        return violation(Violation::IllegalNextState { state: reply.next_state, phase: phase.number });
    }

    let scene = if reply.scene == "auto" {
        match resolve_scene(&reply.next_state, config) {
            Ok(asset) => asset.id.clone(),
            Err(_) => return violation(Violation::UnknownScene { id: reply.scene }),
        }
    } else {
        let id = SceneId::new(reply.scene);
        if config.scene(&id).is_none() {
            return violation(Violation::UnknownScene { id: id.to_string() });
        }
        id
    };

    let present = contract
        .matcher
        .detect(narrative)
        .into_iter()
        .filter(|d| d.occurrences > 0)
        .map(|d| d.phrase_id)
        .collect::<BTreeSet<_>>();
    let mut recast_phrases = Vec::new();
    for id in reply.recast_phrases {
        let id = PhraseId::new(id);
        if !contract.practice.contains(&id) {
            return violation(Violation::RecastOutsidePractice { id: id.to_string() });
        }
        if !present.contains(&id) {
            return violation(Violation::RecastNotPresent { id: id.to_string() });
        }
        if !recast_phrases.contains(&id) {
            recast_phrases.push(id);
        }
    }

    let final_turn = turn == TOTAL_TURNS;
    let master_assessment = reply.master_assessment.filter(|s| !s.trim().is_empty());
    match (final_turn, &master_assessment) {
        (true, None) => return violation(Violation::MissingMasterAssessment),
        (false, Some(_)) => return violation(Violation::UnexpectedMasterAssessment),
        _ => {}
    }

    Ok(GmResponse {
        narrative: narrative.to_owned(),
        next_state: reply.next_state,
        speaking_npc,
        scene,
        recast_phrases,
        checkpoint_delta: reply.checkpoint_delta.clamp(0, 3) as u8,
        party_delta,
        master_assessment,
    })
}

/// Target phrases whose variants occur in a game-master narrative.
pub fn recast_coverage(narrative: &str, practice: &PracticeSet, inventory: &PhraseInventory) -> BTreeSet<PhraseId> {
    PhraseMatcher::for_practice(practice, inventory)
        .detect(narrative)
        .into_iter()
        .filter(|d| d.occurrences > 0)
        .map(|d| d.phrase_id)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

/// One request to a narrative provider.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProviderCall {
    pub session_id: String,
    pub turn_index: u8,
    /// 1-based attempt number within the turn.
    pub attempt: u32,
    pub system: String,
    pub prompt: String,
    pub repair_hint: Option<String>,
}

impl ProviderCall {
    /// Prompt with the repair hint, if any, appended.
    pub fn full_prompt(&self) -> String {
        match &self.repair_hint {
            Some(hint) => format!("{}\nREPAIR\n{hint}\n", self.prompt),
            None => self.prompt.clone(),
        }
    }
}

pub trait NarrativeProvider: Send + Sync {
    fn complete(&self, call: &ProviderCall) -> Result<String, TransportError>;
}

impl<P: NarrativeProvider + ?Sized> NarrativeProvider for std::sync::Arc<P> {
    fn complete(&self, call: &ProviderCall) -> Result<String, TransportError> {
        (**self).complete(call)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailedAttempt {
    pub attempt: u32,
    pub raw: String,
    pub error: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("provider failed to produce a valid reply after {} attempts", attempts.len())]
    ProviderFailure { attempts: Vec<FailedAttempt> },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("max_attempts must be at least 1")]
    InvalidBudget,
}

/// Asks `provider` until a reply passes [`parse_gm_response`], at most
/// `max_attempts` times. Each retry carries the previous rejection as a hint.
pub fn request_with_retry(
    provider: &dyn NarrativeProvider,
    request: &GmRequest,
    contract: &ResponseContract<'_>,
    max_attempts: u32,
) -> Result<GmResponse, OrchestratorError> {
    if max_attempts == 0 {
        return Err(OrchestratorError::InvalidBudget);
    }
    let prompt = request.render();
    let mut failures = Vec::new();
    let mut hint = None;
    for attempt in 1..=max_attempts {
        let call = ProviderCall {
            session_id: request.session_id.clone(),
            turn_index: request.turn_index,
            attempt,
            system: GM_SYSTEM_PROMPT.to_owned(),
            prompt: prompt.clone(),
            repair_hint: hint.take(),
        };
        let raw = provider.complete(&call)?;
        match parse_gm_response(&raw, contract) {
            Ok(response) => return Ok(response),
            Err(err) => {
                log::warn!(
                    "session {} turn {} attempt {attempt} rejected: {err}",
                    request.session_id,
                    request.turn_index
                );
                hint = Some(err.repair_hint());
                failures.push(FailedAttempt { attempt, raw, error: err.to_string() });
            }
        }
    }
    Err(OrchestratorError::ProviderFailure { attempts: failures })
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("could not read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed fixture: {0}")]
    Parse(String),
    #[error("duplicate fixture entry for session {session:?} turn {turn} attempt {attempt}")]
    Duplicate { session: Option<String>, turn: u8, attempt: u32 },
}

#[derive(Debug, Deserialize)]
struct FixtureDoc {
    #[serde(default)]
    reply: Vec<FixtureEntry>,
}

#[derive(Debug, Deserialize)]
struct FixtureEntry {
    /// Omitted: applies to any session without a more specific entry.
    session: Option<String>,
    turn: u8,
    #[serde(default = "first_attempt")]
    attempt: u32,
    text: String,
}

fn first_attempt() -> u32 {
    1
}

type FixtureKey = (Option<String>, u8, u32);

/// Deterministic provider backed by a lookup table keyed by
/// `(session, turn, attempt)`. Missing keys are transport errors.
#[derive(Clone, Debug, Default)]
pub struct ScriptedProvider {
    replies: HashMap<FixtureKey, String>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_reply(mut self, session: Option<&str>, turn: u8, attempt: u32, text: impl Into<String>) -> Self {
        self.replies.insert((session.map(str::to_owned), turn, attempt), text.into());
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FixtureError> {
        let doc: FixtureDoc = toml::from_str(text).map_err(|e| FixtureError::Parse(e.to_string()))?;
        let mut replies = HashMap::new();
        for entry in doc.reply {
            let key = (entry.session, entry.turn, entry.attempt);
            if replies.contains_key(&key) {
                let (session, turn, attempt) = key;
                return Err(FixtureError::Duplicate { session, turn, attempt });
            }
            replies.insert(key, entry.text);
        }
        Ok(Self { replies })
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl NarrativeProvider for ScriptedProvider {
    fn complete(&self, call: &ProviderCall) -> Result<String, TransportError> {
        let specific = (Some(call.session_id.clone()), call.turn_index, call.attempt);
        let wildcard = (None, call.turn_index, call.attempt);
        self.replies
            .get(&specific)
            .or_else(|| self.replies.get(&wildcard))
            .cloned()
            .ok_or_else(|| {
                TransportError(format!(
                    "no scripted reply for session {} turn {} attempt {}",
                    call.session_id, call.turn_index, call.attempt
                ))
            })
    }
}
