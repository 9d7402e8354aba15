//! Core of a spoken slang-practice system with two interaction conditions:
//! a three-phase role-playing game driven by a narrative provider (the
//! "game master"), and a turn-scheduled classroom with an AI teacher.
//!
//! The crate is organised the way a session flows:
//!
//! - [`config`]: static game content (phrases, heroes, NPCs, scenes, phases)
//!   loaded from a TOML document and validated eagerly.
//! - [`tracker`]: target-phrase detection on learner transcripts and the
//!   practice-box usage/colour state with its reminder policy.
//! - [`session`]: the RPG and classroom state machines.
//! - [`gm`]: game-master request assembly, structured reply parsing and
//!   validation, and the bounded repair/retry loop over a [`gm::NarrativeProvider`].
//! - [`assessment`]: pre/post tests, the 0 / 0.5 / 1.0 rubric behind a
//!   pluggable [`assessment::Grader`], and the three-level feedback report.
//! - [`analytics`]: normalized growth, usage frequency and Likert aggregates.
//! - [`events`] and [`runtime`]: the append-only session log, replay, and the
//!   atomic turn pipeline (ASR, provider, TTS) used by the HTTP service.
//!
//! Batch work (post-test grading, cohort analytics, replaying many logs) goes
//! through [`batch`], which fans out over rayon when the `parallel` feature is
//! enabled and runs sequentially otherwise.

pub mod analytics;
pub mod assessment;
pub mod batch;
pub mod config;
pub mod events;
pub mod gm;
pub mod ids;
pub mod runtime;
pub mod session;
pub mod simulate;
pub mod speech;
pub mod teacher;
pub mod tracker;

pub use config::GameConfig;
pub use ids::{HeroId, NpcId, PhraseId, SceneId};
pub use session::{Mode, SessionState};
