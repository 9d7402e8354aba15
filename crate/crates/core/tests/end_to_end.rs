use std::sync::Arc;

use slangquest_core::events::{self, MemorySink};
use slangquest_core::gm::ScriptedProvider;
use slangquest_core::runtime::Services;
use slangquest_core::session::{EndingLabel, Status};
use slangquest_core::simulate::{run_script, LearnerScript};
use slangquest_core::{GameConfig, Mode};

const CONFIG: &str = include_str!("../../../fixtures/config.toml");
const GM_SCRIPT: &str = include_str!("../../../fixtures/gm_script.toml");
const LEARNER: &str = include_str!("../../../fixtures/learner_script.toml");

fn services() -> Arc<Services> {
    let config = Arc::new(GameConfig::from_toml_str(CONFIG).unwrap());
    let provider = Arc::new(ScriptedProvider::from_toml_str(GM_SCRIPT).unwrap());
    Arc::new(Services::offline(config, provider))
}

#[test]
fn scripted_rpg_session_runs_to_a_triumphant_ending_and_replays() {
    let services = services();
    let script = LearnerScript::from_toml_str(LEARNER).unwrap();
    let sink = MemorySink::default();
    let rt = run_script(services.clone(), Box::new(sink.clone()), "sim-rpg", Mode::Rpg, &script).unwrap();

    let state = rt.state();
    assert_eq!(state.status, Status::Finished);
    assert_eq!(state.turn_index, 12);
    assert_eq!(state.location.as_deref(), Some("inner-sanctum"));
    let outcome = state.outcome.as_ref().unwrap();
    assert_eq!(outcome.checkpoint_total, 26);
    assert_eq!(outcome.ending_label, EndingLabel::Triumphant);
    assert!(rt.survey().is_some());

    // The learner used wing it once, shake off twice, break the ice once,
    // spill the beans once and hit the sack once.
    let counts: Vec<u32> = state.usage.iter().map(|u| u.count).collect();
    assert_eq!(counts, vec![1, 2, 1, 1, 1]);

    let log = sink.events();
    let replayed = events::replay(&log, &services.config).unwrap();
    assert_eq!(&replayed.state, state);
    assert_eq!(replayed.records, rt.records());
    assert_eq!(replayed.survey.as_ref(), rt.survey());
    assert!(replayed.assessment_record().is_some());
}

#[test]
fn scripted_classroom_session_finishes_without_an_outcome() {
    let services = services();
    let script = LearnerScript::from_toml_str(LEARNER).unwrap();
    let sink = MemorySink::default();
    let rt = run_script(services.clone(), Box::new(sink.clone()), "sim-class", Mode::Classroom, &script).unwrap();
    assert_eq!(rt.state().status, Status::Finished);
    assert!(rt.state().outcome.is_none());
    assert!(rt.state().hero_id.is_none());
    let replayed = events::replay(&sink.events(), &services.config).unwrap();
    assert_eq!(&replayed.state, rt.state());
}
