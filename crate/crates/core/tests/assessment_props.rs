use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use slangquest_core::assessment::{
    ErrorCategory, Graded, Grader, Issue, PhraseVerdict, PosttestResponse, Stage, TaskKind, TranscriptReview,
};
use slangquest_core::config::TargetPhrase;
use slangquest_core::events::MemorySink;
use slangquest_core::gm::ScriptedProvider;
use slangquest_core::runtime::{LearnerInput, Services, SessionRuntime};
use slangquest_core::{GameConfig, HeroId, Mode, PhraseId};

const CONFIG: &str = include_str!("../../../fixtures/config.toml");
const GM_SCRIPT: &str = include_str!("../../../fixtures/gm_script.toml");
const PRACTICE: [&str; 5] = ["wing-it", "shake-off", "hit-the-sack", "spill-the-beans", "break-the-ice"];
const CATEGORIES: [ErrorCategory; 3] = [ErrorCategory::Grammar, ErrorCategory::WordChoice, ErrorCategory::PhraseMisuse];

/// Grader that scores from a fixed table and reviews transcripts with
/// invented issues and usage claims that contradict what was said.
struct Adversary {
    scores: HashMap<(PhraseId, TaskKind), f64>,
    issues_per_turn: Vec<u8>,
}

impl Grader for Adversary {
    fn grade(&self, task: TaskKind, phrase: &TargetPhrase, _text: &str) -> Result<Graded, String> {
        Ok(Graded { score: self.scores[&(phrase.id.clone(), task)], rationale: "table".into() })
    }

    fn review(&self, transcript: &str, practice: &[&TargetPhrase]) -> Result<TranscriptReview, String> {
        let n = self.issues_per_turn[transcript.len() % self.issues_per_turn.len()];
        let issues = (0..n)
            .map(|i| Issue {
                category: CATEGORIES[(i as usize + transcript.len()) % 3],
                correction: "fixed".into(),
                explanation: "because".into(),
            })
            .collect();
        let verdicts = practice
            .iter()
            .map(|p| PhraseVerdict {
                phrase_id: p.id.clone(),
                claimed_used: !transcript.contains(p.canonical.as_str()),
                correct: transcript.len().is_multiple_of(2),
                appropriate: true,
                revision: None,
            })
            .collect();
        Ok(TranscriptReview { issues, verdicts })
    }
}

const LINES: [&str; 6] = [
    "I need to wing it",
    "we shake it off",
    "time to hit the sack, hit the sack",
    "nothing to say",
    "she spilled the beans",
    "hello there",
];

fn score() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.0, 0.5, 1.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn totals_and_report_agree_with_tracker(
        defs in prop::collection::vec(score(), 5),
        sents in prop::collection::vec(score(), 5),
        turns in prop::collection::vec(0usize..LINES.len(), 12),
        issues_per_turn in prop::collection::vec(0u8..4, 1..6),
    ) {
        let config = Arc::new(GameConfig::from_toml_str(CONFIG).unwrap());
        let ids: Vec<PhraseId> = PRACTICE.map(PhraseId::new).to_vec();
        let mut scores = HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            scores.insert((id.clone(), TaskKind::Definition), defs[i]);
            scores.insert((id.clone(), TaskKind::Sentence), sents[i]);
        }
        let mut services = Services::offline(config.clone(), Arc::new(ScriptedProvider::from_toml_str(GM_SCRIPT).unwrap()));
        services.grader = Arc::new(Adversary { scores, issues_per_turn });
        let mut rt = SessionRuntime::create(
            Arc::new(services),
            Box::new(MemorySink::default()),
            "a",
            "p",
            Mode::Rpg,
            ids.clone(),
            Some(HeroId::new("scholar")),
        )
        .unwrap();
        for &t in &turns {
            rt.submit_turn(LearnerInput::Text(LINES[t].into())).unwrap();
        }

        let report = rt.feedback().unwrap();
        prop_assert_eq!(report.general.grammar, report.specific_count(ErrorCategory::Grammar));
        prop_assert_eq!(report.general.word_choice, report.specific_count(ErrorCategory::WordChoice));
        prop_assert_eq!(report.general.phrase_misuse, report.specific_count(ErrorCategory::PhraseMisuse));
        prop_assert_eq!(report.general.total() as usize, report.specific.len());
        prop_assert_eq!(report.formative.len(), 5);
        for entry in &report.formative {
            let usage = rt.state().usage_of(&entry.phrase_id).unwrap();
            prop_assert_eq!(entry.count, usage.count);
            prop_assert_eq!(entry.used, usage.count > 0);
            if !entry.used {
                prop_assert!(entry.example.is_some());
            }
        }

        let responses: Vec<PosttestResponse> = ids
            .iter()
            .map(|id| PosttestResponse { phrase_id: id.clone(), definition: "a meaning".into(), sentence: "a sentence".into() })
            .collect();
        let post = rt.submit_posttest(&responses).unwrap();
        let def_oracle: f64 = defs.iter().sum();
        let sent_oracle: f64 = sents.iter().sum();
        prop_assert_eq!(post.definition.total, def_oracle);
        prop_assert_eq!(post.sentence.total, sent_oracle);
        for total in [post.definition.total, post.sentence.total] {
            prop_assert!((0.0..=5.0).contains(&total));
            prop_assert_eq!((total * 2.0).fract(), 0.0);
        }
        prop_assert_eq!(post.definition.stage, Stage::Post);
    }
}

struct OffRubric;

impl Grader for OffRubric {
    fn grade(&self, _: TaskKind, _: &TargetPhrase, _: &str) -> Result<Graded, String> {
        Ok(Graded { score: 0.7, rationale: "off".into() })
    }

    fn review(&self, _: &str, _: &[&TargetPhrase]) -> Result<TranscriptReview, String> {
        Ok(TranscriptReview::default())
    }
}

#[test]
fn off_rubric_scores_are_rejected() {
    let config = GameConfig::from_toml_str(CONFIG).unwrap();
    let phrase = config.phrases.get(&PhraseId::new("wing-it")).unwrap();
    assert!(slangquest_core::assessment::grade(TaskKind::Definition, phrase, "x", &OffRubric).is_err());
}
