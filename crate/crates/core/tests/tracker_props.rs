use proptest::prelude::*;
use slangquest_core::config::{PracticeSet, TargetPhrase};
use slangquest_core::tracker::{self, apply_detections, initial_usage, normalize, Color, PhraseMatcher, Span};
use slangquest_core::{GameConfig, PhraseId};

const CONFIG: &str = include_str!("../../../fixtures/config.toml");
const ALPHABET: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

fn phrase(id: &str, variants: Vec<String>) -> TargetPhrase {
    TargetPhrase {
        id: PhraseId::new(id),
        canonical: variants[0].clone(),
        meaning: String::new(),
        example: String::new(),
        variants,
        keywords: Vec::new(),
    }
}

/// Tries every token window at every position; takes the longest matching
/// variant at the leftmost position, then resumes after it.
fn oracle(tokens: &[String], variants: &[Vec<String>]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut best = 0;
        for end in i + 1..=tokens.len() {
            let window = &tokens[i..end];
            if variants.iter().any(|v| v.as_slice() == window) {
                best = best.max(end - i);
            }
        }
        if best > 0 {
            spans.push(Span { start: i, end: i + best });
            i += best;
        } else {
            i += 1;
        }
    }
    spans
}

fn words(alpha: usize, max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..alpha).prop_map(|i| ALPHABET[i].to_owned()), 1..=max_len)
}

fn instance() -> impl Strategy<Value = (Vec<String>, Vec<Vec<Vec<String>>>)> {
    (1usize..=8).prop_flat_map(|alpha| {
        (
            prop::collection::vec((0..alpha).prop_map(|i| ALPHABET[i].to_owned()), 0..=30),
            prop::collection::vec(prop::collection::vec(words(alpha, 3), 1..=3), 1..=3),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn detect_matches_window_scan_oracle((tokens, phrases) in instance()) {
        let targets: Vec<TargetPhrase> = phrases
            .iter()
            .enumerate()
            .map(|(k, vs)| phrase(&format!("p{k}"), vs.iter().map(|v| v.join(" ")).collect()))
            .collect();
        let matcher = PhraseMatcher::new(&targets);
        let results = matcher.detect(&tokens.join(" "));
        prop_assert_eq!(results.len(), targets.len());
        for (result, variants) in results.iter().zip(&phrases) {
            let expected = oracle(&tokens, variants);
            prop_assert_eq!(result.occurrences as usize, expected.len());
            prop_assert_eq!(&result.spans, &expected);
        }
        // Pure: a second call sees the same input the same way.
        prop_assert_eq!(matcher.detect(&tokens.join(" ")), results);
    }
}

#[test]
fn named_detection_examples() {
    let config = GameConfig::from_toml_str(CONFIG).unwrap();
    let wing = PhraseId::new("wing-it");
    let practice = PracticeSet::new(
        ["wing-it", "shake-off", "hit-the-sack", "spill-the-beans", "break-the-ice"].map(PhraseId::new).to_vec(),
        &config.phrases,
    )
    .unwrap();
    let count = |text: &str| {
        tracker::detect(text, &practice, &config.phrases)
            .into_iter()
            .find(|d| d.phrase_id == wing)
            .unwrap()
            .occurrences
    };
    assert_eq!(count("I think there's no time and I need to wing it"), 1);
    assert_eq!(count("wing it wing it"), 2);
    assert_eq!(count("winner"), 0);

    let two = oracle(&normalize("wing it wing it"), &[normalize("wing it")]);
    assert_eq!(two.len(), 2);

    assert_eq!(normalize("Wing it!"), ["wing", "it"]);
    assert!(normalize("").is_empty());
    assert_eq!(normalize("I'll  SHAKE   off... stress."), ["i'll", "shake", "off", "stress"]);
}

#[test]
fn color_is_a_function_of_count() {
    for count in 0..=10 {
        let expected = match count {
            0 => Color::Neutral,
            1 => Color::Red,
            _ => Color::Green,
        };
        assert_eq!(Color::for_count(count), expected, "count {count}");
    }
}

fn rank(c: Color) -> u8 {
    match c {
        Color::Neutral => 0,
        Color::Red => 1,
        Color::Green => 2,
    }
}

const PIECES: [&str; 8] = [
    "wing it",
    "shaking off",
    "hit the sack",
    "spilled the beans",
    "broke the ice",
    "and then",
    "we walked",
    "winging",
];

proptest! {
    #[test]
    fn practice_box_is_monotone(stream in prop::collection::vec(prop::collection::vec(0usize..PIECES.len(), 0..6), 1..12)) {
        let config = GameConfig::from_toml_str(CONFIG).unwrap();
        let practice = PracticeSet::new(
            ["wing-it", "shake-off", "hit-the-sack", "spill-the-beans", "break-the-ice"].map(PhraseId::new).to_vec(),
            &config.phrases,
        )
        .unwrap();
        let mut states = initial_usage(&practice);
        for pieces in stream {
            let text = pieces.iter().map(|&i| PIECES[i]).collect::<Vec<_>>().join(" ");
            let detections = tracker::detect(&text, &practice, &config.phrases);
            let next = apply_detections(&states, &detections).unwrap();
            for ((before, after), det) in states.iter().zip(&next).zip(&detections) {
                prop_assert_eq!(&before.phrase_id, &after.phrase_id);
                prop_assert_eq!(after.count, before.count + det.occurrences);
                prop_assert_eq!(after.color, Color::for_count(after.count));
                prop_assert!(rank(after.color) >= rank(before.color));
                if before.color == Color::Neutral && after.color == Color::Green {
                    prop_assert!(det.occurrences >= 2);
                }
            }
            states = next;
        }
    }
}
