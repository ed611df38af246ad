mod common;

use proptest::prelude::RngExt;
use rap_core::template::KEY_EXEMPLARS;
use rap_core::{parse_key_line, KeyKind, RetrievalKey};

/// Key lines of the shipped retrieval-key exemplars, as they appear after
/// each `think:` line.
const LINES: [(&str, KeyKind, &str); 14] = [
    ("> search: spraybottle", KeyKind::ObservationSearch, "spraybottle"),
    ("> search: creditcard", KeyKind::ObservationSearch, "creditcard"),
    ("> search: desklamp", KeyKind::ObservationSearch, "desklamp"),
    ("> action: take", KeyKind::ActionMatch, "take"),
    ("> action: take", KeyKind::ActionMatch, "take"),
    ("> action: take", KeyKind::ActionMatch, "take"),
    ("> action: put", KeyKind::ActionMatch, "put"),
    ("> action: put", KeyKind::ActionMatch, "put"),
    ("> action: heat", KeyKind::ActionMatch, "heat"),
    ("> action: heat", KeyKind::ActionMatch, "heat"),
    ("> action: cool", KeyKind::ActionMatch, "cool"),
    ("> action: cool", KeyKind::ActionMatch, "cool"),
    ("> action: use", KeyKind::ActionMatch, "use"),
    ("> action: use", KeyKind::ActionMatch, "use"),
];

#[test]
fn exemplar_lines_parse() {
    for (line, kind, payload) in LINES {
        let key = parse_key_line(line).unwrap();
        assert_eq!(key.kind(), kind, "{line}");
        assert_eq!(key.text(), Some(payload), "{line}");
    }
}

#[test]
fn built_in_exemplars_are_the_corpus() {
    assert_eq!(KEY_EXEMPLARS.len(), LINES.len());
    for ((_, key), (line, _, _)) in KEY_EXEMPLARS.iter().zip(LINES) {
        assert_eq!(format!("> {key}"), line);
    }
}

#[test]
fn lenient_forms() {
    assert_eq!(parse_key_line("ACTION: Put ").unwrap(), RetrievalKey::ActionMatch("put".into()));
    assert_eq!(parse_key_line("  Search:Watch").unwrap(), RetrievalKey::ObservationSearch("watch".into()));
    for bad in ["search:", "find: mug", "search mug", "", ">"] {
        assert!(parse_key_line(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn format_then_parse_is_identity() {
    let mut rng = common::rng();
    let alphabet: Vec<char> = ('a'..='z').chain('0'..='9').collect();
    for _ in 0..1_000 {
        let words = rng.random_range(1..=3usize);
        let payload = (0..words)
            .map(|_| (0..rng.random_range(1..=8usize)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect::<String>())
            .collect::<Vec<_>>()
            .join(" ");
        let key = if rng.random_bool(0.5) {
            RetrievalKey::ObservationSearch(payload)
        } else {
            RetrievalKey::ActionMatch(payload)
        };
        assert_eq!(parse_key_line(&key.format()).unwrap(), key);
        assert_eq!(parse_key_line(&format!("> {}", key.format())).unwrap(), key);
    }
}
