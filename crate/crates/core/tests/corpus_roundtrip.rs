use dermqa_core::corpus::{
    apply_weights, build_disease_dictionary, load_dataset, write_dataset, Split, WeightConfig,
};
use dermqa_core::synthetic::random_cases;

#[test]
fn train_sized_corpus_round_trips_field_by_field() {
    let cases = random_cases(842, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    write_dataset(&path, &cases).unwrap();
    let loaded = load_dataset(&path, Split::Train).unwrap();
    assert_eq!(loaded.len(), 842);
    for (a, b) in cases.iter().zip(&loaded) {
        assert_eq!(a.encounter_id, b.encounter_id);
        assert_eq!(a.image_ids, b.image_ids);
        assert_eq!(a.query_text, b.query_text);
        assert_eq!(a.language, b.language);
        assert_eq!(a.gold_label, b.gold_label);
        assert_eq!(a.responses.len(), b.responses.len());
        for (ra, rb) in a.responses.iter().zip(&b.responses) {
            assert_eq!(
                (&ra.text, ra.author_rank, ra.validation_level),
                (&rb.text, rb.author_rank, rb.validation_level)
            );
        }
    }
}

#[test]
fn weights_and_dictionary_on_loaded_corpus() {
    let mut cases = random_cases(200, 5);
    apply_weights(&mut cases, &WeightConfig::default()).unwrap();
    assert!(cases
        .iter()
        .flat_map(|c| &c.responses)
        .all(|r| (0.0..=1.0).contains(&r.weight)));
    let a = build_disease_dictionary(&cases).unwrap();
    let b = build_disease_dictionary(&cases).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 3 && !a.is_empty());
}

#[test]
fn malformed_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut text = String::new();
    for (i, c) in random_cases(3, 1).iter().enumerate() {
        let mut v = serde_json::to_value(c).unwrap();
        if i == 1 {
            v["image_ids"] = serde_json::json!([]);
        }
        text.push_str(&v.to_string());
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    let err = load_dataset(&path, Split::Train).unwrap_err();
    assert!(
        matches!(err, dermqa_core::Error::Parse { line: 2, .. }),
        "{err}"
    );
}
