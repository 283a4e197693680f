mod common;

use dermqa_core::eval::{delta_bleu, EvalConfig, WeightedReference, WeightedReferenceSet};

fn unit_refs(refs: &[Vec<String>]) -> Vec<WeightedReferenceSet> {
    refs.iter()
        .map(|r| {
            WeightedReferenceSet::new(vec![WeightedReference {
                tokens: r.clone(),
                weight: 1.0,
            }])
        })
        .collect()
}

#[test]
fn unit_weights_match_brute_force_bleu() {
    let mut rng = common::rng(42);
    let mut nonzero = 0;
    for _ in 0..200 {
        let (hyps, refs) = common::random_corpus(&mut rng);
        let report = delta_bleu(&hyps, &unit_refs(&refs), &EvalConfig::default()).unwrap();
        let oracle = common::brute_force_bleu4(&hyps, &refs);
        assert!(
            (report.dbleu - oracle).abs() <= 1e-9,
            "{} vs {oracle}",
            report.dbleu
        );
        if oracle > 0.0 {
            nonzero += 1;
        }
    }
    assert!(nonzero > 20, "too few informative corpora: {nonzero}");
}

#[test]
fn hand_counted_toy_corpus() {
    let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let hyps = vec![
        t("it is hand eczema ."),
        t("it is tinea ."),
        t("it is psoriasis"),
        t("it is hand eczema"),
        t("it is acne ."),
    ];
    let refs = vec![
        t("it is hand eczema ."),
        t("it is tinea capitis ."),
        t("it is psoriasis ."),
        t("it is eczema ."),
        t("it is acne ."),
    ];
    // p1 19/20, p2 12/15, p3 7/10, p4 3/5; hyp_len 20, ref_len 22.
    let expected = 100.0
        * (1.0 - 22.0 / 20.0f64).exp()
        * (19.0 / 20.0 * 12.0 / 15.0 * 7.0 / 10.0 * 3.0 / 5.0f64).powf(0.25);
    let report = delta_bleu(&hyps, &unit_refs(&refs), &EvalConfig::default()).unwrap();
    assert_eq!((report.hyp_len, report.ref_len), (20, 22));
    assert!((report.dbleu - expected).abs() < 1e-9);
    assert!((common::brute_force_bleu4(&hyps, &refs) - expected).abs() < 1e-9);
}
