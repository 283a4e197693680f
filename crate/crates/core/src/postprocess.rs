//! Response shaping: dictionary word-match override and sentence templating.

use serde::{Deserialize, Serialize};

use crate::corpus::{Case, DiseaseDictionary};
use crate::error::{Error, Result};
use crate::eval::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Contiguous token subsequence of the tokenized query.
    #[default]
    Token,
    /// Plain substring of the lowercased query.
    Substring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub sentence_structure: bool,
    pub word_matching: bool,
    pub match_mode: MatchMode,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self::both()
    }
}

impl PostprocessConfig {
    pub fn new(sentence_structure: bool, word_matching: bool) -> Self {
        Self {
            sentence_structure,
            word_matching,
            match_mode: MatchMode::Token,
        }
    }

    pub fn both() -> Self {
        Self::new(true, true)
    }

    pub fn none() -> Self {
        Self::new(false, false)
    }
}

fn token_position(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Dictionary entry found in the query, or `current_label` if none is.
/// Longer entries win, then earlier occurrences, then lexicographic order.
/// Negations in the query are not detected.
pub fn word_match_override_with(
    query_text: &str,
    dictionary: &DiseaseDictionary,
    current_label: &str,
    mode: MatchMode,
) -> String {
    let query_tokens = tokenize(query_text);
    let query_lower = query_text.to_lowercase();
    let mut best: Option<(usize, usize, &str)> = None;
    for (name, tokens) in dictionary.entries() {
        let pos = match mode {
            MatchMode::Token => token_position(&query_tokens, tokens),
            MatchMode::Substring => query_lower.find(name),
        };
        let Some(pos) = pos else { continue };
        let better = match best {
            None => true,
            Some((len, p, n)) => {
                (
                    tokens.len(),
                    std::cmp::Reverse(pos),
                    std::cmp::Reverse(name),
                ) > (len, std::cmp::Reverse(p), std::cmp::Reverse(n))
            }
        };
        if better {
            best = Some((tokens.len(), pos, name));
        }
    }
    match best {
        Some((_, _, name)) => name.to_owned(),
        None => current_label.to_owned(),
    }
}

pub fn word_match_override(
    query_text: &str,
    dictionary: &DiseaseDictionary,
    current_label: &str,
) -> String {
    word_match_override_with(query_text, dictionary, current_label, MatchMode::Token)
}

/// `It is <label>.` with exactly one closing period.
pub fn format_sentence(label: &str) -> Result<String> {
    let trimmed = label
        .trim()
        .trim_end_matches(|c: char| c == '.' || c.is_whitespace());
    if trimmed.is_empty() {
        return Err(Error::InvalidInput("cannot template an empty label".into()));
    }
    Ok(format!("It is {trimmed}."))
}

/// Word match first, then sentence wrap.
pub fn postprocess(
    prediction: &str,
    case: &Case,
    dictionary: &DiseaseDictionary,
    cfg: &PostprocessConfig,
) -> Result<String> {
    if prediction.trim().is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty prediction for case `{}`",
            case.encounter_id
        )));
    }
    let label = if cfg.word_matching {
        word_match_override_with(&case.query_text, dictionary, prediction, cfg.match_mode)
    } else {
        prediction.to_owned()
    };
    if cfg.sentence_structure {
        format_sentence(&label)
    } else {
        Ok(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dict(names: &[&str]) -> DiseaseDictionary {
        DiseaseDictionary::from_names(names.iter().copied())
    }

    fn case(query: &str) -> Case {
        Case {
            encounter_id: "E1".into(),
            image_ids: vec!["a.jpg".into()],
            query_text: query.into(),
            language: "en".into(),
            responses: Vec::new(),
            gold_label: None,
        }
    }

    #[test]
    fn override_examples() {
        let d = dict(&["tinea", "eczema", "psoriasis"]);
        assert_eq!(
            word_match_override("small red spots on the palm", &d, "acne"),
            "acne"
        );
        assert_eq!(
            word_match_override("is this tinea or something else", &d, "acne"),
            "tinea"
        );
        assert_eq!(
            word_match_override("definitely not eczema?", &d, "acne"),
            "eczema"
        );
        assert_eq!(word_match_override("", &d, "acne"), "acne");
    }

    #[test]
    fn longest_then_earliest_then_lexicographic() {
        let d = dict(&["tinea", "tinea capitis", "eczema", "acne"]);
        assert_eq!(
            word_match_override("tinea capitis or tinea?", &d, "x"),
            "tinea capitis"
        );
        assert_eq!(word_match_override("eczema, maybe acne", &d, "x"), "eczema");
        assert_eq!(word_match_override("acne, maybe eczema", &d, "x"), "acne");
        let d = dict(&["b", "a"]);
        assert_eq!(word_match_override("a b", &d, "x"), "a");
    }

    #[test]
    fn token_mode_ignores_partial_words() {
        let d = dict(&["eczema"]);
        assert_eq!(word_match_override("neurodermatitis-eczemas", &d, "x"), "x");
        assert_eq!(
            word_match_override_with("eczemas", &d, "x", MatchMode::Substring),
            "eczema"
        );
    }

    #[test]
    fn sentence_template() {
        assert_eq!(
            format_sentence("hand eczema").unwrap(),
            "It is hand eczema."
        );
        assert_eq!(format_sentence("psoriasis.").unwrap(), "It is psoriasis.");
        assert_eq!(
            format_sentence("  Lichen Planus ").unwrap(),
            "It is Lichen Planus."
        );
        assert!(format_sentence("").is_err());
        assert!(format_sentence(" . ").is_err());
    }

    #[test]
    fn postprocess_examples() {
        let d = dict(&["tinea", "psoriasis"]);
        let c = case("I think it might be tinea");
        assert_eq!(
            postprocess("psoriasis", &c, &d, &PostprocessConfig::both()).unwrap(),
            "It is tinea."
        );
        assert_eq!(
            postprocess("psoriasis", &c, &d, &PostprocessConfig::none()).unwrap(),
            "psoriasis"
        );
        let plain = case("itchy patches");
        assert_eq!(
            postprocess(
                "psoriasis",
                &plain,
                &d,
                &PostprocessConfig::new(false, true)
            )
            .unwrap(),
            "psoriasis"
        );
        assert!(postprocess(" ", &plain, &d, &PostprocessConfig::none()).is_err());
    }

    #[test]
    fn multi_picture_answers_pass_through() {
        let d = dict(&["lipoma"]);
        let label = "picture 1: lipoma. picture 2: palmar erythema";
        let out = postprocess(
            label,
            &case("bumps"),
            &d,
            &PostprocessConfig::new(false, true),
        )
        .unwrap();
        assert_eq!(out, label);
    }

    proptest! {
        #[test]
        fn identity_when_both_off(label in "[a-z][a-z .]{0,20}", query in "[a-z ]{0,30}") {
            let d = dict(&["tinea", "acne"]);
            prop_assert_eq!(postprocess(&label, &case(&query), &d, &PostprocessConfig::none()).unwrap(), label);
        }

        #[test]
        fn sentence_shape(label in "[A-Za-z][A-Za-z .]{0,20}") {
            let s = format_sentence(&label).unwrap();
            prop_assert!(s.starts_with("It is "));
            prop_assert!(s.ends_with('.'));
            prop_assert!(!s.ends_with(".."));
        }

        #[test]
        fn override_stays_in_dictionary_or_label(
            words in proptest::collection::vec(prop_oneof!["tinea", "acne", "eczema", "red", "spots", "not"], 0..8),
            label in "[a-z]{1,8}",
        ) {
            let d = dict(&["tinea", "acne", "contact eczema"]);
            let out = word_match_override(&words.join(" "), &d, &label);
            prop_assert!(out == label || d.contains(&out));
        }

        #[test]
        fn query_match_beats_prediction(label in "[a-z]{1,8}", prefix in "[a-z ]{0,10}") {
            let d = dict(&["tinea"]);
            let q = format!("{prefix} tinea");
            prop_assert_eq!(word_match_override(&q, &d, &label), "tinea");
        }
    }
}
