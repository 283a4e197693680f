//! Case dataset ingestion, reference weighting and the disease-name dictionary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::eval::{tokenize, WeightedReference, WeightedReferenceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceResponse {
    pub text: String,
    /// 0 is the most senior author.
    pub author_rank: u32,
    pub validation_level: u32,
    /// Derived by [`apply_weights`]; never read from or written to disk.
    #[serde(skip)]
    pub weight: f64,
}

impl ReferenceResponse {
    pub fn new(text: impl Into<String>, author_rank: u32, validation_level: u32) -> Self {
        Self {
            text: text.into(),
            author_rank,
            validation_level,
            weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub encounter_id: String,
    pub image_ids: Vec<String>,
    pub query_text: String,
    pub language: String,
    pub responses: Vec<ReferenceResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
}

fn validate_case(case: &Case, split: Split) -> std::result::Result<(), String> {
    if case.encounter_id.trim().is_empty() {
        return Err("encounter_id is empty".into());
    }
    if case.image_ids.is_empty() {
        return Err(format!("case `{}` has no image_ids", case.encounter_id));
    }
    if case.image_ids.iter().any(|id| id.is_empty()) {
        return Err(format!(
            "case `{}` has an empty image id",
            case.encounter_id
        ));
    }
    if split != Split::Test && case.responses.is_empty() {
        return Err(format!("case `{}` has no responses", case.encounter_id));
    }
    if case.responses.iter().any(|r| r.text.trim().is_empty()) {
        return Err(format!(
            "case `{}` has an empty response text",
            case.encounter_id
        ));
    }
    Ok(())
}

/// Parses a line-delimited case file. Blank lines are ignored; any other
/// malformed line aborts the load with its 1-based line number.
pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<Vec<Case>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cases = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let case: Case =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        validate_case(&case, split).map_err(|m| Error::parse(path, lineno, m))?;
        if !seen.insert(case.encounter_id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate encounter_id `{}`", case.encounter_id),
            ));
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn write_dataset(path: impl AsRef<Path>, cases: &[Case]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for case in cases {
        let line = serde_json::to_string(case).expect("case serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    /// Blend between seniority (`alpha`) and response consistency (`1 - alpha`).
    pub alpha: f64,
    /// Optional multiplier per validation level; missing levels use 1.0.
    pub level_factors: BTreeMap<u32, f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            level_factors: BTreeMap::new(),
        }
    }
}

/// `alpha / (1 + rank) + (1 - alpha) * dup_count / max_dup_count`, scaled by the
/// validation-level factor and clamped to `[0, 1]`. Texts are compared after
/// tokenization, so casing and spacing differences do not split duplicates.
pub fn derive_reference_weight(
    response: &ReferenceResponse,
    siblings: &[ReferenceResponse],
    cfg: &WeightConfig,
) -> Result<f64> {
    if siblings.is_empty() {
        return Err(Error::InvalidInput(
            "cannot weight a response without siblings".into(),
        ));
    }
    let keys: Vec<Vec<String>> = siblings.iter().map(|s| tokenize(&s.text)).collect();
    let own = tokenize(&response.text);
    let count = keys.iter().filter(|k| **k == own).count();
    if count == 0 {
        return Err(Error::InvalidInput(
            "response is not among its siblings".into(),
        ));
    }
    let max_count = keys
        .iter()
        .map(|k| keys.iter().filter(|o| *o == k).count())
        .max()
        .unwrap_or(1);

    let seniority = 1.0 / (1.0 + response.author_rank as f64);
    let frequency = count as f64 / max_count as f64;
    let factor = cfg
        .level_factors
        .get(&response.validation_level)
        .copied()
        .unwrap_or(1.0);
    let w = (cfg.alpha * seniority + (1.0 - cfg.alpha) * frequency) * factor;
    Ok(w.clamp(0.0, 1.0))
}

/// Fills in `weight` on every response of every case.
pub fn apply_weights(cases: &mut [Case], cfg: &WeightConfig) -> Result<()> {
    for case in cases {
        let weights = case
            .responses
            .iter()
            .map(|r| derive_reference_weight(r, &case.responses, cfg))
            .collect::<Result<Vec<_>>>()?;
        for (r, w) in case.responses.iter_mut().zip(weights) {
            r.weight = w;
        }
    }
    Ok(())
}

/// Tokenized, weighted references for a case.
pub fn reference_set(case: &Case, cfg: &WeightConfig) -> Result<WeightedReferenceSet> {
    let references = case
        .responses
        .iter()
        .map(|r| {
            Ok(WeightedReference {
                tokens: tokenize(&r.text),
                weight: derive_reference_weight(r, &case.responses, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedReferenceSet::new(references))
}

/// Strips one or more trailing balanced `( ... )` groups.
fn strip_parenthesized_suffix(s: &str) -> &str {
    let mut s = s.trim_end();
    while s.ends_with(')') {
        let mut depth = 0usize;
        let mut open = None;
        for (i, c) in s.char_indices().rev() {
            match c {
                ')' => depth += 1,
                '(' => {
                    depth -= 1;
                    if depth == 0 {
                        open = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match open {
            Some(i) => s = s[..i].trim_end(),
            None => break,
        }
    }
    s
}

/// NFC, lowercase, drop a trailing parenthesized suffix, trim, collapse whitespace.
pub fn normalize_label(label: &str) -> String {
    let nfc: String = label.nfc().collect::<String>().to_lowercase();
    let stripped = strip_parenthesized_suffix(nfc.trim());
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryEntry {
    pub name: String,
    pub tokens: Vec<String>,
}

/// Normalized disease names seen in the training labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiseaseDictionary {
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFile {
    entries: Vec<String>,
}

impl DiseaseDictionary {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = names
            .into_iter()
            .map(|n| normalize_label(n.as_ref()))
            .filter(|n| !n.is_empty())
            .map(|n| {
                let tokens = tokenize(&n);
                (n, tokens)
            })
            .filter(|(_, t)| !t.is_empty())
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Entries in lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = DictionaryFile {
            entries: self.entries.keys().cloned().collect(),
        };
        let json = serde_json::to_string_pretty(&file).expect("dictionary serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DictionaryFile =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Ok(Self::from_names(file.entries))
    }
}

pub fn build_disease_dictionary(cases: &[Case]) -> Result<DiseaseDictionary> {
    let labels: Vec<&str> = cases
        .iter()
        .filter_map(|c| c.gold_label.as_deref())
        .collect();
    if labels.is_empty() {
        return Err(Error::MissingGoldLabels);
    }
    let dict = DiseaseDictionary::from_names(labels);
    if dict.is_empty() {
        return Err(Error::MissingGoldLabels);
    }
    Ok(dict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn case(id: &str) -> Case {
        Case {
            encounter_id: id.into(),
            image_ids: vec![format!("IMG_{id}_1.jpg")],
            query_text: "itchy rash".into(),
            language: "en".into(),
            responses: vec![ReferenceResponse::new("It is eczema.", 0, 1)],
            gold_label: None,
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let lines: Vec<String> = ["a", "b", "c"]
            .iter()
            .map(|id| serde_json::to_string(&case(id)).unwrap())
            .collect();
        let f = write_lines(&lines);
        let cases = load_dataset(f.path(), Split::Train).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[1], case("b"));
    }

    #[test]
    fn rejects_empty_image_ids_with_line_number() {
        let mut bad = case("b");
        bad.image_ids.clear();
        let lines = vec![
            serde_json::to_string(&case("a")).unwrap(),
            serde_json::to_string(&bad).unwrap(),
        ];
        let f = write_lines(&lines);
        match load_dataset(f.path(), Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_missing_fields() {
        let dup = serde_json::to_string(&case("a")).unwrap();
        let f = write_lines(&[dup.clone(), dup]);
        assert!(matches!(
            load_dataset(f.path(), Split::Train),
            Err(Error::Parse { line: 2, .. })
        ));

        let f = write_lines(&[
            r#"{"image_ids":["x"],"query_text":"","language":"en","responses":[]}"#.into(),
        ]);
        assert!(matches!(
            load_dataset(f.path(), Split::Test),
            Err(Error::Parse { line: 1, .. })
        ));

        assert!(matches!(
            load_dataset("/nonexistent/cases.jsonl", Split::Test),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn test_split_allows_missing_responses() {
        let mut c = case("t");
        c.responses.clear();
        let f = write_lines(&[serde_json::to_string(&c).unwrap()]);
        assert_eq!(load_dataset(f.path(), Split::Test).unwrap().len(), 1);
        assert!(load_dataset(f.path(), Split::Validation).is_err());
    }

    #[test]
    fn weight_examples() {
        let cfg = WeightConfig::default();
        let sole = ReferenceResponse::new("eczema", 0, 0);
        assert_eq!(
            derive_reference_weight(&sole, std::slice::from_ref(&sole), &cfg).unwrap(),
            1.0
        );

        let sibs = vec![
            ReferenceResponse::new("It is psoriasis.", 1, 0),
            ReferenceResponse::new("it is  psoriasis .", 1, 0),
            ReferenceResponse::new("Eczema", 0, 0),
        ];
        let w = derive_reference_weight(&sibs[2], &sibs, &cfg).unwrap();
        assert!((w - 0.75).abs() < 1e-15);
        // duplicated pair: 0.5 * 1/2 + 0.5 * 1
        let w = derive_reference_weight(&sibs[0], &sibs, &cfg).unwrap();
        assert!((w - 0.75).abs() < 1e-15);

        let same = vec![ReferenceResponse::new("x", 0, 0); 4];
        for r in &same {
            assert_eq!(derive_reference_weight(r, &same, &cfg).unwrap(), 1.0);
        }
        assert!(derive_reference_weight(&sole, &[], &cfg).is_err());
    }

    #[test]
    fn level_factor_hook() {
        let mut cfg = WeightConfig::default();
        cfg.level_factors.insert(2, 0.5);
        let r = ReferenceResponse::new("x", 0, 2);
        assert_eq!(
            derive_reference_weight(&r, std::slice::from_ref(&r), &cfg).unwrap(),
            0.5
        );
    }

    #[test]
    fn dictionary_normalization() {
        let mut a = case("a");
        a.gold_label = Some("Hand Eczema".into());
        let mut b = case("b");
        b.gold_label = Some("hand   eczema ".into());
        let mut c = case("c");
        c.gold_label = Some("dyshidrotic eczema (pompholyx)".into());
        let dict = build_disease_dictionary(&[a, b, c]).unwrap();
        assert_eq!(dict.len(), 2);
        assert!(dict.contains("hand eczema"));
        assert!(dict.contains("dyshidrotic eczema"));
        assert!(matches!(
            build_disease_dictionary(&[case("x")]),
            Err(Error::MissingGoldLabels)
        ));
        assert!(matches!(
            build_disease_dictionary(&[]),
            Err(Error::MissingGoldLabels)
        ));
    }

    #[test]
    fn parenthesis_stripping() {
        assert_eq!(normalize_label("A (b) (c)"), "a");
        assert_eq!(
            normalize_label("tinea (scalp) capitis"),
            "tinea (scalp) capitis"
        );
        assert_eq!(normalize_label("odd)"), "odd)");
        assert_eq!(normalize_label("Acne\u{a0} Vulgaris"), "acne vulgaris");
    }

    #[test]
    fn dictionary_file_round_trip() {
        let dict = DiseaseDictionary::from_names(["Tinea", "tinea capitis", "eczema"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        dict.save(f.path()).unwrap();
        assert_eq!(DiseaseDictionary::load(f.path()).unwrap(), dict);
    }

    fn arb_responses() -> impl Strategy<Value = Vec<ReferenceResponse>> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["eczema", "psoriasis", "It is acne.", "tinea"]),
                0u32..5,
                0u32..3,
            )
                .prop_map(|(t, r, l)| ReferenceResponse::new(t, r, l)),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn weights_are_permutation_invariant(resp in arb_responses(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let cfg = WeightConfig::default();
            let mut shuffled = resp.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for r in &resp {
                let a = derive_reference_weight(r, &resp, &cfg).unwrap();
                let b = derive_reference_weight(r, &shuffled, &cfg).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn weights_monotone_in_rank_and_duplicates(resp in arb_responses(), extra in 0u32..4) {
            let cfg = WeightConfig::default();
            let r = resp[0].clone();
            let base = derive_reference_weight(&r, &resp, &cfg).unwrap();

            let mut junior = r.clone();
            junior.author_rank += extra;
            let mut sibs = resp.clone();
            sibs[0] = junior.clone();
            prop_assert!(derive_reference_weight(&junior, &sibs, &cfg).unwrap() <= base);

            let mut more = resp.clone();
            more.push(r.clone());
            prop_assert!(derive_reference_weight(&r, &more, &cfg).unwrap() >= base);
        }

        #[test]
        fn dictionary_build_is_idempotent(labels in prop::collection::vec("[A-Za-z ()]{1,16}", 1..10)) {
            let cases: Vec<Case> = labels.iter().enumerate().map(|(i, l)| {
                let mut c = case(&i.to_string());
                c.gold_label = Some(l.clone());
                c
            }).collect();
            let a = build_disease_dictionary(&cases);
            let b = build_disease_dictionary(&cases);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.names(), b.names());
                    for name in a.names() {
                        prop_assert!(!name.is_empty());
                        prop_assert_eq!(normalize_label(&name), name);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "non-deterministic build"),
            }
        }
    }
}
