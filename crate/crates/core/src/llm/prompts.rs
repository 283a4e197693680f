use std::path::Path;

use crate::error::{Error, Result};

/// System prompts for every pipeline call. The built-in set is compiled from
/// `assets/prompts/`; a directory with the same file names overrides it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub name: String,
    pub one_call_system: String,
    pub differential_system: String,
    pub differential_with_info_system: String,
    pub reformat_system: String,
    pub reformat_with_info_system: String,
    pub label_extraction_system: String,
}

const FILES: [&str; 6] = [
    "one_call_system.txt",
    "differential_system.txt",
    "differential_with_info_system.txt",
    "reformat_system.txt",
    "reformat_with_info_system.txt",
    "label_extraction_system.txt",
];

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            name: "builtin".into(),
            one_call_system: include_str!("../../assets/prompts/one_call_system.txt").into(),
            differential_system: include_str!("../../assets/prompts/differential_system.txt")
                .into(),
            differential_with_info_system: include_str!(
                "../../assets/prompts/differential_with_info_system.txt"
            )
            .into(),
            reformat_system: include_str!("../../assets/prompts/reformat_system.txt").into(),
            reformat_with_info_system: include_str!(
                "../../assets/prompts/reformat_with_info_system.txt"
            )
            .into(),
            label_extraction_system: include_str!(
                "../../assets/prompts/label_extraction_system.txt"
            )
            .into(),
        }
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |f: &str| {
            let p = dir.join(f);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let [a, b, c, d, e, f] = FILES;
        Ok(Self {
            name: dir.display().to_string(),
            one_call_system: read(a)?,
            differential_system: read(b)?,
            differential_with_info_system: read(c)?,
            reformat_system: read(d)?,
            reformat_with_info_system: read(e)?,
            label_extraction_system: read(f)?,
        })
    }

    /// `"builtin"` or a directory path.
    pub fn resolve(name: &str) -> Result<Self> {
        if name.is_empty() || name == "builtin" {
            Ok(Self::builtin())
        } else {
            Self::load_dir(name)
        }
    }
}
