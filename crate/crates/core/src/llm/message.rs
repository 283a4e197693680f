use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_ids: Vec<String>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            image_ids: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>, image_ids: Vec<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image_ids,
        }
    }
}

/// Resolves image ids to content digests (and, for live calls, bytes).
pub trait ImageSource: Send + Sync {
    fn content_digest(&self, image_id: &str) -> String;

    fn load(&self, _image_id: &str) -> Option<Vec<u8>> {
        None
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the id string itself, for setups without image files.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdDigests;

impl ImageSource for IdDigests {
    fn content_digest(&self, image_id: &str) -> String {
        sha256_hex(format!("id:{image_id}").as_bytes())
    }
}

/// Images stored as files named by their id under one directory. Missing
/// files fall back to the id digest.
#[derive(Debug, Clone)]
pub struct DirectoryImages {
    pub dir: PathBuf,
}

impl ImageSource for DirectoryImages {
    fn content_digest(&self, image_id: &str) -> String {
        match self.load(image_id) {
            Some(bytes) => sha256_hex(&bytes),
            None => IdDigests.content_digest(image_id),
        }
    }

    fn load(&self, image_id: &str) -> Option<Vec<u8>> {
        std::fs::read(self.dir.join(image_id)).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self> {
        if messages
            .iter()
            .any(|m| m.role == Role::System && !m.image_ids.is_empty())
        {
            return Err(Error::InvalidInput(
                "system messages cannot carry images".into(),
            ));
        }
        Ok(Self { messages })
    }

    /// JSON array of `[role, text, [image digests]]` triples.
    pub fn canonical(&self, images: &dyn ImageSource) -> String {
        let triples: Vec<(&str, &str, Vec<String>)> = self
            .messages
            .iter()
            .map(|m| {
                (
                    m.role.as_str(),
                    m.text.as_str(),
                    m.image_ids
                        .iter()
                        .map(|id| images.content_digest(id))
                        .collect(),
                )
            })
            .collect();
        serde_json::to_string(&triples).expect("canonical form serializes")
    }

    pub fn digest(&self, images: &dyn ImageSource) -> String {
        sha256_hex(self.canonical(images).as_bytes())
    }
}
