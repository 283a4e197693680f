//! Dense vector store backed by a JSON manifest and a raw little-endian f32 blob.
//!
//! ```text
//! {"ids": [...], "dim": 2048, "blob": "image.f32", "crc32": 1234, "variant_of": {"img_a#1": "img_a"}}
//! ```
//!
//! The blob holds `ids.len() * dim` values in row-major order and is checked
//! against the manifest's CRC-32 on import.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Feature width of the image encoder outputs.
pub const IMAGE_DIM: usize = 2048;
/// Width of the label text embeddings.
pub const TEXT_DIM: usize = 3072;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub dim: usize,
    pub blob: PathBuf,
    pub crc32: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub variant_of: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantPolicy {
    BaseOnly,
    /// Uniform pick among the base row and its registered variants.
    SampleVariant(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    variant_of: BTreeMap<String, String>,
    /// base id -> variant row indices, in row order
    variants: HashMap<String, Vec<usize>>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_variants(ids, dim, data, BTreeMap::new())
    }

    pub fn with_variants(
        ids: Vec<String>,
        dim: usize,
        data: Vec<f32>,
        variant_of: BTreeMap<String, String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dim must be positive".into()));
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput(
                "embedding matrix needs at least one row".into(),
            ));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {} rows x dim {}",
                data.len(),
                ids.len(),
                dim
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate id `{id}`")));
            }
        }
        for (i, row) in data.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { id: ids[i].clone() });
            }
        }
        let mut variants: HashMap<String, Vec<usize>> = HashMap::new();
        for (variant, base) in &variant_of {
            let &vrow = index
                .get(variant)
                .ok_or_else(|| Error::UnknownId(variant.clone()))?;
            if !index.contains_key(base) {
                return Err(Error::UnknownId(base.clone()));
            }
            if variant_of.contains_key(base) {
                return Err(Error::InvalidInput(format!(
                    "variant base `{base}` is itself a variant"
                )));
            }
            variants.entry(base.clone()).or_default().push(vrow);
        }
        for rows in variants.values_mut() {
            rows.sort_unstable();
        }
        Ok(Self {
            ids,
            dim,
            data,
            index,
            variant_of,
            variants,
        })
    }

    /// Builds a matrix from `(id, row)` pairs.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            ids.push(id.into());
            data.extend_from_slice(&row);
        }
        Self::new(ids, dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn variant_of(&self) -> &BTreeMap<String, String> {
        &self.variant_of
    }

    pub fn is_variant(&self, id: &str) -> bool {
        self.variant_of.contains_key(id)
    }

    /// Ids that are not registered as a variant of another row.
    pub fn base_ids(&self) -> impl Iterator<Item = &str> {
        self.ids
            .iter()
            .filter(|id| !self.is_variant(id))
            .map(String::as_str)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<&[f32]> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn variant_count(&self, id: &str) -> usize {
        self.variants.get(id).map_or(0, Vec::len)
    }

    pub fn get_vector(&self, id: &str, policy: VariantPolicy) -> Result<&[f32]> {
        let base = self
            .position(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        match policy {
            VariantPolicy::BaseOnly => Ok(self.row(base)),
            VariantPolicy::SampleVariant(seed) => {
                let Some(rows) = self.variants.get(id) else {
                    return Ok(self.row(base));
                };
                let pick = rng_from_seed(seed).gen_range(0..=rows.len());
                Ok(if pick == 0 {
                    self.row(base)
                } else {
                    self.row(rows[pick - 1])
                })
            }
        }
    }

    /// Writes `manifest_path` plus a blob named after it (`<stem>.f32`).
    pub fn export(&self, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
        let manifest_path = manifest_path.as_ref();
        let stem = manifest_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embeddings".into());
        let blob_name = PathBuf::from(format!("{stem}.f32"));
        let blob_path = resolve_relative(manifest_path, &blob_name);

        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&blob_path, &bytes).map_err(|e| Error::io(&blob_path, e))?;

        let manifest = Manifest {
            ids: self.ids.clone(),
            dim: self.dim,
            blob: blob_name,
            crc32: crc32fast::hash(&bytes),
            variant_of: self.variant_of.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(manifest_path, json + "\n").map_err(|e| Error::io(manifest_path, e))?;
        Ok(manifest)
    }
}

fn resolve_relative(manifest_path: &Path, blob: &Path) -> PathBuf {
    if blob.is_absolute() {
        blob.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(blob)
    }
}

pub fn import_embeddings(manifest_path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let manifest_path = manifest_path.as_ref();
    let raw = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&raw)
        .map_err(|e| Error::parse(manifest_path, e.line(), e.to_string()))?;
    if manifest.dim == 0 {
        return Err(Error::parse(manifest_path, 1, "dim must be positive"));
    }
    let blob_path = resolve_relative(manifest_path, &manifest.blob);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let expected = manifest.ids.len() * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "blob {} has {} bytes, manifest implies {} ({} ids x dim {} x 4)",
            blob_path.display(),
            bytes.len(),
            expected,
            manifest.ids.len(),
            manifest.dim
        )));
    }
    let actual = crc32fast::hash(&bytes);
    if actual != manifest.crc32 {
        return Err(Error::Checksum {
            path: blob_path,
            expected: manifest.crc32,
            actual,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::with_variants(manifest.ids, manifest.dim, data, manifest.variant_of)
}
