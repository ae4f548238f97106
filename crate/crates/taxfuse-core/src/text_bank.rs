//! Per-class text feature banks.
//!
//! One feature per target class: each description string is encoded and
//! unit-normalized, the per-class set is averaged, and the average is
//! normalized again. Banks carry a provenance string (backend name plus a
//! digest of the space and descriptions) so cached banks are never reused
//! across mismatched inputs.
//!
//! Cache file layout: u64 LE header length, JSON header
//! `{"space", "dim", "provenance"}`, then the feature matrix as f32
//! little-endian, class-id order, row-major. f32 is the interchange
//! precision; in-memory math stays f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{encode_text, EmbeddingVector, EncoderBackend};
use crate::label_space::{ClassId, ContextDescriptionSet, LabelSpace, TaxonomyMapping};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TextFeatureBank {
    space_name: String,
    dim: usize,
    provenance: String,
    /// Indexed by class id; every feature is unit-norm.
    features: Vec<EmbeddingVector>,
}

impl TextFeatureBank {
    pub fn from_parts(
        space_name: String,
        dim: usize,
        provenance: String,
        features: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        for f in &features {
            if f.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: f.dim(),
                });
            }
        }
        Ok(Self {
            space_name,
            dim,
            provenance,
            features,
        })
    }

    pub fn space_name(&self) -> &str {
        &self.space_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, id: ClassId) -> Result<&EmbeddingVector> {
        self.features
            .get(usize::from(id))
            .ok_or_else(|| Error::UnknownClassId {
                space: self.space_name.clone(),
                id: u32::from(id),
            })
    }

    /// Features for an explicit candidate list, in the given order.
    pub fn subset<'a>(&'a self, ids: &[ClassId]) -> Result<Vec<(ClassId, &'a EmbeddingVector)>> {
        ids.iter().map(|&id| Ok((id, self.feature(id)?))).collect()
    }

    pub fn ensure_matches(&self, space: &LabelSpace) -> Result<()> {
        if self.space_name != space.name() || self.features.len() != space.len() {
            return Err(Error::BankMismatch(format!(
                "bank is {:?} with {} classes, space is {:?} with {}",
                self.space_name,
                self.features.len(),
                space.name(),
                space.len()
            )));
        }
        Ok(())
    }
}

/// Digest binding a bank to everything that determined its contents.
pub fn bank_provenance(
    backend: &dyn EncoderBackend,
    space: &LabelSpace,
    contexts: &ContextDescriptionSet,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(space.name().as_bytes());
    hasher.update([0]);
    hasher.update(backend.dim().to_le_bytes());
    for id in space.ids() {
        hasher.update(space.name_of(id).unwrap().as_bytes());
        hasher.update([1]);
        if let Some(descs) = contexts.get(id) {
            for d in descs {
                hasher.update(d.as_bytes());
                hasher.update([2]);
            }
        }
        hasher.update([3]);
    }
    format!("{}:{:x}", backend.name(), hasher.finalize())
}

/// Builds the bank for every class of `space`. Fails when a class has no
/// description set or its descriptions cancel to a zero average.
pub fn build_text_feature_bank(
    backend: &dyn EncoderBackend,
    space: &LabelSpace,
    contexts: &ContextDescriptionSet,
) -> Result<TextFeatureBank> {
    let mut features = Vec::with_capacity(space.len());
    for id in space.ids() {
        let class_name = space.name_of(id)?;
        let descs = contexts.get(id).ok_or_else(|| Error::MissingContext {
            class: class_name.to_string(),
        })?;
        let mut sum = EmbeddingVector::zeros(backend.dim());
        for desc in descs {
            sum.add_assign(&encode_text(backend, desc)?);
        }
        let mean = sum.scaled(1.0 / descs.len() as f64);
        let feature = mean.normalized().map_err(|_| {
            Error::Config(format!(
                "descriptions for class {class_name:?} average to a zero vector"
            ))
        })?;
        features.push(feature);
    }
    TextFeatureBank::from_parts(
        space.name().to_string(),
        backend.dim(),
        bank_provenance(backend, space, contexts),
        features,
    )
}

/// Candidate features for a region whose majority source label is `source_id`,
/// in mapping order.
pub fn feature_subset_for_source<'a>(
    bank: &'a TextFeatureBank,
    mapping: &TaxonomyMapping,
    source_id: ClassId,
) -> Result<Vec<(ClassId, &'a EmbeddingVector)>> {
    bank.subset(mapping.targets_for_source(source_id)?)
}

// ── cache io ──

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    space: String,
    dim: usize,
    provenance: String,
}

pub fn save_bank_cache(bank: &TextFeatureBank, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&CacheHeader {
        space: bank.space_name.clone(),
        dim: bank.dim,
        provenance: bank.provenance.clone(),
    })?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(&header)?;
    for feature in &bank.features {
        for &v in feature.as_slice() {
            file.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_bank_cache(path: &Path) -> Result<TextFeatureBank> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        reason,
    };
    let mut file = std::fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| malformed(format!("truncated header length: {e}")))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > 1 << 20 {
        return Err(malformed(format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    file.read_exact(&mut header_bytes)
        .map_err(|e| malformed(format!("truncated header: {e}")))?;
    let header: CacheHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| malformed(e.to_string()))?;
    if header.dim == 0 {
        return Err(malformed("dim is zero".into()));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let row_bytes = header.dim * 4;
    if row_bytes == 0 || payload.len() % row_bytes != 0 {
        return Err(malformed(format!(
            "payload of {} bytes is not a whole number of {}-float rows",
            payload.len(),
            header.dim
        )));
    }
    let features: Vec<EmbeddingVector> = payload
        .chunks_exact(row_bytes)
        .map(|row| {
            let values: Vec<f64> = row
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            EmbeddingVector::new(values)
        })
        .collect::<Result<_>>()?;
    TextFeatureBank::from_parts(header.space, header.dim, header.provenance, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{SyntheticBackendSpec, SyntheticClassSpec, SyntheticEncoder};
    use crate::label_space::IGNORE_ID;
    use crate::rng::SplitMix64;

    fn toy() -> (SyntheticEncoder, LabelSpace, ContextDescriptionSet) {
        let spec = SyntheticBackendSpec {
            kind: "synthetic".into(),
            name: "toy".into(),
            dim: 8,
            eta: 0.0,
            seed: 3,
            classes: vec![
                SyntheticClassSpec {
                    id: 0,
                    name: "pavement".into(),
                    color: [1, 1, 1],
                    aliases: vec!["paved ground".into(), "asphalt surface".into()],
                },
                SyntheticClassSpec {
                    id: 1,
                    name: "grass".into(),
                    color: [2, 2, 2],
                    aliases: vec![],
                },
            ],
        };
        let space = LabelSpace::new(
            "fine",
            vec!["pavement".into(), "grass".into()],
            Some(IGNORE_ID),
        )
        .unwrap();
        let mut map = std::collections::BTreeMap::new();
        map.insert(
            "pavement".to_string(),
            vec!["pavement".to_string(), "paved ground".into(), "asphalt surface".into()],
        );
        map.insert("grass".to_string(), vec!["grass".to_string()]);
        let contexts = ContextDescriptionSet::from_map(&map, &space).unwrap();
        let enc = SyntheticEncoder::new(spec).unwrap();
        (enc, space, contexts)
    }

    #[test]
    fn bank_features_are_unit_and_aligned() {
        let (enc, space, contexts) = toy();
        let bank = build_text_feature_bank(&enc, &space, &contexts).unwrap();
        bank.ensure_matches(&space).unwrap();
        assert_eq!(bank.len(), 2);
        for id in space.ids() {
            let f = bank.feature(id).unwrap();
            assert!((f.norm() - 1.0).abs() < 1e-12);
            // All aliases hit the same one-hot, so the average is exact.
            assert_eq!(f, enc.class_vector(id).unwrap());
        }
    }

    #[test]
    fn missing_description_fails_with_class_name() {
        let (enc, space, _) = toy();
        let mut map = std::collections::BTreeMap::new();
        map.insert("pavement".to_string(), vec!["pavement".to_string()]);
        let contexts = ContextDescriptionSet::from_map(&map, &space).unwrap();
        let err = build_text_feature_bank(&enc, &space, &contexts).unwrap_err();
        assert!(matches!(err, Error::MissingContext { class } if class == "grass"));
    }

    #[test]
    fn subset_preserves_mapping_order() {
        let (enc, space, contexts) = toy();
        let bank = build_text_feature_bank(&enc, &space, &contexts).unwrap();
        let subset = bank.subset(&[1, 0]).unwrap();
        assert_eq!(subset[0].0, 1);
        assert_eq!(subset[1].0, 0);
        assert!(bank.subset(&[5]).is_err());
    }

    #[test]
    fn provenance_tracks_inputs() {
        let (enc, space, contexts) = toy();
        let p1 = bank_provenance(&enc, &space, &contexts);
        let identity = ContextDescriptionSet::identity(&space);
        let p2 = bank_provenance(&enc, &space, &identity);
        assert_ne!(p1, p2);
        assert!(p1.starts_with("toy:"));
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (enc, space, contexts) = toy();
        let bank = build_text_feature_bank(&enc, &space, &contexts).unwrap();
        let p1 = dir.path().join("bank1.tfb");
        let p2 = dir.path().join("bank2.tfb");
        save_bank_cache(&bank, &p1).unwrap();
        let loaded = load_bank_cache(&p1).unwrap();
        assert_eq!(loaded.provenance(), bank.provenance());
        save_bank_cache(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn cache_round_trip_random_banks() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SplitMix64::new(99);
        for case in 0..20 {
            let dim = 1 + (rng.next_u64() % 16) as usize;
            let n = 1 + (rng.next_u64() % 8) as usize;
            let features: Vec<EmbeddingVector> = (0..n)
                .map(|_| {
                    EmbeddingVector::new(
                        (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let bank = TextFeatureBank::from_parts(
                format!("space{case}"),
                dim,
                format!("enc:{case:x}"),
                features,
            )
            .unwrap();
            let p1 = dir.path().join(format!("a{case}.tfb"));
            let p2 = dir.path().join(format!("b{case}.tfb"));
            save_bank_cache(&bank, &p1).unwrap();
            save_bank_cache(&load_bank_cache(&p1).unwrap(), &p2).unwrap();
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (enc, space, contexts) = toy();
        let bank = build_text_feature_bank(&enc, &space, &contexts).unwrap();
        let path = dir.path().join("bank.tfb");
        save_bank_cache(&bank, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_bank_cache(&path).is_err());
    }
}
