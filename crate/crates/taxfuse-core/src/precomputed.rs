//! File-backed region features for runs without a live encoder.
//!
//! One `<basename>.feat` file per image, framed like the bank cache: a u64 LE
//! header length, a JSON header `{image, dim, provenance, keys}`, then the
//! vectors as f32 little-endian rows in key order. Keys are box keys
//! (`b:x0,y0,x1,y1`), so features are addressed purely by geometry; runs that
//! alter crop content (masked locals) cannot use this backend.
//!
//! The text side intentionally fails: pair the backend with a bank cache
//! whose provenance matches the one recorded here.

use std::collections::HashMap;
use std::io::{Cursor, Read};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingVector, EncoderBackend};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    image: String,
    dim: usize,
    provenance: String,
    keys: Vec<String>,
}

/// Writes one image's features. Entries are (box key, vector); every vector
/// must have the same length. Values quantize to f32 on disk, so a reload
/// reproduces the file bit-exactly.
pub fn save_feature_file(
    path: &Path,
    image: &str,
    dim: usize,
    provenance: &str,
    entries: &[(String, Vec<f64>)],
) -> Result<()> {
    for (key, vector) in entries {
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: vector.len(),
            });
        }
        PixelBox::from_key(key)?;
    }
    let header = FeatureHeader {
        image: image.to_string(),
        dim,
        provenance: provenance.to_string(),
        keys: entries.iter().map(|(k, _)| k.clone()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header_bytes.len() + entries.len() * dim * 4);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, vector) in entries {
        for &v in vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Features for one image, loaded eagerly.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures {
    pub image: String,
    pub dim: usize,
    pub provenance: String,
    features: HashMap<String, Vec<f64>>,
}

impl PrecomputedFeatures {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor::new(bytes);
        let mut len8 = [0u8; 8];
        cursor.read_exact(&mut len8)?;
        let header_len = u64::from_le_bytes(len8);
        if header_len > 1 << 20 {
            return Err(Error::Config(format!(
                "feature header claims {header_len} bytes"
            )));
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        cursor.read_exact(&mut header_bytes)?;
        let header: FeatureHeader = serde_json::from_slice(&header_bytes)?;
        let mut body = Vec::new();
        cursor.read_to_end(&mut body)?;
        let expected = header.keys.len() * header.dim * 4;
        if body.len() != expected {
            return Err(Error::Config(format!(
                "feature body is {} bytes, expected {expected} for {} keys of dim {}",
                body.len(),
                header.keys.len(),
                header.dim
            )));
        }
        let mut features = HashMap::with_capacity(header.keys.len());
        for (i, key) in header.keys.iter().enumerate() {
            let row = &body[i * header.dim * 4..(i + 1) * header.dim * 4];
            let vector: Vec<f64> = row
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if features.insert(key.clone(), vector).is_some() {
                return Err(Error::Config(format!("duplicate feature key {key:?}")));
            }
        }
        Ok(Self {
            image: header.image,
            dim: header.dim,
            provenance: header.provenance,
            features,
        })
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.features.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Backend view over one image's feature file. Construct one per image;
/// lookups key on the requested box and never touch pixel content.
pub struct PrecomputedBackend {
    name: String,
    features: PrecomputedFeatures,
}

impl PrecomputedBackend {
    pub fn for_image(dir: &Path, basename: &str) -> Result<Self> {
        let features = PrecomputedFeatures::load(&dir.join(format!("{basename}.feat")))?;
        Ok(Self {
            name: format!("precomputed:{}", features.provenance),
            features,
        })
    }

    pub fn from_features(features: PrecomputedFeatures) -> Self {
        Self {
            name: format!("precomputed:{}", features.provenance),
            features,
        }
    }

    pub fn provenance(&self) -> &str {
        &self.features.provenance
    }
}

impl EncoderBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.features.dim
    }

    fn batch_safe(&self) -> bool {
        true
    }

    fn encode_text_raw(&self, _text: &str) -> Result<EmbeddingVector> {
        Err(Error::Backend {
            backend: self.name.clone(),
            reason: "precomputed features carry no text encoder; load a bank cache".into(),
        })
    }

    fn encode_region_raw(&self, _image: &RgbImage, bbox: PixelBox) -> Result<EmbeddingVector> {
        let key = bbox.key();
        match self.features.get(&key) {
            Some(values) => EmbeddingVector::new(values.to_vec()),
            None => Err(Error::MissingFeature { key }),
        }
    }
}
