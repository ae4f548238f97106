//! Embedding vectors and pluggable text/vision encoder backends.
//!
//! A backend encodes class description strings and image regions into a
//! shared embedding space. The pipeline only consumes embeddings through the
//! [`encode_text`] / [`encode_region`] wrappers, which enforce the contract:
//! correct dimension, finite components, unit norm.
//!
//! [`SyntheticEncoder`] is the deterministic test backend: a vocabulary of
//! classes with one-hot embeddings and paint-by-numbers region recognition.
//! Its member embeddings are orthogonal, which keeps every synthetic
//! classification decision analyzable by hand.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;
use crate::label_space::ClassId;
use crate::rng::{fnv1a, SplitMix64};
use crate::{Error, Result};

/// Dense embedding, f64 end to end. Construction rejects non-finite
/// components; norms are whatever the producer made them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    /// One-hot basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[index] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EmbeddingVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(1.0 / n))
    }
}

/// Text and vision encoder pair sharing one embedding space.
pub trait EncoderBackend: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Whether concurrent calls are safe. Serial-only backends are wrapped
    /// in a mutex by their implementation; this flag lets the orchestrator
    /// avoid pointless fan-out.
    fn batch_safe(&self) -> bool;

    /// Raw text embedding; norm unconstrained.
    fn encode_text_raw(&self, text: &str) -> Result<EmbeddingVector>;

    /// Raw embedding of the pixels of `bbox` within `image`.
    fn encode_region_raw(&self, image: &RgbImage, bbox: PixelBox) -> Result<EmbeddingVector>;
}

fn check_output(backend: &dyn EncoderBackend, v: EmbeddingVector) -> Result<EmbeddingVector> {
    if v.dim() != backend.dim() {
        return Err(Error::DimMismatch {
            expected: backend.dim(),
            got: v.dim(),
        });
    }
    v.normalized()
}

/// Encodes one description string: rejects empty text, unit-normalizes the
/// backend output, checks dimension and finiteness.
pub fn encode_text(backend: &dyn EncoderBackend, text: &str) -> Result<EmbeddingVector> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    check_output(backend, backend.encode_text_raw(text)?)
}

/// Encodes an image region under the same output contract. The box must lie
/// inside the image.
pub fn encode_region(
    backend: &dyn EncoderBackend,
    image: &RgbImage,
    bbox: PixelBox,
) -> Result<EmbeddingVector> {
    bbox.ensure_fits(image.width(), image.height())?;
    check_output(backend, backend.encode_region_raw(image, bbox)?)
}

// ── synthetic backend ──

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClassSpec {
    pub id: ClassId,
    pub name: String,
    /// Exact render color of this class in synthetic images.
    pub color: [u8; 3],
    /// Description strings that should resolve to this class, in addition
    /// to the name itself.
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Serialized form of the synthetic backend, shipped alongside generated
/// datasets so a fuse run can rebuild the exact encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBackendSpec {
    /// Discriminator for backend config files; always "synthetic".
    pub kind: String,
    pub name: String,
    pub dim: usize,
    /// Upper bound on the norm of the deterministic noise added to region
    /// embeddings. Zero disables noise.
    pub eta: f64,
    pub seed: u64,
    pub classes: Vec<SyntheticClassSpec>,
}

impl SyntheticBackendSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&text)?;
        if spec.kind != "synthetic" {
            return Err(Error::Config(format!(
                "backend kind {:?} is not \"synthetic\"",
                spec.kind
            )));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Deterministic oracle backend.
///
/// Class embeddings are one-hot, so members are pairwise orthogonal. Text
/// resolves through an exact alias table; unknown text hashes to a stable
/// pseudo-random unit vector. Region encoding finds the dominant class color
/// inside the box (ties to the lowest id) and perturbs that class's
/// embedding with noise of norm at most `eta`, keyed on the box corners.
pub struct SyntheticEncoder {
    spec: SyntheticBackendSpec,
    by_color: HashMap<[u8; 3], ClassId>,
    by_text: HashMap<String, ClassId>,
    vectors: HashMap<ClassId, EmbeddingVector>,
}

impl SyntheticEncoder {
    pub fn new(spec: SyntheticBackendSpec) -> Result<Self> {
        if spec.classes.is_empty() {
            return Err(Error::Config("synthetic backend has no classes".into()));
        }
        if spec.dim < spec.classes.len() {
            return Err(Error::Config(format!(
                "synthetic dim {} cannot hold {} orthogonal classes",
                spec.dim,
                spec.classes.len()
            )));
        }
        if !(0.0..1.0).contains(&spec.eta) {
            return Err(Error::Config(format!(
                "synthetic eta {} outside [0, 1)",
                spec.eta
            )));
        }
        let mut by_color = HashMap::new();
        let mut by_text = HashMap::new();
        let mut vectors = HashMap::new();
        for (slot, class) in spec.classes.iter().enumerate() {
            if by_color.insert(class.color, class.id).is_some() {
                return Err(Error::Config(format!(
                    "synthetic color {:?} assigned twice",
                    class.color
                )));
            }
            if vectors
                .insert(class.id, EmbeddingVector::basis(spec.dim, slot))
                .is_some()
            {
                return Err(Error::Config(format!(
                    "synthetic class id {} defined twice",
                    class.id
                )));
            }
            for text in std::iter::once(&class.name).chain(class.aliases.iter()) {
                if let Some(prev) = by_text.insert(text.clone(), class.id) {
                    if prev != class.id {
                        return Err(Error::Config(format!(
                            "synthetic text {text:?} maps to two classes"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            spec,
            by_color,
            by_text,
            vectors,
        })
    }

    pub fn spec(&self) -> &SyntheticBackendSpec {
        &self.spec
    }

    pub fn class_vector(&self, id: ClassId) -> Option<&EmbeddingVector> {
        self.vectors.get(&id)
    }

    /// Stable pseudo-random unit vector for out-of-vocabulary inputs.
    fn hashed_vector(&self, key: &str) -> EmbeddingVector {
        let mut rng = SplitMix64::keyed(self.spec.seed, &[fnv1a(key.as_bytes())]);
        let mut values: Vec<f64> = (0..self.spec.dim)
            .map(|_| rng.next_f64() * 2.0 - 1.0)
            .collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            values[0] = 1.0;
        }
        EmbeddingVector::new(values).expect("finite by construction")
    }
}

impl EncoderBackend for SyntheticEncoder {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn batch_safe(&self) -> bool {
        true
    }

    fn encode_text_raw(&self, text: &str) -> Result<EmbeddingVector> {
        match self.by_text.get(text) {
            Some(id) => Ok(self.vectors[id].clone()),
            None => Ok(self.hashed_vector(text)),
        }
    }

    fn encode_region_raw(&self, image: &RgbImage, bbox: PixelBox) -> Result<EmbeddingVector> {
        let mut histogram: HashMap<ClassId, u64> = HashMap::new();
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                let px = image.get_pixel(x, y).0;
                if let Some(&id) = self.by_color.get(&px) {
                    *histogram.entry(id).or_insert(0) += 1;
                }
            }
        }
        let dominant = histogram
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(id, _)| id);
        let base = match dominant {
            Some(id) => self.vectors[&id].clone(),
            None => self.hashed_vector("region:no-known-colors"),
        };
        if self.spec.eta == 0.0 {
            return Ok(base);
        }
        let mut rng = SplitMix64::keyed(
            self.spec.seed,
            &[
                0x7265_6769_6f6e, // "region"
                u64::from(bbox.x0),
                u64::from(bbox.y0),
                u64::from(bbox.x1),
                u64::from(bbox.y1),
            ],
        );
        let mut noise: Vec<f64> = (0..self.spec.dim)
            .map(|_| rng.next_f64() * 2.0 - 1.0)
            .collect();
        let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let magnitude = self.spec.eta * rng.next_f64();
        let mut out = base;
        if norm > 0.0 {
            let scale = magnitude / norm;
            for v in &mut noise {
                *v *= scale;
            }
            out.add_assign(&EmbeddingVector::new(noise)?);
        }
        Ok(out)
    }
}
