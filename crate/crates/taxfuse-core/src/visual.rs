//! Multi-scale visual features for mask proposals.
//!
//! A region is encoded from its tight bounding box (the local view) and from
//! a series of center-padded boxes (global views). Each global view is
//! weighted by its cosine similarity to the local view, so context that
//! agrees with the region reinforces it while unrelated context is replaced
//! by the local feature. The weighted views are averaged and the result is
//! unit-normalized for downstream cosine scoring.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_region, EmbeddingVector, EncoderBackend};
use crate::geometry::PixelBox;
use crate::label_space::{ClassId, LabelSpace};
use crate::proposals::MaskProposal;
use crate::{Error, Result};

/// Denominator guard for the similarity weights.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Padding scales used when a source class has no override.
pub const DEFAULT_SCALES: &[f64] = &[1.5, 2.5];

// ── padding policy ──

/// Per-source-class padding scales. Scale lists are non-empty, ascending,
/// and every scale is at least 1.0 (padding never shrinks the box).
#[derive(Debug, Clone, PartialEq)]
pub struct PaddingPolicy {
    default_scales: Vec<f64>,
    per_source_class: HashMap<ClassId, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaddingPolicyFile {
    default_scales: Vec<f64>,
    #[serde(default)]
    per_source_class: BTreeMap<String, Vec<f64>>,
}

fn check_scales(context: &str, scales: &[f64]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Config(format!("{context}: empty scale list")));
    }
    for pair in scales.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::Config(format!(
                "{context}: scales not ascending ({} after {})",
                pair[1], pair[0]
            )));
        }
    }
    for &s in scales {
        if !s.is_finite() || s < 1.0 {
            return Err(Error::Config(format!("{context}: scale {s} below 1.0")));
        }
    }
    Ok(())
}

impl PaddingPolicy {
    pub fn new(
        default_scales: Vec<f64>,
        per_source_class: HashMap<ClassId, Vec<f64>>,
    ) -> Result<Self> {
        check_scales("default_scales", &default_scales)?;
        for (id, scales) in &per_source_class {
            check_scales(&format!("per_source_class[{id}]"), scales)?;
        }
        Ok(Self {
            default_scales,
            per_source_class,
        })
    }

    /// Defaults only, no per-class overrides.
    pub fn uniform(scales: Vec<f64>) -> Result<Self> {
        Self::new(scales, HashMap::new())
    }

    /// Built-in policy: wide-context scales for classes that sprawl
    /// (surfaces, sky, large structures), tight scales for thin objects the
    /// default padding would drown in background. Names not present in
    /// `source` are skipped.
    pub fn builtin_for_space(source: &LabelSpace) -> Result<Self> {
        const LARGE: &[&str] = &["road", "sky", "building", "vegetation", "terrain", "wall"];
        const SMALL: &[&str] = &["pole", "traffic light", "traffic sign", "bicycle", "rider"];
        let mut per_source_class = HashMap::new();
        for name in LARGE {
            if let Ok(id) = source.id_of(name) {
                per_source_class.insert(id, vec![2.0, 4.0, 8.0]);
            }
        }
        for name in SMALL {
            if let Ok(id) = source.id_of(name) {
                per_source_class.insert(id, vec![1.2, 1.5, 2.0]);
            }
        }
        Self::new(DEFAULT_SCALES.to_vec(), per_source_class)
    }

    pub fn load(path: &Path, source: &LabelSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: PaddingPolicyFile = serde_json::from_str(&text)?;
        let mut per_source_class = HashMap::new();
        for (name, scales) in file.per_source_class {
            per_source_class.insert(source.id_of(&name)?, scales);
        }
        Self::new(file.default_scales, per_source_class)
    }

    pub fn save(&self, path: &Path, source: &LabelSpace) -> Result<()> {
        let file = PaddingPolicyFile {
            default_scales: self.default_scales.clone(),
            per_source_class: self
                .per_source_class
                .iter()
                .map(|(id, s)| Ok((source.name_of(*id)?.to_string(), s.clone())))
                .collect::<Result<_>>()?,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Scales for a region with the given majority source class; `None`
    /// (ignore-majority regions) and classes without overrides use the
    /// defaults.
    pub fn scales_for(&self, source_id: Option<ClassId>) -> &[f64] {
        source_id
            .and_then(|id| self.per_source_class.get(&id))
            .map(Vec::as_slice)
            .unwrap_or(&self.default_scales)
    }

    pub fn default_scales(&self) -> &[f64] {
        &self.default_scales
    }
}

impl Default for PaddingPolicy {
    fn default() -> Self {
        Self::uniform(DEFAULT_SCALES.to_vec()).expect("default scales are valid")
    }
}

// ── geometry ──

/// Center-expands `bbox` by each scale, rounding outward (floor the min
/// corner, ceil the max corner) and clipping to the image. A box crushed to
/// nothing by clipping is re-expanded to cover at least one pixel.
pub fn padded_regions(
    bbox: PixelBox,
    scales: &[f64],
    image_width: u32,
    image_height: u32,
) -> Result<Vec<PixelBox>> {
    bbox.ensure_fits(image_width, image_height)?;
    check_scales("padded_regions", scales)?;
    let cx = (f64::from(bbox.x0) + f64::from(bbox.x1)) / 2.0;
    let cy = (f64::from(bbox.y0) + f64::from(bbox.y1)) / 2.0;
    let w = f64::from(bbox.width());
    let h = f64::from(bbox.height());
    let mut out = Vec::with_capacity(scales.len());
    for &s in scales {
        let half_w = w * s / 2.0;
        let half_h = h * s / 2.0;
        let x0 = (cx - half_w).floor().max(0.0) as u32;
        let y0 = (cy - half_h).floor().max(0.0) as u32;
        // With s >= 1 and the input box in bounds this never degenerates;
        // the max() guards keep the contract explicit.
        let x1 = (((cx + half_w).ceil()) as u32).min(image_width).max(x0 + 1);
        let y1 = (((cy + half_h).ceil()) as u32).min(image_height).max(y0 + 1);
        out.push(PixelBox::new(x0, y0, x1, y1)?);
    }
    Ok(out)
}

// ── similarity weighting ──

/// Eq-style cosine weights: `w_k = <l, g_k> / (|l| * |g_k| + epsilon)`.
pub fn similarity_weights(
    local: &EmbeddingVector,
    globals: &[EmbeddingVector],
    epsilon: f64,
) -> Result<Vec<f64>> {
    if globals.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
    }
    let local_norm = local.norm();
    globals
        .iter()
        .map(|g| {
            if g.dim() != local.dim() {
                return Err(Error::DimMismatch {
                    expected: local.dim(),
                    got: g.dim(),
                });
            }
            Ok(local.dot(g) / (local_norm * g.norm() + epsilon))
        })
        .collect()
}

/// Weighted fusion of the global views with the local view:
/// `F = sum_k (w_k * g_k + (1 - w_k) * l) / K`. Not normalized.
pub fn aggregate_multiscale(
    local: &EmbeddingVector,
    globals: &[EmbeddingVector],
    weights: &[f64],
) -> Result<EmbeddingVector> {
    if globals.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if globals.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} globals but {} weights",
            globals.len(),
            weights.len()
        )));
    }
    let mut sum = EmbeddingVector::zeros(local.dim());
    for (g, &w) in globals.iter().zip(weights) {
        if g.dim() != local.dim() {
            return Err(Error::DimMismatch {
                expected: local.dim(),
                got: g.dim(),
            });
        }
        sum.add_assign(&g.scaled(w));
        sum.add_assign(&local.scaled(1.0 - w));
    }
    Ok(sum.scaled(1.0 / globals.len() as f64))
}

/// Everything computed for one region, kept for decision logs and tests.
#[derive(Debug, Clone)]
pub struct MultiScaleFeature {
    pub local: EmbeddingVector,
    pub global_boxes: Vec<PixelBox>,
    pub globals: Vec<EmbeddingVector>,
    pub weights: Vec<f64>,
    /// Raw aggregate, exactly as the weighted average produces it.
    pub aggregate: EmbeddingVector,
    /// Unit-normalized aggregate used for candidate scoring.
    pub aggregate_unit: EmbeddingVector,
    pub epsilon: f64,
}

/// Runs the full local/global/aggregate chain for one proposal.
///
/// `source_id` selects the padding scales (`None` uses the defaults). With
/// `masked_local` the local view is encoded from a crop whose out-of-mask
/// pixels are zeroed; global views always see the untouched image.
pub fn extract_multiscale_feature(
    backend: &dyn EncoderBackend,
    image: &RgbImage,
    proposal: &MaskProposal,
    source_id: Option<ClassId>,
    policy: &PaddingPolicy,
    epsilon: f64,
    masked_local: bool,
) -> Result<MultiScaleFeature> {
    if proposal.width() != image.width() || proposal.height() != image.height() {
        return Err(Error::SizeMismatch {
            context: format!("proposal {:?}", proposal.region_id),
            want_w: image.width(),
            want_h: image.height(),
            got_w: proposal.width(),
            got_h: proposal.height(),
        });
    }
    let bbox = proposal.bbox();
    let local = if masked_local {
        let mut crop = RgbImage::new(bbox.width(), bbox.height());
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                if proposal.contains(x, y) {
                    crop.put_pixel(x - bbox.x0, y - bbox.y0, *image.get_pixel(x, y));
                }
            }
        }
        let crop_box = PixelBox::new(0, 0, bbox.width(), bbox.height())?;
        encode_region(backend, &crop, crop_box)?
    } else {
        encode_region(backend, image, bbox)?
    };
    let scales = policy.scales_for(source_id);
    let global_boxes = padded_regions(bbox, scales, image.width(), image.height())?;
    let globals: Vec<EmbeddingVector> = global_boxes
        .iter()
        .map(|&b| encode_region(backend, image, b))
        .collect::<Result<_>>()?;
    let weights = similarity_weights(&local, &globals, epsilon)?;
    let aggregate = aggregate_multiscale(&local, &globals, &weights)?;
    let aggregate_unit = aggregate.normalized()?;
    Ok(MultiScaleFeature {
        local,
        global_boxes,
        globals,
        weights,
        aggregate,
        aggregate_unit,
        epsilon,
    })
}
