//! Per-region label reassignment and pseudo-label assembly.
//!
//! The base layer relabels the coarse prediction pixel-by-pixel through the
//! mapping defaults (source ignore becomes target ignore). Each surviving
//! proposal then gets a multi-scale feature, cosine scores against its
//! candidate target classes, and a temperature-scaled softmax confidence.
//! Regions whose confidence strictly exceeds the threshold are painted over
//! the base layer in descending area order, so smaller regions overwrite
//! larger ones where they overlap. Everything else, including per-region
//! failures, is recorded but leaves the base layer untouched.

use image::RgbImage;
use serde_json::json;

use crate::encoder::{EmbeddingVector, EncoderBackend};
use crate::label_map::{encode_label_map_png, Palette};
use crate::label_space::{ClassId, LabelSpace, TaxonomyMapping};
use crate::proposals::{filter_proposals, majority_label, MaskProposal, SegmentationMap};
use crate::text_bank::TextFeatureBank;
use crate::visual::{extract_multiscale_feature, PaddingPolicy, DEFAULT_EPSILON};
use crate::{Error, Result};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SOFTMAX_TEMPERATURE: f64 = 100.0;

/// Knobs for one fuse run. The defaults are the shipped operating point.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// A region is reassigned only when confidence strictly exceeds this.
    pub confidence_threshold: f64,
    /// Multiplier on cosine similarities before the softmax.
    pub softmax_temperature: f64,
    /// Denominator guard for similarity weighting.
    pub epsilon: f64,
    /// Proposals below this pixel count are dropped before scoring.
    pub min_area: u64,
    /// Keep at most this many proposals (largest first).
    pub max_proposals: Option<usize>,
    /// Zero out-of-mask pixels in the local crop before encoding.
    pub masked_local: bool,
    pub padding: PaddingPolicy,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            softmax_temperature: DEFAULT_SOFTMAX_TEMPERATURE,
            epsilon: DEFAULT_EPSILON,
            min_area: 0,
            max_proposals: None,
            masked_local: false,
            padding: PaddingPolicy::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if self.softmax_temperature <= 0.0 || !self.softmax_temperature.is_finite() {
            return Err(Error::Config(format!(
                "softmax_temperature {} must be positive",
                self.softmax_temperature
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

// ── scoring ──

/// Cosine scores of one region feature against its candidates, plus the
/// softmax confidence of the winner. Ties go to the lowest class id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub candidates: Vec<ClassId>,
    pub similarities: Vec<f64>,
    /// Max of softmax(temperature * similarities).
    pub confidence: f64,
    pub best: ClassId,
}

pub fn score_candidates(
    feature: &EmbeddingVector,
    candidates: &[(ClassId, &EmbeddingVector)],
    temperature: f64,
) -> Result<CandidateScores> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let feature_norm = feature.norm();
    if feature_norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut ids = Vec::with_capacity(candidates.len());
    let mut similarities = Vec::with_capacity(candidates.len());
    for (id, cand) in candidates {
        if cand.dim() != feature.dim() {
            return Err(Error::DimMismatch {
                expected: feature.dim(),
                got: cand.dim(),
            });
        }
        let cand_norm = cand.norm();
        if cand_norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        ids.push(*id);
        similarities.push(feature.dot(cand) / (feature_norm * cand_norm));
    }
    let mut best_idx = 0;
    for i in 1..similarities.len() {
        let better = similarities[i] > similarities[best_idx]
            || (similarities[i] == similarities[best_idx] && ids[i] < ids[best_idx]);
        if better {
            best_idx = i;
        }
    }
    // Stable softmax; the max entry contributes exp(0) = 1.
    let max_sim = similarities[best_idx];
    let denom: f64 = similarities
        .iter()
        .map(|&s| (temperature * (s - max_sim)).exp())
        .sum();
    Ok(CandidateScores {
        best: ids[best_idx],
        candidates: ids,
        similarities,
        confidence: 1.0 / denom,
    })
}

// ── decisions ──

#[derive(Debug, Clone, PartialEq)]
pub struct RegionDecision {
    pub region_id: String,
    /// Majority source label of the region (may be the source ignore id).
    pub initial: ClassId,
    pub candidates: Vec<ClassId>,
    pub similarities: Vec<f64>,
    pub confidence: f64,
    /// Winning target when reassigned, otherwise the initial label's
    /// default target.
    pub chosen: ClassId,
    pub reassigned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionOutcome {
    Decided(RegionDecision),
    /// The region could not be scored; the base layer stands where it would
    /// have painted.
    Failed { region_id: String, error: String },
}

impl RegionOutcome {
    pub fn region_id(&self) -> &str {
        match self {
            RegionOutcome::Decided(d) => &d.region_id,
            RegionOutcome::Failed { region_id, .. } => region_id,
        }
    }
}

/// Scores a region and applies the threshold rule: reassign to the winner
/// only when confidence strictly exceeds the threshold, otherwise keep the
/// fallback (the initial label's default target).
pub fn classify_region(
    region_id: &str,
    initial: ClassId,
    feature: &EmbeddingVector,
    candidates: &[(ClassId, &EmbeddingVector)],
    fallback: ClassId,
    config: &FusionConfig,
) -> Result<RegionDecision> {
    let scores = score_candidates(feature, candidates, config.softmax_temperature)?;
    let reassigned = scores.confidence > config.confidence_threshold;
    Ok(RegionDecision {
        region_id: region_id.to_string(),
        initial,
        chosen: if reassigned { scores.best } else { fallback },
        candidates: scores.candidates,
        similarities: scores.similarities,
        confidence: scores.confidence,
        reassigned,
    })
}

// ── fusion ──

/// Per-pixel relabeling of the coarse prediction through the mapping
/// defaults. This is what the output equals wherever no region paints.
pub fn base_layer(pred: &SegmentationMap, mapping: &TaxonomyMapping) -> Result<SegmentationMap> {
    pred.validate_against(mapping.source())?;
    let source_len = mapping.source().len();
    let mut lut: Vec<ClassId> = Vec::with_capacity(source_len);
    for id in mapping.source().ids() {
        lut.push(mapping.default_target_of(id)?);
    }
    let ignore_pair = match mapping.source().ignore_id() {
        Some(src_ig) if pred.labels().contains(&src_ig) => {
            Some((src_ig, mapping.default_target_of(src_ig)?))
        }
        other => other.map(|src_ig| (src_ig, src_ig)),
    };
    let labels = pred
        .labels()
        .iter()
        .map(|&l| match ignore_pair {
            Some((src_ig, tgt_ig)) if l == src_ig => tgt_ig,
            _ => lut[usize::from(l)],
        })
        .collect();
    SegmentationMap::from_labels(pred.width(), pred.height(), labels)
}

#[derive(Debug)]
pub struct FusionResult {
    pub pseudo_label: SegmentationMap,
    /// One entry per proposal that survived filtering, in input order.
    pub outcomes: Vec<RegionOutcome>,
    /// Row-major 0/1 grid: pixels owned by at least one surviving proposal.
    pub coverage_mask: Vec<u8>,
}

impl FusionResult {
    pub fn reassigned_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, RegionOutcome::Decided(d) if d.reassigned))
            .count()
    }

    /// Fraction of pixels covered by at least one surviving proposal.
    pub fn coverage_fraction(&self) -> f64 {
        if self.coverage_mask.is_empty() {
            return 0.0;
        }
        let covered = self.coverage_mask.iter().filter(|&&v| v != 0).count();
        covered as f64 / self.coverage_mask.len() as f64
    }
}

/// The threshold-independent half of a fuse run: surviving proposals and
/// their scored outcomes. Rendering at any threshold is cheap afterwards,
/// which is what threshold sweeps lean on to score features exactly once.
#[derive(Debug)]
pub struct DecisionSet {
    /// Proposals that survived filtering, in input order.
    pub proposals: Vec<MaskProposal>,
    /// One entry per surviving proposal, same order.
    pub outcomes: Vec<RegionOutcome>,
}

impl DecisionSet {
    /// How many regions would reassign at the given threshold.
    pub fn reassigned_count_at(&self, threshold: f64) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, RegionOutcome::Decided(d) if d.confidence > threshold))
            .count()
    }
}

impl RegionDecision {
    /// The similarity argmax among this region's candidates, ties to the
    /// lowest class id; independent of any threshold. None when the region
    /// had no candidates to score.
    pub fn argmax_target(&self) -> Option<ClassId> {
        let mut best: Option<(ClassId, f64)> = None;
        for (&id, &sim) in self.candidates.iter().zip(&self.similarities) {
            let better = match best {
                None => true,
                Some((bid, bsim)) => sim > bsim || (sim == bsim && id < bid),
            };
            if better {
                best = Some((id, sim));
            }
        }
        best.map(|(id, _)| id)
    }
}

/// Scores every surviving proposal. Per-region errors become
/// [`RegionOutcome::Failed`] entries; only image-level inconsistencies abort.
pub fn decide_image(
    image: &RgbImage,
    pred: &SegmentationMap,
    proposals: Vec<MaskProposal>,
    mapping: &TaxonomyMapping,
    bank: &TextFeatureBank,
    backend: &dyn EncoderBackend,
    config: &FusionConfig,
) -> Result<DecisionSet> {
    config.validate()?;
    bank.ensure_matches(mapping.target())?;
    if pred.width() != image.width() || pred.height() != image.height() {
        return Err(Error::SizeMismatch {
            context: "coarse prediction".into(),
            want_w: image.width(),
            want_h: image.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    let proposals = filter_proposals(proposals, config.min_area, config.max_proposals);
    let source_ignore = mapping.source().ignore_id();
    let outcomes: Vec<RegionOutcome> = proposals
        .iter()
        .map(|proposal| {
            match decide_one(image, pred, proposal, mapping, bank, backend, config, source_ignore)
            {
                Ok(decision) => RegionOutcome::Decided(decision),
                Err(e) => RegionOutcome::Failed {
                    region_id: proposal.region_id.clone(),
                    error: e.to_string(),
                },
            }
        })
        .collect();
    Ok(DecisionSet {
        proposals,
        outcomes,
    })
}

/// Base layer plus every decided region whose confidence strictly exceeds
/// `threshold`, painted onto its argmax target. Painting goes largest first
/// (stable for equal areas), so smaller regions win overlaps.
pub fn render_at_threshold(
    pred: &SegmentationMap,
    mapping: &TaxonomyMapping,
    set: &DecisionSet,
    threshold: f64,
) -> Result<SegmentationMap> {
    let mut pseudo = base_layer(pred, mapping)?;
    let mut painted: Vec<(&MaskProposal, ClassId)> = set
        .proposals
        .iter()
        .zip(&set.outcomes)
        .filter_map(|(p, o)| match o {
            RegionOutcome::Decided(d) if d.confidence > threshold => {
                d.argmax_target().map(|target| (p, target))
            }
            _ => None,
        })
        .collect();
    painted.sort_by_key(|(proposal, _)| std::cmp::Reverse(proposal.area()));
    for (proposal, label) in painted {
        for (x, y) in proposal.pixels() {
            pseudo.set(x, y, label);
        }
    }
    Ok(pseudo)
}

/// Runs the whole per-image pipeline: base layer, per-region decisions,
/// painting at the configured threshold.
pub fn fuse_image(
    image: &RgbImage,
    pred: &SegmentationMap,
    proposals: Vec<MaskProposal>,
    mapping: &TaxonomyMapping,
    bank: &TextFeatureBank,
    backend: &dyn EncoderBackend,
    config: &FusionConfig,
) -> Result<FusionResult> {
    let set = decide_image(image, pred, proposals, mapping, bank, backend, config)?;
    let pseudo = render_at_threshold(pred, mapping, &set, config.confidence_threshold)?;

    let mut coverage_mask = vec![0u8; (pred.width() * pred.height()) as usize];
    for proposal in &set.proposals {
        for (x, y) in proposal.pixels() {
            coverage_mask[(y * pred.width() + x) as usize] = 1;
        }
    }

    Ok(FusionResult {
        pseudo_label: pseudo,
        outcomes: set.outcomes,
        coverage_mask,
    })
}

#[allow(clippy::too_many_arguments)]
fn decide_one(
    image: &RgbImage,
    pred: &SegmentationMap,
    proposal: &MaskProposal,
    mapping: &TaxonomyMapping,
    bank: &TextFeatureBank,
    backend: &dyn EncoderBackend,
    config: &FusionConfig,
    source_ignore: Option<ClassId>,
) -> Result<RegionDecision> {
    let initial = majority_label(pred, proposal, source_ignore)?;
    let is_ignore = Some(initial) == source_ignore;
    let candidate_ids: &[ClassId] = if is_ignore {
        mapping.unlabeled_targets()
    } else {
        mapping.targets_for_source(initial)?
    };
    let fallback = mapping.default_target_of(initial)?;
    if candidate_ids.is_empty() {
        // Nothing to score against (ignore-majority without an unlabeled
        // row). Recorded, never painted.
        return Ok(RegionDecision {
            region_id: proposal.region_id.clone(),
            initial,
            candidates: Vec::new(),
            similarities: Vec::new(),
            confidence: 0.0,
            chosen: fallback,
            reassigned: false,
        });
    }
    let candidates = bank.subset(candidate_ids)?;
    let feature = extract_multiscale_feature(
        backend,
        image,
        proposal,
        (!is_ignore).then_some(initial),
        &config.padding,
        config.epsilon,
        config.masked_local,
    )?;
    classify_region(
        &proposal.region_id,
        initial,
        &feature.aggregate_unit,
        &candidates,
        fallback,
        config,
    )
}

// ── rendering and logs ──

/// PNG bytes of a pseudo-label under the target palette.
pub fn render_pseudo_label(
    map: &SegmentationMap,
    palette: Option<&Palette>,
    target_ignore: Option<ClassId>,
) -> Result<Vec<u8>> {
    encode_label_map_png(map, palette, target_ignore)
}

fn class_label(space: &LabelSpace, id: ClassId) -> String {
    if space.is_ignore(id) {
        crate::label_space::UNLABELED_KEY.to_string()
    } else {
        space
            .name_of(id)
            .map(str::to_string)
            .unwrap_or_else(|_| format!("#{id}"))
    }
}

/// One JSONL line per outcome: decisions carry names, scores, and the
/// reassignment flag; failures carry the error text.
pub fn outcome_to_log_line(
    outcome: &RegionOutcome,
    source: &LabelSpace,
    target: &LabelSpace,
) -> Result<String> {
    let value = match outcome {
        RegionOutcome::Decided(d) => json!({
            "region_id": d.region_id,
            "initial": class_label(source, d.initial),
            "candidates": d.candidates.iter().map(|&c| class_label(target, c)).collect::<Vec<_>>(),
            "similarities": d.similarities,
            "confidence": d.confidence,
            "chosen": class_label(target, d.chosen),
            "reassigned": d.reassigned,
        }),
        RegionOutcome::Failed { region_id, error } => json!({
            "region_id": region_id,
            "error": error,
        }),
    };
    Ok(serde_json::to_string(&value)?)
}
