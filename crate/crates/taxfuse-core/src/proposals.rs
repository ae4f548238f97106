//! Segmentation maps and class-agnostic mask proposals.
//!
//! Masks travel as run-length encodings: row-major scan order, alternating
//! runs of zeros and ones, always starting with the count of leading zeros
//! (which may be 0). The runs of a valid encoding sum to `width * height`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;
use crate::label_space::{ClassId, LabelSpace};
use crate::{Error, Result};

/// Dense per-pixel label image. Labels are raw ids; whether they belong to a
/// particular space is checked by [`SegmentationMap::validate_against`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    width: u32,
    height: u32,
    labels: Vec<ClassId>,
}

impl SegmentationMap {
    pub fn new(width: u32, height: u32, fill: ClassId) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "segmentation map size {width}x{height} is empty"
            )));
        }
        Ok(Self {
            width,
            height,
            labels: vec![fill; (width as usize) * (height as usize)],
        })
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(Error::SizeMismatch {
                context: "label buffer".into(),
                want_w: width,
                want_h: height,
                got_w: labels.len() as u32,
                got_h: 1,
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "segmentation map size {width}x{height} is empty"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> ClassId {
        debug_assert!(x < self.width && y < self.height);
        self.labels[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn set(&mut self, x: u32, y: u32, label: ClassId) {
        debug_assert!(x < self.width && y < self.height);
        self.labels[(y as usize) * (self.width as usize) + (x as usize)] = label;
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    /// Every label must be a member id or the space's ignore id.
    pub fn validate_against(&self, space: &LabelSpace) -> Result<()> {
        for &l in &self.labels {
            if !space.contains_id(l) && !space.is_ignore(l) {
                return Err(Error::UnknownClassId {
                    space: space.name().to_string(),
                    id: u32::from(l),
                });
            }
        }
        Ok(())
    }
}

// ── run-length encoding ──

/// Encodes a binary mask (row-major, one byte per pixel, nonzero = inside).
/// A mask starting with a one-pixel gets an explicit zero-length leading run
/// so decoding always starts on zeros.
pub fn encode_rle(mask: &[u8]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current: u8 = 0;
    let mut count: u32 = 0;
    for &px in mask {
        let bit = u8::from(px != 0);
        if bit == current {
            count += 1;
        } else {
            runs.push(count);
            current = bit;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

/// Decodes alternating zero/one runs into a binary mask of `width * height`.
pub fn decode_rle(runs: &[u32], width: u32, height: u32) -> Result<Vec<u8>> {
    let expected = u64::from(width) * u64::from(height);
    let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
    if total != expected {
        return Err(Error::RleLengthMismatch {
            expected,
            got: total,
        });
    }
    let mut mask = Vec::with_capacity(expected as usize);
    let mut value: u8 = 0;
    for &run in runs {
        mask.resize(mask.len() + run as usize, value);
        value ^= 1;
    }
    Ok(mask)
}

// ── proposals ──

/// One class-agnostic region hypothesis on a fixed image grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskProposal {
    pub region_id: String,
    width: u32,
    height: u32,
    mask: Vec<u8>,
    bbox: PixelBox,
    area: u64,
}

impl MaskProposal {
    /// Builds from a dense mask; the bounding box and area are always
    /// recomputed here so they can never disagree with the mask.
    pub fn from_mask(region_id: String, width: u32, height: u32, mask: Vec<u8>) -> Result<Self> {
        if mask.len() != (width as usize) * (height as usize) {
            return Err(Error::SizeMismatch {
                context: format!("mask for region {region_id:?}"),
                want_w: width,
                want_h: height,
                got_w: mask.len() as u32,
                got_h: 1,
            });
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut area: u64 = 0;
        for y in 0..height {
            let row = &mask[(y as usize) * (width as usize)..][..width as usize];
            for (x, &px) in row.iter().enumerate() {
                if px != 0 {
                    let x = x as u32;
                    area += 1;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if area == 0 {
            return Err(Error::Config(format!(
                "region {region_id:?} has an empty mask"
            )));
        }
        let mask = mask.iter().map(|&b| u8::from(b != 0)).collect();
        Ok(Self {
            region_id,
            width,
            height,
            mask,
            bbox: PixelBox::new(x0, y0, x1, y1)?,
            area,
        })
    }

    pub fn from_rle(region_id: String, width: u32, height: u32, runs: &[u32]) -> Result<Self> {
        let mask = decode_rle(runs, width, height)?;
        Self::from_mask(region_id, width, height, mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Tight bounding box of the mask's set pixels.
    pub fn bbox(&self) -> PixelBox {
        self.bbox
    }

    /// Count of set pixels, not the bounding-box area.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width
            && y < self.height
            && self.mask[(y as usize) * (self.width as usize) + (x as usize)] != 0
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn to_rle(&self) -> Vec<u32> {
        encode_rle(&self.mask)
    }

    /// Pixel coordinates of the mask, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &px)| px != 0)
            .map(move |(i, _)| ((i as u32) % width, (i as u32) / width))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    region_id: String,
    /// `[height, width]`.
    size: [u32; 2],
    counts: Vec<u32>,
}

/// Reads a proposal file and checks every mask against the expected grid.
pub fn load_proposals(path: &Path, width: u32, height: u32) -> Result<Vec<MaskProposal>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<ProposalRecord> = serde_json::from_str(&text).map_err(|e| {
        Error::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    })?;
    let mut seen = std::collections::HashSet::new();
    let mut proposals = Vec::with_capacity(records.len());
    for rec in records {
        let [h, w] = rec.size;
        if w != width || h != height {
            return Err(Error::SizeMismatch {
                context: format!("proposal {:?}", rec.region_id),
                want_w: width,
                want_h: height,
                got_w: w,
                got_h: h,
            });
        }
        if !seen.insert(rec.region_id.clone()) {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("duplicate region_id {:?}", rec.region_id),
            });
        }
        proposals.push(MaskProposal::from_rle(rec.region_id, w, h, &rec.counts)?);
    }
    Ok(proposals)
}

pub fn save_proposals(path: &Path, proposals: &[MaskProposal]) -> Result<()> {
    let records: Vec<ProposalRecord> = proposals
        .iter()
        .map(|p| ProposalRecord {
            region_id: p.region_id.clone(),
            size: [p.height, p.width],
            counts: p.to_rle(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Majority label inside the mask, skipping `ignore_id` pixels. Ties break
/// toward the lowest class id; a mask of only ignore pixels yields the
/// ignore id itself.
pub fn majority_label(
    map: &SegmentationMap,
    proposal: &MaskProposal,
    ignore_id: Option<ClassId>,
) -> Result<ClassId> {
    if map.width() != proposal.width() || map.height() != proposal.height() {
        return Err(Error::SizeMismatch {
            context: format!("proposal {:?}", proposal.region_id),
            want_w: map.width(),
            want_h: map.height(),
            got_w: proposal.width(),
            got_h: proposal.height(),
        });
    }
    let mut histogram: HashMap<ClassId, u64> = HashMap::new();
    for (x, y) in proposal.pixels() {
        let label = map.get(x, y);
        if Some(label) != ignore_id {
            *histogram.entry(label).or_insert(0) += 1;
        }
    }
    let winner = histogram
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
    match winner {
        Some((label, _)) => Ok(label),
        // Every counted pixel was ignore; the caller routes these to the
        // unlabeled candidates.
        None => Ok(ignore_id.expect("empty histogram implies ignore pixels exist")),
    }
}

/// Drops proposals below `min_area`, then keeps at most `max_count` of the
/// largest. Survivors keep their original relative order; the size cut
/// prefers earlier proposals on equal area.
pub fn filter_proposals(
    proposals: Vec<MaskProposal>,
    min_area: u64,
    max_count: Option<usize>,
) -> Vec<MaskProposal> {
    let keep_order: Vec<usize> = {
        let mut candidates: Vec<usize> = (0..proposals.len())
            .filter(|&i| proposals[i].area() >= min_area)
            .collect();
        if let Some(cap) = max_count {
            if candidates.len() > cap {
                candidates.sort_by(|&a, &b| {
                    proposals[b]
                        .area()
                        .cmp(&proposals[a].area())
                        .then(a.cmp(&b))
                });
                candidates.truncate(cap);
                candidates.sort_unstable();
            }
        }
        candidates
    };
    let mut keep_flags = vec![false; proposals.len()];
    for i in keep_order {
        keep_flags[i] = true;
    }
    proposals
        .into_iter()
        .zip(keep_flags)
        .filter_map(|(p, keep)| keep.then_some(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_str(width: u32, rows: &[&str]) -> Vec<u8> {
        let mut mask = Vec::new();
        for row in rows {
            assert_eq!(row.len() as u32, width);
            mask.extend(row.bytes().map(|b| u8::from(b == b'#')));
        }
        mask
    }

    #[test]
    fn rle_known_values() {
        // 3x2 mask: row 0 = .##, row 1 = #..
        let mask = mask_from_str(3, &[".##", "#.."]);
        assert_eq!(encode_rle(&mask), vec![1, 3, 2]);
        assert_eq!(decode_rle(&[1, 3, 2], 3, 2).unwrap(), mask);
        // Leading one requires a zero-length first run.
        let mask = mask_from_str(2, &["#.", ".."]);
        assert_eq!(encode_rle(&mask), vec![0, 1, 3]);
        assert_eq!(decode_rle(&[0, 1, 3], 2, 2).unwrap(), mask);
    }

    #[test]
    fn rle_rejects_bad_total() {
        assert!(matches!(
            decode_rle(&[1, 2], 2, 2),
            Err(Error::RleLengthMismatch {
                expected: 4,
                got: 3
            })
        ));
    }

    proptest! {
        #[test]
        fn rle_round_trip(bits in proptest::collection::vec(0u8..=1, 1..256), width in 1u32..16) {
            let height = (bits.len() as u32).div_ceil(width);
            let mut mask = bits.clone();
            mask.resize((width * height) as usize, 0);
            let runs = encode_rle(&mask);
            // Alternation: decoding starts on zeros, runs after the first are nonzero.
            prop_assert!(runs.iter().skip(1).all(|&r| r > 0));
            prop_assert_eq!(decode_rle(&runs, width, height).unwrap(), mask);
        }
    }

    #[test]
    fn proposal_recomputes_bbox_and_area() {
        let mask = mask_from_str(4, &["....", ".##.", ".#..", "...."]);
        let p = MaskProposal::from_mask("r0".into(), 4, 4, mask).unwrap();
        assert_eq!(p.bbox(), PixelBox::new(1, 1, 3, 3).unwrap());
        assert_eq!(p.area(), 3);
        assert!(p.contains(1, 2));
        assert!(!p.contains(2, 2));
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(MaskProposal::from_mask("r0".into(), 2, 2, vec![0; 4]).is_err());
    }

    #[test]
    fn majority_ignores_ignore_and_breaks_ties_low() {
        let map = SegmentationMap::from_labels(
            3,
            3,
            vec![3, 3, 3, 1, 1, 255, 1, 3, 0],
        )
        .unwrap();
        let all = MaskProposal::from_mask("r".into(), 3, 3, vec![1; 9]).unwrap();
        // Counts: 3 -> 4, 1 -> 3, 0 -> 1, one ignore pixel skipped.
        assert_eq!(majority_label(&map, &all, Some(255)).unwrap(), 3);
        // Exact tie 4 vs 4 between classes 1 and 3 once the 0 pixel flips to 1.
        let map2 = SegmentationMap::from_labels(
            3,
            3,
            vec![3, 3, 3, 1, 1, 255, 1, 3, 1],
        )
        .unwrap();
        assert_eq!(majority_label(&map2, &all, Some(255)).unwrap(), 1);
    }

    #[test]
    fn majority_of_all_ignore_is_ignore() {
        let map = SegmentationMap::new(2, 2, 255).unwrap();
        let p = MaskProposal::from_mask("r".into(), 2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(majority_label(&map, &p, Some(255)).unwrap(), 255);
    }

    #[test]
    fn filter_keeps_order_and_largest() {
        let make = |id: &str, w: u32| {
            MaskProposal::from_mask(id.into(), 8, 1, {
                let mut m = vec![0u8; 8];
                m[..w as usize].fill(1);
                m
            })
            .unwrap()
        };
        let props = vec![make("a", 2), make("b", 5), make("c", 1), make("d", 5)];
        let out = filter_proposals(props.clone(), 2, None);
        let ids: Vec<&str> = out.iter().map(|p| p.region_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "d"]);
        // Cap of 2 keeps the two largest; b and d tie so the earlier wins
        // nothing extra, both stay, a drops.
        let out = filter_proposals(props, 0, Some(2));
        let ids: Vec<&str> = out.iter().map(|p| p.region_id.as_str()).collect();
        assert_eq!(ids, ["b", "d"]);
    }

    #[test]
    fn proposal_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("props.json");
        let p1 = MaskProposal::from_mask("r1".into(), 3, 2, vec![0, 1, 1, 0, 0, 1]).unwrap();
        let p2 = MaskProposal::from_mask("r2".into(), 3, 2, vec![1, 0, 0, 0, 0, 0]).unwrap();
        save_proposals(&path, &[p1.clone(), p2.clone()]).unwrap();
        let loaded = load_proposals(&path, 3, 2).unwrap();
        assert_eq!(loaded, vec![p1, p2]);
        assert!(load_proposals(&path, 2, 3).is_err());
    }

    #[test]
    fn duplicate_region_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("props.json");
        std::fs::write(
            &path,
            r#"[{"region_id":"r","size":[1,2],"counts":[0,2]},
                {"region_id":"r","size":[1,2],"counts":[1,1]}]"#,
        )
        .unwrap();
        assert!(load_proposals(&path, 2, 1).is_err());
    }
}
