//! Confusion matrices, IoU/accuracy, and known/unknown split reports.
//!
//! The matrix is `n x n` over member classes; ground-truth ignore pixels are
//! excluded before counting. Predictions may still contain the ignore id
//! (regions nothing claimed); those pixels are tallied per ground-truth
//! class in a side column and count as false negatives, so totals always
//! equal the number of evaluated pixels.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::label_space::{ClassId, LabelSpace};
use crate::proposals::SegmentationMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    space_name: String,
    n: usize,
    ignore_id: Option<ClassId>,
    /// Row-major: `counts[gt * n + pred]`.
    counts: Vec<u64>,
    /// Pixels whose prediction was the ignore id, per ground-truth class.
    unassigned: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(space: &LabelSpace) -> Self {
        Self {
            space_name: space.name().to_string(),
            n: space.len(),
            ignore_id: space.ignore_id(),
            counts: vec![0; space.len() * space.len()],
            unassigned: vec![0; space.len()],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[usize::from(gt) * self.n + usize::from(pred)]
    }

    pub fn unassigned(&self, gt: ClassId) -> u64 {
        self.unassigned[usize::from(gt)]
    }

    /// Evaluated pixels: everything except ground-truth ignore.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unassigned.iter().sum::<u64>()
    }

    /// Adds one image pair. Ground-truth ignore pixels are skipped; any
    /// other out-of-space id on either side is an error.
    pub fn accumulate(&mut self, gt: &SegmentationMap, pred: &SegmentationMap) -> Result<()> {
        if gt.width() != pred.width() || gt.height() != pred.height() {
            return Err(Error::SizeMismatch {
                context: "prediction vs ground truth".into(),
                want_w: gt.width(),
                want_h: gt.height(),
                got_w: pred.width(),
                got_h: pred.height(),
            });
        }
        let n = self.n as u32;
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if Some(g) == self.ignore_id {
                continue;
            }
            if u32::from(g) >= n {
                return Err(Error::UnknownClassId {
                    space: self.space_name.clone(),
                    id: u32::from(g),
                });
            }
            if Some(p) == self.ignore_id {
                self.unassigned[usize::from(g)] += 1;
            } else if u32::from(p) >= n {
                return Err(Error::UnknownClassId {
                    space: self.space_name.clone(),
                    id: u32::from(p),
                });
            } else {
                self.counts[usize::from(g) * self.n + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    /// Adds another matrix over the same space. Order never matters: merge
    /// is plain element-wise addition.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.n != other.n || self.space_name != other.space_name {
            return Err(Error::BankMismatch(format!(
                "cannot merge confusion over {:?}/{} with {:?}/{}",
                self.space_name, self.n, other.space_name, other.n
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unassigned.iter_mut().zip(&other.unassigned) {
            *a += b;
        }
        Ok(())
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..self.n)
            .map(|i| {
                let tp = self.counts[i * self.n + i];
                let row: u64 = self.counts[i * self.n..(i + 1) * self.n].iter().sum();
                let col: u64 = (0..self.n).map(|j| self.counts[j * self.n + i]).sum();
                let fn_ = row - tp + self.unassigned[i];
                let fp = col - tp;
                let gt_pixels = row + self.unassigned[i];
                let union = tp + fp + fn_;
                ClassMetrics {
                    id: i as ClassId,
                    tp,
                    fp,
                    fn_,
                    gt_pixels,
                    pred_pixels: col,
                    iou: (union > 0).then(|| tp as f64 / union as f64),
                    acc: (gt_pixels > 0).then(|| tp as f64 / gt_pixels as f64),
                }
            })
            .collect()
    }

    /// Means over all classes plus the known/unknown partition.
    pub fn split_report(&self, known: &BTreeSet<ClassId>) -> SplitReport {
        let per_class = self.per_class();
        let slice = |pred: &dyn Fn(ClassId) -> bool| -> MeanStats {
            let members: Vec<&ClassMetrics> =
                per_class.iter().filter(|m| pred(m.id)).collect();
            let ious: Vec<f64> = members.iter().filter_map(|m| m.iou).collect();
            let accs: Vec<f64> = members.iter().filter_map(|m| m.acc).collect();
            MeanStats {
                classes: members.len(),
                iou_defined: ious.len(),
                acc_defined: accs.len(),
                miou: mean(&ious),
                macc: mean(&accs),
            }
        };
        SplitReport {
            all: slice(&|_| true),
            known: slice(&|id| known.contains(&id)),
            unknown: slice(&|id| !known.contains(&id)),
            per_class,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Per-class tallies. `iou` is undefined only when the class appears in
/// neither ground truth nor predictions; `acc` additionally requires ground
/// truth presence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub id: ClassId,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    pub iou: Option<f64>,
    pub acc: Option<f64>,
}

/// Means over defined values only; `None` when the slice has no defined
/// classes (an empty unknown split, for instance).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStats {
    pub classes: usize,
    pub iou_defined: usize,
    pub acc_defined: usize,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub per_class: Vec<ClassMetrics>,
    pub all: MeanStats,
    pub known: MeanStats,
    pub unknown: MeanStats,
}

impl SplitReport {
    /// Full-precision JSON with class names resolved.
    pub fn to_json(&self, space: &LabelSpace) -> Result<String> {
        #[derive(Serialize)]
        struct NamedClass<'a> {
            name: &'a str,
            #[serde(flatten)]
            metrics: &'a ClassMetrics,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            space: &'a str,
            per_class: Vec<NamedClass<'a>>,
            all: &'a MeanStats,
            known: &'a MeanStats,
            unknown: &'a MeanStats,
        }
        let doc = Doc {
            space: space.name(),
            per_class: self
                .per_class
                .iter()
                .map(|m| {
                    Ok(NamedClass {
                        name: space.name_of(m.id)?,
                        metrics: m,
                    })
                })
                .collect::<Result<_>>()?,
            all: &self.all,
            known: &self.known,
            unknown: &self.unknown,
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    /// Percent table, one decimal, `-` for undefined cells.
    pub fn to_csv(&self, space: &LabelSpace) -> Result<String> {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{:.1}", x * 100.0),
            None => "-".to_string(),
        };
        let mut out = String::from("class,iou,acc\n");
        for m in &self.per_class {
            out.push_str(&format!(
                "{},{},{}\n",
                space.name_of(m.id)?,
                cell(m.iou),
                cell(m.acc)
            ));
        }
        out.push_str(&format!(
            "mean (all),{},{}\n",
            cell(self.all.miou),
            cell(self.all.macc)
        ));
        out.push_str(&format!(
            "mean (known),{},{}\n",
            cell(self.known.miou),
            cell(self.known.macc)
        ));
        out.push_str(&format!(
            "mean (unknown),{},{}\n",
            cell(self.unknown.miou),
            cell(self.unknown.macc)
        ));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_space::IGNORE_ID;
    use crate::rng::SplitMix64;

    fn space2() -> LabelSpace {
        LabelSpace::new("t", vec!["a".into(), "b".into()], Some(IGNORE_ID)).unwrap()
    }

    #[test]
    fn worked_two_class_example() {
        // counts = [[3,1],[2,4]]
        let space = space2();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(
            5,
            2,
            vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
        )
        .unwrap();
        let pred = SegmentationMap::from_labels(
            5,
            2,
            vec![0, 0, 0, 1, 0, 0, 1, 1, 1, 1],
        )
        .unwrap();
        cm.accumulate(&gt, &pred).unwrap();
        assert_eq!(cm.count(0, 0), 3);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 2);
        assert_eq!(cm.count(1, 1), 4);
        let per = cm.per_class();
        assert!((per[0].iou.unwrap() - 3.0 / 6.0).abs() < 1e-15);
        assert!((per[0].acc.unwrap() - 3.0 / 4.0).abs() < 1e-15);
        assert!((per[1].iou.unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert!((per[1].acc.unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(cm.total(), 10);
    }

    #[test]
    fn gt_ignore_skipped_pred_ignore_counts_against() {
        let space = space2();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(2, 2, vec![IGNORE_ID, 0, 0, 1]).unwrap();
        let pred = SegmentationMap::from_labels(2, 2, vec![0, IGNORE_ID, 0, 1]).unwrap();
        cm.accumulate(&gt, &pred).unwrap();
        // Pixel 0 skipped entirely; pixel 1 unassigned for class 0.
        assert_eq!(cm.total(), 3);
        assert_eq!(cm.unassigned(0), 1);
        let per = cm.per_class();
        // class a: tp=1, fn=1 (unassigned), fp=0.
        assert!((per[0].iou.unwrap() - 0.5).abs() < 1e-15);
        assert!((per[0].acc.unwrap() - 0.5).abs() < 1e-15);
        assert!((per[1].iou.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_undefined_and_excluded() {
        let space = LabelSpace::new(
            "t",
            vec!["a".into(), "b".into(), "c".into()],
            Some(IGNORE_ID),
        )
        .unwrap();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(2, 1, vec![0, 0]).unwrap();
        let pred = SegmentationMap::from_labels(2, 1, vec![0, 1]).unwrap();
        cm.accumulate(&gt, &pred).unwrap();
        let per = cm.per_class();
        // b was predicted but never true: IoU defined (0), acc undefined.
        assert_eq!(per[1].iou, Some(0.0));
        assert_eq!(per[1].acc, None);
        // c appears nowhere: fully undefined.
        assert_eq!(per[2].iou, None);
        assert_eq!(per[2].acc, None);
        let report = cm.split_report(&BTreeSet::from([0, 1, 2]));
        assert_eq!(report.all.iou_defined, 2);
        assert_eq!(report.all.acc_defined, 1);
        // mIoU over {a: 0.5, b: 0.0}; mAcc over {a: 0.5}.
        assert!((report.all.miou.unwrap() - 0.25).abs() < 1e-15);
        assert!((report.all.macc.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_with_all_known_mirrors_all() {
        let space = space2();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(2, 2, vec![0, 0, 1, 1]).unwrap();
        let pred = SegmentationMap::from_labels(2, 2, vec![0, 1, 1, 1]).unwrap();
        cm.accumulate(&gt, &pred).unwrap();
        let report = cm.split_report(&BTreeSet::from([0, 1]));
        assert_eq!(report.known, report.all);
        assert_eq!(report.unknown.classes, 0);
        assert_eq!(report.unknown.miou, None);
        assert_eq!(report.unknown.macc, None);
    }

    #[test]
    fn merge_equals_sequential_accumulation() {
        let space = space2();
        let mut rng = SplitMix64::new(5);
        let mut seq = ConfusionMatrix::new(&space);
        let mut parts = Vec::new();
        for _ in 0..4 {
            let labels = |rng: &mut SplitMix64| -> Vec<ClassId> {
                (0..64)
                    .map(|_| match rng.next_u64() % 5 {
                        0 | 1 => 0,
                        2 | 3 => 1,
                        _ => IGNORE_ID,
                    })
                    .collect()
            };
            let gt = SegmentationMap::from_labels(8, 8, labels(&mut rng)).unwrap();
            let pred = SegmentationMap::from_labels(8, 8, labels(&mut rng)).unwrap();
            seq.accumulate(&gt, &pred).unwrap();
            let mut part = ConfusionMatrix::new(&space);
            part.accumulate(&gt, &pred).unwrap();
            parts.push(part);
        }
        // Merge in a scrambled order.
        let mut merged = ConfusionMatrix::new(&space);
        for i in [2, 0, 3, 1] {
            merged.merge(&parts[i]).unwrap();
        }
        assert_eq!(merged, seq);
    }

    #[test]
    fn nested_loop_oracle_equivalence() {
        let space = space2();
        let mut rng = SplitMix64::new(77);
        for _ in 0..20 {
            let labels = |rng: &mut SplitMix64| -> Vec<ClassId> {
                (0..256)
                    .map(|_| match rng.next_u64() % 6 {
                        0 | 1 => 0,
                        2 | 3 => 1,
                        4 => IGNORE_ID,
                        _ => 0,
                    })
                    .collect()
            };
            let gt_l = labels(&mut rng);
            let pred_l = labels(&mut rng);
            // Oracle: direct nested loop over pixels, no shared code.
            let mut oracle = [[0u64; 3]; 2];
            for (&g, &p) in gt_l.iter().zip(&pred_l) {
                if g == IGNORE_ID {
                    continue;
                }
                let col = if p == IGNORE_ID { 2 } else { usize::from(p) };
                oracle[usize::from(g)][col] += 1;
            }
            let gt = SegmentationMap::from_labels(16, 16, gt_l).unwrap();
            let pred = SegmentationMap::from_labels(16, 16, pred_l).unwrap();
            let mut cm = ConfusionMatrix::new(&space);
            cm.accumulate(&gt, &pred).unwrap();
            for g in 0..2u16 {
                for p in 0..2u16 {
                    assert_eq!(cm.count(g, p), oracle[usize::from(g)][usize::from(p)]);
                }
                assert_eq!(cm.unassigned(g), oracle[usize::from(g)][2]);
            }
        }
    }

    #[test]
    fn out_of_space_ids_error() {
        let space = space2();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(2, 1, vec![0, 9]).unwrap();
        let pred = SegmentationMap::from_labels(2, 1, vec![0, 0]).unwrap();
        assert!(cm.accumulate(&gt, &pred).is_err());
        let gt = SegmentationMap::from_labels(2, 1, vec![0, 0]).unwrap();
        let pred = SegmentationMap::from_labels(2, 1, vec![0, 9]).unwrap();
        assert!(cm.accumulate(&gt, &pred).is_err());
    }

    #[test]
    fn renders_have_stable_shape() {
        let space = space2();
        let mut cm = ConfusionMatrix::new(&space);
        let gt = SegmentationMap::from_labels(2, 2, vec![0, 0, 1, 1]).unwrap();
        let pred = SegmentationMap::from_labels(2, 2, vec![0, 1, 1, 1]).unwrap();
        cm.accumulate(&gt, &pred).unwrap();
        let report = cm.split_report(&BTreeSet::from([0]));
        let csv = report.to_csv(&space).unwrap();
        assert!(csv.starts_with("class,iou,acc\n"));
        assert!(csv.contains("\nmean (known),"));
        let json = report.to_json(&space).unwrap();
        assert!(json.contains("\"per_class\""));
        assert!(json.contains("\"name\": \"a\""));
    }
}
