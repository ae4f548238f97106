//! The sweep command: decide every region once, then render and score the
//! dataset at several confidence thresholds. Feature extraction is the
//! expensive part, so reusing the decisions makes the whole sweep cost
//! roughly one fuse run.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use taxfuse_core::fusion::{decide_image, render_at_threshold, FusionConfig};
use taxfuse_core::label_map::load_label_map_png;
use taxfuse_core::metrics::ConfusionMatrix;
use taxfuse_core::proposals::load_proposals;

use crate::chart;
use crate::dataset::load_rgb;
use crate::fuse::{resolve_pipeline, PipelineFlags, Resolved, SnapshotConfig};

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// Dataset directory; gt/ is required for scoring.
    pub dataset: PathBuf,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Comma-separated thresholds, each in [0, 1].
    #[arg(long, default_value = "0.4,0.5,0.6,0.7,0.8,0.9")]
    pub thresholds: String,

    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    threshold: f64,
    miou: Option<f64>,
    macc: Option<f64>,
    reassigned: usize,
}

#[derive(Debug, Serialize)]
struct SweepDoc<'a> {
    config: &'a SnapshotConfig,
    rows: &'a [SweepRow],
}

fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let t: f64 = token
            .parse()
            .with_context(|| format!("threshold {token:?} is not a number"))?;
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            bail!("threshold {t} outside [0, 1]");
        }
        out.push(t);
    }
    if out.is_empty() {
        bail!("no thresholds given");
    }
    Ok(out)
}

pub fn run(args: SweepArgs) -> Result<u8> {
    let thresholds = parse_thresholds(&args.thresholds)?;
    // The sweep overrides the render threshold per row; the snapshot keeps
    // the config default so the record shows what a plain run would use.
    let default_threshold = FusionConfig::default().confidence_threshold;
    let resolved = resolve_pipeline(&args.dataset, &args.pipeline, default_threshold)?;
    if !resolved.dataset.has_gt() {
        bail!("sweep needs gt/ in the dataset to score each threshold");
    }

    let basenames = resolved.dataset.basenames()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.pipeline.workers)
        .build()
        .context("building worker pool")?;
    let per_image: Vec<Result<Vec<(ConfusionMatrix, usize)>>> = pool.install(|| {
        basenames
            .par_iter()
            .map(|base| {
                sweep_image(&resolved, base, &thresholds)
                    .with_context(|| format!("sweeping {base}"))
            })
            .collect()
    });

    let target = resolved.mapping.target();
    let mut matrices: Vec<ConfusionMatrix> = thresholds
        .iter()
        .map(|_| ConfusionMatrix::new(target))
        .collect();
    let mut reassigned = vec![0usize; thresholds.len()];
    for image_rows in per_image {
        for (i, (cm, count)) in image_rows?.iter().enumerate() {
            matrices[i].merge(cm)?;
            reassigned[i] += count;
        }
    }

    let rows: Vec<SweepRow> = thresholds
        .iter()
        .zip(&matrices)
        .zip(&reassigned)
        .map(|((&threshold, cm), &count)| {
            let report = cm.split_report(resolved.mapping.known_split());
            SweepRow {
                threshold,
                miou: report.all.miou,
                macc: report.all.macc,
                reassigned: count,
            }
        })
        .collect();

    std::fs::create_dir_all(&args.out)?;
    let cell = |v: Option<f64>| match v {
        Some(x) => format!("{:.1}", x * 100.0),
        None => "-".to_string(),
    };
    let mut csv = String::from("threshold,miou,macc,reassigned\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.threshold,
            cell(row.miou),
            cell(row.macc),
            row.reassigned
        ));
    }
    std::fs::write(args.out.join("sweep.csv"), &csv)?;

    let doc = SweepDoc {
        config: &resolved.snapshot,
        rows: &rows,
    };
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    std::fs::write(args.out.join("sweep.json"), json)?;

    let chart_rows: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| match (r.miou, r.macc) {
            (Some(i), Some(a)) => Some((r.threshold, i * 100.0, a * 100.0)),
            _ => None,
        })
        .collect();
    if !chart_rows.is_empty() {
        std::fs::create_dir_all(args.out.join("charts"))?;
        chart::sweep_chart(&args.out.join("charts").join("sweep.png"), &chart_rows)?;
    }

    print!("{csv}");
    Ok(0)
}

fn sweep_image(
    resolved: &Resolved,
    base: &str,
    thresholds: &[f64],
) -> Result<Vec<(ConfusionMatrix, usize)>> {
    let dataset = &resolved.dataset;
    let mapping = &resolved.mapping;
    let image = load_rgb(&dataset.image(base))?;
    let pred = load_label_map_png(&dataset.pred(base))?;
    let proposals = load_proposals(&dataset.proposals(base), image.width(), image.height())?;
    let gt = load_label_map_png(&dataset.gt(base))?;
    let backend = resolved.backends.for_image(base)?;
    let set = decide_image(
        &image,
        &pred,
        proposals,
        mapping,
        &resolved.bank,
        backend.as_dyn(),
        &resolved.config,
    )?;
    thresholds
        .iter()
        .map(|&t| {
            let rendered = render_at_threshold(&pred, mapping, &set, t)?;
            let mut cm = ConfusionMatrix::new(mapping.target());
            cm.accumulate(&gt, &rendered)?;
            Ok((cm, set.reassigned_count_at(t)))
        })
        .collect()
}
