//! The eval command: score a directory of predicted label maps against
//! ground truth and write per-class and split reports.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use taxfuse_core::label_map::load_label_map_png;
use taxfuse_core::metrics::ConfusionMatrix;
use taxfuse_core::TaxonomyMapping;

use crate::dataset::list_stems;
use crate::fuse::{summary_line, write_report};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of predicted label PNGs.
    pub pred: PathBuf,

    /// Directory of ground-truth label PNGs with matching basenames.
    pub gt: PathBuf,

    /// Taxonomy mapping JSON; supplies the target space and known split.
    #[arg(long)]
    pub taxonomy: PathBuf,

    /// Where report files land.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads; 0 picks the core count.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

pub fn run(args: EvalArgs) -> Result<u8> {
    let mapping = TaxonomyMapping::load(&args.taxonomy)
        .with_context(|| format!("loading {}", args.taxonomy.display()))?;
    let target = mapping.target();

    let pred_stems: BTreeSet<String> = list_stems(&args.pred, "png")?.into_iter().collect();
    let gt_stems: BTreeSet<String> = list_stems(&args.gt, "png")?.into_iter().collect();
    if pred_stems.is_empty() || pred_stems.is_disjoint(&gt_stems) {
        bail!(
            "no shared basenames between {} and {}",
            args.pred.display(),
            args.gt.display()
        );
    }
    let only_pred: Vec<&String> = pred_stems.difference(&gt_stems).collect();
    let only_gt: Vec<&String> = gt_stems.difference(&pred_stems).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        bail!(
            "file lists differ: {} prediction(s) without ground truth (first: {:?}), \
             {} ground truth(s) without prediction (first: {:?})",
            only_pred.len(),
            only_pred.first(),
            only_gt.len(),
            only_gt.first(),
        );
    }

    let stems: Vec<&String> = pred_stems.iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .context("building worker pool")?;
    let matrices: Vec<Result<ConfusionMatrix>> = pool.install(|| {
        stems
            .par_iter()
            .map(|stem| {
                let pred_path = args.pred.join(format!("{stem}.png"));
                let gt_path = args.gt.join(format!("{stem}.png"));
                let pred = load_label_map_png(&pred_path)
                    .with_context(|| format!("loading {}", pred_path.display()))?;
                let gt = load_label_map_png(&gt_path)
                    .with_context(|| format!("loading {}", gt_path.display()))?;
                let mut cm = ConfusionMatrix::new(target);
                cm.accumulate(&gt, &pred)
                    .with_context(|| format!("scoring {stem}"))?;
                Ok(cm)
            })
            .collect()
    });

    let mut merged = ConfusionMatrix::new(target);
    for cm in matrices {
        merged.merge(&cm?)?;
    }
    let report = merged.split_report(mapping.known_split());

    std::fs::create_dir_all(&args.out)?;
    write_report(&report, target, &args.out)?;
    println!("scored {} image pairs on {}", stems.len(), target.name());
    println!("{}", summary_line(&report));
    Ok(0)
}
