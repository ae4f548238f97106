//! The precompute command: encode every region crop a fuse run would request
//! and store the raw vectors per image, so later runs can use the
//! `precomputed:` backend without a live encoder.
//!
//! Box enumeration must mirror the fuse pipeline exactly: same proposal
//! filtering, same majority vote, same padding scales. A mismatch surfaces
//! later as missing-feature region failures, not silent wrong answers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use taxfuse_core::geometry::PixelBox;
use taxfuse_core::label_map::load_label_map_png;
use taxfuse_core::precomputed::save_feature_file;
use taxfuse_core::proposals::{filter_proposals, load_proposals, majority_label};
use taxfuse_core::visual::{padded_regions, PaddingPolicy};
use taxfuse_core::TaxonomyMapping;

use crate::backends::Backends;
use crate::dataset::{load_rgb, Dataset};

#[derive(Debug, clap::Args)]
pub struct PrecomputeArgs {
    /// Dataset directory with images/, preds/, proposals/.
    pub dataset: PathBuf,

    /// Directory for the per-image .feat files.
    #[arg(long)]
    pub out: PathBuf,

    /// One of synthetic[:spec.json], adapter[:endpoint].
    #[arg(long, default_value = "synthetic")]
    pub backend: String,

    /// Taxonomy mapping JSON (default: taxonomy.json in the dataset).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,

    /// Per-source-class crop scale file (default: two uniform scales).
    #[arg(long)]
    pub padding_policy: Option<PathBuf>,

    /// Drop proposals smaller than this many pixels.
    #[arg(long, default_value_t = 0)]
    pub min_area: u64,

    /// Keep at most this many proposals per image, largest first.
    #[arg(long)]
    pub max_proposals: Option<usize>,

    /// Worker threads; 0 picks the core count.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

pub fn run(args: PrecomputeArgs) -> Result<u8> {
    let dataset = Dataset::open(&args.dataset)?;
    let taxonomy_path = args
        .taxonomy
        .clone()
        .or_else(|| dataset.default_file("taxonomy.json"))
        .ok_or_else(|| {
            anyhow!("no taxonomy: pass --taxonomy or ship taxonomy.json with the dataset")
        })?;
    let mapping = TaxonomyMapping::load(&taxonomy_path)
        .with_context(|| format!("loading {}", taxonomy_path.display()))?;
    let backends = Backends::from_flag(&args.backend, Some(&dataset))?;
    if matches!(backends, Backends::PerImage { .. }) {
        bail!("precompute needs a live encoder, not already-precomputed features");
    }
    let policy = match &args.padding_policy {
        Some(p) => PaddingPolicy::load(p, mapping.source())
            .with_context(|| format!("loading {}", p.display()))?,
        None => PaddingPolicy::default(),
    };

    let basenames = dataset.basenames()?;
    std::fs::create_dir_all(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .context("building worker pool")?;
    let counts: Vec<Result<usize>> = pool.install(|| {
        basenames
            .par_iter()
            .map(|base| {
                precompute_image(&args, &dataset, base, &mapping, &backends, &policy)
                    .with_context(|| format!("precomputing {base}"))
            })
            .collect()
    });

    let mut total = 0usize;
    for c in counts {
        total += c?;
    }
    println!(
        "stored {} region features for {} images in {}",
        total,
        basenames.len(),
        args.out.display()
    );
    Ok(0)
}

fn precompute_image(
    args: &PrecomputeArgs,
    dataset: &Dataset,
    base: &str,
    mapping: &TaxonomyMapping,
    backends: &Backends,
    policy: &PaddingPolicy,
) -> Result<usize> {
    let image = load_rgb(&dataset.image(base))?;
    let pred = load_label_map_png(&dataset.pred(base))?;
    let proposals = load_proposals(&dataset.proposals(base), image.width(), image.height())?;
    let proposals = filter_proposals(proposals, args.min_area, args.max_proposals);
    let source_ignore = mapping.source().ignore_id();

    let mut boxes: BTreeMap<String, PixelBox> = BTreeMap::new();
    for proposal in &proposals {
        let initial = match majority_label(&pred, proposal, source_ignore) {
            Ok(id) => id,
            // A fuse run records this proposal as a failed region and never
            // encodes it, so there is nothing to store.
            Err(_) => continue,
        };
        let is_ignore = Some(initial) == source_ignore;
        let candidates = if is_ignore {
            mapping.unlabeled_targets()
        } else {
            mapping.targets_for_source(initial)?
        };
        if candidates.is_empty() {
            continue;
        }
        let bbox = proposal.bbox();
        boxes.insert(bbox.key(), bbox);
        let scales = policy.scales_for((!is_ignore).then_some(initial));
        for b in padded_regions(bbox, scales, image.width(), image.height())? {
            boxes.insert(b.key(), b);
        }
    }

    let backend = backends.for_image(base)?;
    let backend = backend.as_dyn();
    let mut entries: Vec<(String, Vec<f64>)> = Vec::with_capacity(boxes.len());
    for (key, bbox) in &boxes {
        let raw = backend.encode_region_raw(&image, *bbox)?;
        entries.push((key.clone(), raw.as_slice().to_vec()));
    }
    save_feature_file(
        &args.out.join(format!("{base}.feat")),
        base,
        backend.dim(),
        backend.name(),
        &entries,
    )?;
    Ok(entries.len())
}
