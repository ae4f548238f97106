//! The fuse command: run the reassignment pipeline over a dataset directory
//! and write pseudo-labels, decision logs, reports, and a manifest that can
//! replay the job.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taxfuse_core::fusion::{fuse_image, outcome_to_log_line, FusionConfig, RegionOutcome};
use taxfuse_core::label_map::{load_label_map_png, save_label_map_png, Palette};
use taxfuse_core::metrics::{ConfusionMatrix, SplitReport};
use taxfuse_core::proposals::load_proposals;
use taxfuse_core::text_bank::TextFeatureBank;
use taxfuse_core::visual::PaddingPolicy;
use taxfuse_core::TaxonomyMapping;

use crate::backends::{resolve_bank, Backends};
use crate::chart;
use crate::dataset::{load_rgb, Dataset};

/// Flags shared by every command that executes the pipeline.
#[derive(Debug, clap::Args)]
pub struct PipelineFlags {
    /// Taxonomy mapping JSON (default: taxonomy.json in the dataset).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,

    /// Context description JSON (default: contexts.json in the dataset).
    #[arg(long)]
    pub contexts: Option<PathBuf>,

    /// Text feature bank cache; wins over --contexts when present
    /// (default: bank.feat in the dataset).
    #[arg(long)]
    pub bank: Option<PathBuf>,

    /// One of synthetic[:spec.json], adapter[:endpoint], precomputed:<dir>.
    #[arg(long, default_value = "synthetic")]
    pub backend: String,

    /// Per-source-class crop scale file (default: two uniform scales).
    #[arg(long)]
    pub padding_policy: Option<PathBuf>,

    /// Softmax temperature over candidate similarities.
    #[arg(long, default_value_t = 100.0)]
    pub temperature: f64,

    /// Drop proposals smaller than this many pixels.
    #[arg(long, default_value_t = 0)]
    pub min_area: u64,

    /// Keep at most this many proposals per image, largest first.
    #[arg(long)]
    pub max_proposals: Option<usize>,

    /// Zero out-of-mask pixels in the local crop before encoding.
    #[arg(long)]
    pub masked_local: bool,

    /// Worker threads; 0 picks the core count.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, clap::Args)]
pub struct FuseArgs {
    /// Dataset directory with images/, preds/, proposals/ (gt/ optional).
    pub dataset: Option<PathBuf>,

    /// Replay a previous run from its manifest instead of flags.
    #[arg(long, conflicts_with = "dataset")]
    pub from_manifest: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Palette JSON for pseudo-label PNGs (default: palette.json in the
    /// dataset, else generated colors).
    #[arg(long)]
    pub palette: Option<PathBuf>,

    /// Reassign a region only when confidence strictly exceeds this.
    #[arg(long, default_value_t = 0.5)]
    pub confidence_threshold: f64,

    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

/// Path plus content hash, so a replay can refuse silently drifted inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

/// Everything that determined the run's outputs. The manifest embeds this
/// so `fuse --from-manifest` reproduces the job byte for byte (given the
/// same backend).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotConfig {
    pub dataset: String,
    pub backend: String,
    pub backend_name: String,
    pub taxonomy: FileStamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<FileStamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<FileStamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding_policy: Option<FileStamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<FileStamp>,
    pub confidence_threshold: f64,
    pub softmax_temperature: f64,
    pub epsilon: f64,
    pub min_area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_proposals: Option<usize>,
    pub masked_local: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageStat {
    pub name: String,
    pub regions: usize,
    pub reassigned: usize,
    pub failed_regions: usize,
    pub coverage: f64,
    pub millis: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFailure {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: SnapshotConfig,
    pub images: Vec<ImageStat>,
    pub failures: Vec<ImageFailure>,
    pub artifacts: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn stamp(path: &Path) -> Result<FileStamp> {
    let canon = path
        .canonicalize()
        .with_context(|| format!("resolving {}", path.display()))?;
    Ok(FileStamp {
        sha256: sha256_file(&canon)?,
        path: canon.display().to_string(),
    })
}

fn verify_stamp(what: &str, s: &FileStamp) -> Result<PathBuf> {
    let path = PathBuf::from(&s.path);
    let now = sha256_file(&path).with_context(|| format!("verifying {what}"))?;
    if now != s.sha256 {
        bail!(
            "{what} {} changed since the manifest was written (sha256 {} -> {})",
            s.path,
            s.sha256,
            now
        );
    }
    Ok(path)
}

/// A pipeline run with every input resolved and loaded.
pub struct Resolved {
    pub dataset: Dataset,
    pub mapping: TaxonomyMapping,
    pub bank: TextFeatureBank,
    pub backends: Backends,
    pub config: FusionConfig,
    pub snapshot: SnapshotConfig,
}

pub fn resolve_pipeline(
    dataset_path: &Path,
    flags: &PipelineFlags,
    confidence_threshold: f64,
) -> Result<Resolved> {
    let dataset = Dataset::open(dataset_path)?;
    let taxonomy_path = flags
        .taxonomy
        .clone()
        .or_else(|| dataset.default_file("taxonomy.json"))
        .ok_or_else(|| {
            anyhow!("no taxonomy: pass --taxonomy or ship taxonomy.json with the dataset")
        })?;
    let mapping = TaxonomyMapping::load(&taxonomy_path)
        .with_context(|| format!("loading {}", taxonomy_path.display()))?;
    let backends = Backends::from_flag(&flags.backend, Some(&dataset))?;
    if flags.masked_local && matches!(backends, Backends::PerImage { .. }) {
        bail!(
            "--masked-local cannot run on precomputed features: stored vectors \
             are addressed by crop geometry alone, and a masked local crop is \
             not distinguishable that way"
        );
    }
    let (bank, bank_path, contexts_path) = resolve_bank(
        flags.bank.as_deref(),
        flags.contexts.as_deref(),
        &dataset,
        &mapping,
        &backends,
    )?;
    let padding = match &flags.padding_policy {
        Some(p) => PaddingPolicy::load(p, mapping.source())
            .with_context(|| format!("loading {}", p.display()))?,
        None => PaddingPolicy::default(),
    };
    let config = FusionConfig {
        confidence_threshold,
        softmax_temperature: flags.temperature,
        min_area: flags.min_area,
        max_proposals: flags.max_proposals,
        masked_local: flags.masked_local,
        padding,
        ..FusionConfig::default()
    };
    config.validate()?;
    let snapshot = SnapshotConfig {
        dataset: dataset
            .root()
            .canonicalize()
            .with_context(|| format!("resolving {}", dataset.root().display()))?
            .display()
            .to_string(),
        backend: flags.backend.clone(),
        backend_name: backends.name(),
        taxonomy: stamp(&taxonomy_path)?,
        contexts: contexts_path.as_deref().map(stamp).transpose()?,
        bank: bank_path.as_deref().map(stamp).transpose()?,
        padding_policy: flags.padding_policy.as_deref().map(stamp).transpose()?,
        palette: None,
        confidence_threshold: config.confidence_threshold,
        softmax_temperature: config.softmax_temperature,
        epsilon: config.epsilon,
        min_area: config.min_area,
        max_proposals: config.max_proposals,
        masked_local: config.masked_local,
    };
    Ok(Resolved {
        dataset,
        mapping,
        bank,
        backends,
        config,
        snapshot,
    })
}

fn resolve_from_manifest(manifest_path: &Path) -> Result<(Resolved, Option<Palette>)> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let snap = manifest.config;

    let dataset = Dataset::open(Path::new(&snap.dataset))?;
    let taxonomy_path = verify_stamp("taxonomy", &snap.taxonomy)?;
    let mapping = TaxonomyMapping::load(&taxonomy_path)?;
    let backends = Backends::from_flag(&snap.backend, Some(&dataset))?;

    let bank = match &snap.bank {
        Some(s) => {
            let path = verify_stamp("bank cache", s)?;
            let bank = taxfuse_core::text_bank::load_bank_cache(&path)?;
            bank.ensure_matches(mapping.target())?;
            bank
        }
        None => {
            let encoder = backends.text_encoder().ok_or_else(|| {
                anyhow!("manifest has no bank cache and the backend cannot encode text")
            })?;
            let contexts = match &snap.contexts {
                Some(s) => {
                    let path = verify_stamp("contexts", s)?;
                    taxfuse_core::label_space::ContextDescriptionSet::load(
                        &path,
                        mapping.target(),
                    )?
                }
                None => taxfuse_core::label_space::ContextDescriptionSet::identity(
                    mapping.target(),
                ),
            };
            taxfuse_core::text_bank::build_text_feature_bank(
                encoder,
                mapping.target(),
                &contexts,
            )?
        }
    };

    let padding = match &snap.padding_policy {
        Some(s) => {
            let path = verify_stamp("padding policy", s)?;
            PaddingPolicy::load(&path, mapping.source())?
        }
        None => PaddingPolicy::default(),
    };
    let palette = match &snap.palette {
        Some(s) => {
            let path = verify_stamp("palette", s)?;
            Some(Palette::load(&path)?)
        }
        None => None,
    };
    if snap.masked_local && matches!(backends, Backends::PerImage { .. }) {
        bail!("manifest asks for masked locals on precomputed features");
    }

    let config = FusionConfig {
        confidence_threshold: snap.confidence_threshold,
        softmax_temperature: snap.softmax_temperature,
        epsilon: snap.epsilon,
        min_area: snap.min_area,
        max_proposals: snap.max_proposals,
        masked_local: snap.masked_local,
        padding,
    };
    config.validate()?;
    Ok((
        Resolved {
            dataset,
            mapping,
            bank,
            backends,
            config,
            snapshot: snap,
        },
        palette,
    ))
}

fn resolve_palette(
    flag: Option<&Path>,
    resolved: &mut Resolved,
) -> Result<Palette> {
    let target = resolved.mapping.target();
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| resolved.dataset.default_file("palette.json"));
    match path {
        Some(p) => {
            let palette =
                Palette::load(&p).with_context(|| format!("loading {}", p.display()))?;
            palette.ensure_covers(target)?;
            resolved.snapshot.palette = Some(stamp(&p)?);
            Ok(palette)
        }
        None => Ok(Palette::distinct(target.name(), target.len())),
    }
}

pub fn run(args: FuseArgs) -> Result<u8> {
    let (resolved, palette) = match (&args.dataset, &args.from_manifest) {
        (Some(ds), None) => {
            let mut r = resolve_pipeline(ds, &args.pipeline, args.confidence_threshold)?;
            let palette = resolve_palette(args.palette.as_deref(), &mut r)?;
            (r, palette)
        }
        (None, Some(m)) => {
            let (r, palette) = resolve_from_manifest(m)?;
            let palette = match palette {
                Some(p) => p,
                None => {
                    Palette::distinct(r.mapping.target().name(), r.mapping.target().len())
                }
            };
            (r, palette)
        }
        _ => bail!("pass a dataset directory or --from-manifest, not both or neither"),
    };
    execute(&resolved, &palette, &args.out, args.pipeline.workers)
}

type ImageOutput = Result<(ImageStat, Option<ConfusionMatrix>)>;

fn execute(resolved: &Resolved, palette: &Palette, out: &Path, workers: usize) -> Result<u8> {
    let basenames = resolved.dataset.basenames()?;
    let eval_gt = resolved.dataset.has_gt();
    std::fs::create_dir_all(out.join("pseudo"))?;
    std::fs::create_dir_all(out.join("decisions"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let dataset = &resolved.dataset;
    let mapping = &resolved.mapping;
    let bank = &resolved.bank;
    let backends = &resolved.backends;
    let config = &resolved.config;
    let results: Vec<(String, ImageOutput)> = pool.install(|| {
        basenames
            .par_iter()
            .map(|base| {
                let res = process_image(
                    dataset, base, mapping, bank, backends, config, palette, out, eval_gt,
                );
                (base.clone(), res)
            })
            .collect()
    });

    let mut images = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut merged: Option<ConfusionMatrix> = None;
    for (name, res) in results {
        match res {
            Ok((stat, cm)) => {
                if let Some(cm) = cm {
                    match &mut merged {
                        Some(m) => m.merge(&cm)?,
                        None => merged = Some(cm),
                    }
                }
                images.push(stat);
            }
            Err(e) => failures.push(ImageFailure {
                name,
                error: format!("{e:#}"),
            }),
        }
    }

    let mut artifacts = vec![
        "pseudo".to_string(),
        "decisions".to_string(),
        "manifest.json".to_string(),
    ];
    let mut report_line = None;
    if let Some(cm) = &merged {
        let report = cm.split_report(mapping.known_split());
        write_report(&report, mapping.target(), out)?;
        artifacts.extend(
            ["report.json", "report.csv", "charts/per_class.png"]
                .map(str::to_string),
        );
        report_line = Some(summary_line(&report));
    }

    let manifest = RunManifest {
        config: resolved.snapshot.clone(),
        images,
        failures,
        artifacts,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    std::fs::write(out.join("manifest.json"), manifest_json)?;

    let regions: usize = manifest.images.iter().map(|s| s.regions).sum();
    let reassigned: usize = manifest.images.iter().map(|s| s.reassigned).sum();
    println!(
        "fused {} images: {} regions, {} reassigned",
        manifest.images.len(),
        regions,
        reassigned
    );
    if let Some(line) = report_line {
        println!("{line}");
    }
    if manifest.failures.is_empty() {
        Ok(0)
    } else {
        for f in &manifest.failures {
            eprintln!("failed: {}: {}", f.name, f.error);
        }
        eprintln!(
            "{} of {} images failed",
            manifest.failures.len(),
            basenames.len()
        );
        Ok(1)
    }
}

#[allow(clippy::too_many_arguments)]
fn process_image(
    dataset: &Dataset,
    base: &str,
    mapping: &TaxonomyMapping,
    bank: &TextFeatureBank,
    backends: &Backends,
    config: &FusionConfig,
    palette: &Palette,
    out: &Path,
    eval_gt: bool,
) -> Result<(ImageStat, Option<ConfusionMatrix>)> {
    let started = Instant::now();
    let image = load_rgb(&dataset.image(base))?;
    let pred = load_label_map_png(&dataset.pred(base))
        .with_context(|| format!("loading {}", dataset.pred(base).display()))?;
    let proposals = load_proposals(&dataset.proposals(base), image.width(), image.height())
        .with_context(|| format!("loading {}", dataset.proposals(base).display()))?;
    let backend = backends.for_image(base)?;
    let result = fuse_image(
        &image,
        &pred,
        proposals,
        mapping,
        bank,
        backend.as_dyn(),
        config,
    )?;

    let target_ignore = mapping.target().ignore_id();
    save_label_map_png(
        &result.pseudo_label,
        &out.join("pseudo").join(format!("{base}.png")),
        Some(palette),
        target_ignore,
    )?;
    let mut log = String::new();
    for outcome in &result.outcomes {
        log.push_str(&outcome_to_log_line(outcome, mapping.source(), mapping.target())?);
        log.push('\n');
    }
    std::fs::write(out.join("decisions").join(format!("{base}.jsonl")), log)?;

    let cm = if eval_gt {
        let gt = load_label_map_png(&dataset.gt(base))
            .with_context(|| format!("loading {}", dataset.gt(base).display()))?;
        let mut cm = ConfusionMatrix::new(mapping.target());
        cm.accumulate(&gt, &result.pseudo_label)?;
        Some(cm)
    } else {
        None
    };

    let failed_regions = result
        .outcomes
        .iter()
        .filter(|o| matches!(o, RegionOutcome::Failed { .. }))
        .count();
    Ok((
        ImageStat {
            name: base.to_string(),
            regions: result.outcomes.len(),
            reassigned: result.reassigned_count(),
            failed_regions,
            coverage: result.coverage_fraction(),
            millis: started.elapsed().as_millis() as u64,
        },
        cm,
    ))
}

pub fn write_report(
    report: &SplitReport,
    target: &taxfuse_core::LabelSpace,
    out: &Path,
) -> Result<()> {
    std::fs::write(out.join("report.json"), report.to_json(target)?)?;
    std::fs::write(out.join("report.csv"), report.to_csv(target)?)?;
    std::fs::create_dir_all(out.join("charts"))?;
    let labels: Vec<String> = report
        .per_class
        .iter()
        .map(|m| target.name_of(m.id).map(str::to_string))
        .collect::<taxfuse_core::Result<_>>()?;
    let values: Vec<f64> = report
        .per_class
        .iter()
        .map(|m| m.iou.map_or(f64::NAN, |v| v * 100.0))
        .collect();
    chart::bar_chart(&out.join("charts").join("per_class.png"), &labels, &values)?;
    Ok(())
}

pub fn summary_line(report: &SplitReport) -> String {
    let cell = |v: Option<f64>| match v {
        Some(x) => format!("{:.1}", x * 100.0),
        None => "-".to_string(),
    };
    format!(
        "mIoU {} mAcc {} (all) | mIoU {} mAcc {} (known) | mIoU {} mAcc {} (unknown)",
        cell(report.all.miou),
        cell(report.all.macc),
        cell(report.known.miou),
        cell(report.known.macc),
        cell(report.unknown.miou),
        cell(report.unknown.macc),
    )
}
