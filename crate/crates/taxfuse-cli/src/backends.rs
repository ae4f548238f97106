//! Backend selection. `synthetic` and `adapter:` backends are shared across
//! workers; `precomputed:` opens one feature file per image.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use taxfuse_core::adapter::{resolve_endpoint, AdapterBackend};
use taxfuse_core::encoder::{EncoderBackend, SyntheticBackendSpec, SyntheticEncoder};
use taxfuse_core::label_space::ContextDescriptionSet;
use taxfuse_core::precomputed::PrecomputedBackend;
use taxfuse_core::text_bank::{build_text_feature_bank, load_bank_cache, TextFeatureBank};
use taxfuse_core::TaxonomyMapping;

use crate::dataset::Dataset;

pub enum Backends {
    Shared(Box<dyn EncoderBackend>),
    PerImage { dir: PathBuf },
}

pub enum ImageBackend<'a> {
    Borrowed(&'a dyn EncoderBackend),
    Owned(Box<dyn EncoderBackend>),
}

impl ImageBackend<'_> {
    pub fn as_dyn(&self) -> &dyn EncoderBackend {
        match self {
            ImageBackend::Borrowed(b) => *b,
            ImageBackend::Owned(b) => b.as_ref(),
        }
    }
}

impl Backends {
    /// `flag` is the --backend value: `synthetic[:spec.json]`,
    /// `adapter[:host:port]`, or `precomputed:<dir>`. A bare `synthetic`
    /// reads backend.json from the dataset root; a bare `adapter` takes the
    /// endpoint from the environment.
    pub fn from_flag(flag: &str, dataset: Option<&Dataset>) -> Result<Self> {
        let (kind, rest) = match flag.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (flag, None),
        };
        match kind {
            "synthetic" => {
                let path = match rest {
                    Some(p) => PathBuf::from(p),
                    None => dataset
                        .and_then(|d| d.default_file("backend.json"))
                        .ok_or_else(|| {
                            anyhow!("--backend synthetic needs backend.json in the dataset or an explicit synthetic:<path>")
                        })?,
                };
                let spec = SyntheticBackendSpec::load(&path)
                    .with_context(|| format!("loading {}", path.display()))?;
                Ok(Backends::Shared(Box::new(SyntheticEncoder::new(spec)?)))
            }
            "adapter" => {
                let endpoint = resolve_endpoint(rest)?;
                let backend = AdapterBackend::connect(&endpoint)
                    .with_context(|| format!("connecting to adapter at {endpoint}"))?;
                Ok(Backends::Shared(Box::new(backend)))
            }
            "precomputed" => {
                let dir = rest.ok_or_else(|| anyhow!("--backend precomputed needs a directory: precomputed:<dir>"))?;
                let dir = PathBuf::from(dir);
                if !dir.is_dir() {
                    bail!("feature directory {} does not exist", dir.display());
                }
                Ok(Backends::PerImage { dir })
            }
            other => bail!("unknown backend {other:?}; expected synthetic, adapter or precomputed"),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Backends::Shared(b) => b.name().to_string(),
            Backends::PerImage { dir } => format!("precomputed:{}", dir.display()),
        }
    }

    pub fn for_image(&self, base: &str) -> Result<ImageBackend<'_>> {
        match self {
            Backends::Shared(b) => Ok(ImageBackend::Borrowed(b.as_ref())),
            Backends::PerImage { dir } => Ok(ImageBackend::Owned(Box::new(
                PrecomputedBackend::for_image(dir, base)?,
            ))),
        }
    }

    /// A backend that can embed description strings, when there is one.
    pub fn text_encoder(&self) -> Option<&dyn EncoderBackend> {
        match self {
            Backends::Shared(b) => Some(b.as_ref()),
            Backends::PerImage { .. } => None,
        }
    }
}

/// The text bank comes from an explicit cache, the dataset's bank.feat, or a
/// fresh build over the context descriptions, in that order of preference.
pub fn resolve_bank(
    bank_flag: Option<&Path>,
    contexts_flag: Option<&Path>,
    dataset: &Dataset,
    mapping: &TaxonomyMapping,
    backends: &Backends,
) -> Result<(TextFeatureBank, Option<PathBuf>, Option<PathBuf>)> {
    let cache = bank_flag
        .map(Path::to_path_buf)
        .or_else(|| dataset.default_file("bank.feat"));
    if let Some(path) = cache {
        let bank = load_bank_cache(&path)
            .with_context(|| format!("loading bank cache {}", path.display()))?;
        bank.ensure_matches(mapping.target())?;
        return Ok((bank, Some(path), None));
    }
    let encoder = backends.text_encoder().ok_or_else(|| {
        anyhow!("this backend cannot encode text; pass --bank <cache> or ship bank.feat with the dataset")
    })?;
    let contexts_path = contexts_flag
        .map(Path::to_path_buf)
        .or_else(|| dataset.default_file("contexts.json"));
    let contexts = match &contexts_path {
        Some(p) => ContextDescriptionSet::load(p, mapping.target())
            .with_context(|| format!("loading {}", p.display()))?,
        None => ContextDescriptionSet::identity(mapping.target()),
    };
    let bank = build_text_feature_bank(encoder, mapping.target(), &contexts)?;
    Ok((bank, None, contexts_path))
}
