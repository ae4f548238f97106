//! Fixed dataset layout: images/, preds/, proposals/ and optionally gt/,
//! all pairing files by basename. Shared config files live at the root.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::RgbImage;

pub struct Dataset {
    root: PathBuf,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        for sub in ["images", "preds", "proposals"] {
            if !root.join(sub).is_dir() {
                bail!("{} has no {sub}/ directory", root.display());
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn has_gt(&self) -> bool {
        self.root.join("gt").is_dir()
    }

    /// Sorted image basenames; every one must have a prediction and a
    /// proposal file.
    pub fn basenames(&self) -> Result<Vec<String>> {
        let names = list_stems(&self.root.join("images"), "png")?;
        if names.is_empty() {
            bail!("{} has no images", self.root.display());
        }
        let mut missing = Vec::new();
        for base in &names {
            if !self.pred(base).is_file() {
                missing.push(format!("preds/{base}.png"));
            }
            if !self.proposals(base).is_file() {
                missing.push(format!("proposals/{base}.json"));
            }
        }
        if !missing.is_empty() {
            bail!(
                "{} is missing paired files: {}",
                self.root.display(),
                missing.join(", ")
            );
        }
        Ok(names)
    }

    pub fn image(&self, base: &str) -> PathBuf {
        self.root.join("images").join(format!("{base}.png"))
    }

    pub fn pred(&self, base: &str) -> PathBuf {
        self.root.join("preds").join(format!("{base}.png"))
    }

    pub fn proposals(&self, base: &str) -> PathBuf {
        self.root.join("proposals").join(format!("{base}.json"))
    }

    pub fn gt(&self, base: &str) -> PathBuf {
        self.root.join("gt").join(format!("{base}.png"))
    }

    /// Root-level config file, if present.
    pub fn default_file(&self, name: &str) -> Option<PathBuf> {
        let p = self.root.join(name);
        p.is_file().then_some(p)
    }
}

/// Sorted stems of `dir/*.ext`.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    Ok(img.to_rgb8())
}
