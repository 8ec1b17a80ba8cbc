//! Paired dataset trees.
//!
//! ```text
//! root/
//!   hazy/<stem>.png
//!   gt/<stem>.png
//!   split.txt          train: / val: sections, one stem per line
//!   params/<stem>.json optional haze parameters of synthetic pairs
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sgdn_core::data::{HazePair, PairSource, Split, SplitManifest};

use crate::error::{Error, Result};
use crate::io::{png_stems, read_png};

pub const HAZY_DIR: &str = "hazy";
pub const GT_DIR: &str = "gt";
pub const PARAMS_DIR: &str = "params";
pub const MANIFEST_FILE: &str = "split.txt";

pub fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(Error::Invalid(format!("unknown split `{other}` (expected train or val)"))),
    }
}

pub fn read_manifest(root: &Path) -> Result<SplitManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(Error::read(&path))?;
    SplitManifest::parse(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// Stems of `root` whose hazy and clean images both exist; orphans are errors.
pub fn matched_stems(root: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::Invalid(format!("dataset root {} does not exist", root.display())));
    }
    let hazy = png_stems(&root.join(HAZY_DIR))?;
    let gt = png_stems(&root.join(GT_DIR))?;
    if let Some(stem) = hazy.keys().find(|s| !gt.contains_key(*s)) {
        return Err(Error::Invalid(format!("hazy image `{stem}` has no counterpart in {GT_DIR}/")));
    }
    if let Some(stem) = gt.keys().find(|s| !hazy.contains_key(*s)) {
        return Err(Error::Invalid(format!("ground truth `{stem}` has no counterpart in {HAZY_DIR}/")));
    }
    Ok(hazy.into_iter().map(|(stem, h)| {
        let g = gt[&stem].clone();
        (stem, h, g)
    }).collect())
}

/// Loads one split in lexicographic stem order.
pub fn load_paired_dataset(root: &Path, split: Split) -> Result<Vec<HazePair>> {
    let pairs = matched_stems(root)?;
    let manifest = read_manifest(root)?;
    let mut wanted: Vec<&String> = manifest.stems(split).iter().collect();
    if wanted.is_empty() {
        return Err(Error::Invalid(format!("split `{}` of {} is empty", split.name(), root.display())));
    }
    wanted.sort();
    let mut out = Vec::with_capacity(wanted.len());
    for stem in wanted {
        let Ok(i) = pairs.binary_search_by(|p| p.0.as_str().cmp(stem)) else {
            return Err(Error::Invalid(format!("manifest stem `{stem}` has no image pair under {}", root.display())));
        };
        let (_, hp, gp) = &pairs[i];
        let (hazy, _) = read_png(hp)?;
        let (clean, _) = read_png(gp)?;
        if (hazy.height(), hazy.width()) != (clean.height(), clean.width()) {
            return Err(Error::Invalid(format!(
                "{stem}: hazy is {}x{} but ground truth is {}x{}",
                hazy.height(),
                hazy.width(),
                clean.height(),
                clean.width()
            )));
        }
        let source = if root.join(PARAMS_DIR).join(format!("{stem}.json")).is_file() {
            PairSource::Synthetic
        } else {
            PairSource::Real
        };
        out.push(HazePair::new(hazy, clean, stem.clone(), source)?);
    }
    Ok(out)
}
