//! Loading labelled sketches for the CLI and the service.
//!
//! A data path is either a directory of `<category>.ndjson` files in raw
//! QuickDraw form, or a preprocessed dataset cache written by `ingest`.

use std::path::Path;

use sketchxai_core::dataset::{Dataset, Sample, Split, SplitSizes};
use sketchxai_core::{quickdraw, Error, Result};

/// Loads up to `per_class` normalized, simplified sketches for each of
/// `categories`, labelled by position in that list.
pub fn load(path: &Path, categories: &[String], per_class: usize, epsilon: f64) -> Result<Dataset> {
    if path.is_file() {
        let cache = Dataset::load(path)?;
        return select(&cache, categories, per_class);
    }
    quickdraw::load_quickdraw(path, categories, per_class)?
        .dataset
        .preprocess(epsilon)
}

/// Relabels a cached dataset onto `categories`, keeping the first
/// `per_class` sketches of each in cache order.
pub fn select(cache: &Dataset, categories: &[String], per_class: usize) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (label, name) in categories.iter().enumerate() {
        let old = cache.category_index(name)?;
        let before = samples.len();
        samples.extend(
            cache
                .samples
                .iter()
                .filter(|s| s.sketch.label == Some(old))
                .take(per_class)
                .map(|s| {
                    let mut s = s.clone();
                    s.sketch.label = Some(label);
                    s
                }),
        );
        if samples.len() == before {
            return Err(Error::EmptyCategory(name.clone()));
        }
    }
    Ok(Dataset {
        categories: categories.to_vec(),
        samples,
    })
}

pub fn load_split(
    path: &Path,
    categories: &[String],
    sizes: SplitSizes,
    seed: u64,
    epsilon: f64,
) -> Result<Split> {
    let need = sizes.train + sizes.valid + sizes.test;
    load(path, categories, need, epsilon)?.split(sizes, seed)
}

/// Samples grouped by label, `0..n_classes`.
pub fn by_class(samples: &[Sample], n_classes: usize) -> Vec<Vec<Sample>> {
    let mut out = vec![Vec::new(); n_classes];
    for s in samples {
        if let Some(l) = s.sketch.label.filter(|&l| l < n_classes) {
            out[l].push(s.clone());
        }
    }
    out
}

/// Comma-separated category names; empty entries are dropped.
pub fn parse_list(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}
