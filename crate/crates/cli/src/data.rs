//! On-disk dataset layout and multi-image tensor files.
//!
//! A dataset directory holds `manifest.json`, `image_{i}.sdt` (`[1, H, W]`),
//! `rater_{i}_{k}.sdt` (`[C, H, W]`, hard) and, for synthetic data,
//! `clean_{i}.sdt`.

use std::fs;
use std::path::{Path, PathBuf};

use dicesm::io::{read_tensor, write_tensor};
use dicesm::training::{generate_synthetic, Dataset, SynthSpec};
use dicesm::{Error, LabelField, RaterStack, Result, TensorF};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_images: usize,
    pub k_raters: usize,
    pub classes: usize,
    pub has_clean: bool,
    /// The generator settings, for synthetic data.
    pub synth: Option<SynthSpec>,
}

/// Where `train` and `distill` read their data from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSpec),
    Dir(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synth(spec) => generate_synthetic(spec),
            DataSource::Dir(dir) => read_dataset(dir),
        }
    }
}

fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("image_{i:04}.sdt"))
}

fn rater_path(dir: &Path, i: usize, k: usize) -> PathBuf {
    dir.join(format!("rater_{i:04}_{k}.sdt"))
}

fn clean_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("clean_{i:04}.sdt"))
}

pub fn write_dataset(dir: &Path, data: &Dataset, synth: Option<&SynthSpec>) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    for (i, (img, stack)) in data.images.iter().zip(&data.raters).enumerate() {
        write_tensor(image_path(dir, i), img)?;
        for (k, r) in stack.raters().iter().enumerate() {
            write_tensor(rater_path(dir, i, k), r.tensor())?;
        }
    }
    if let Some(clean) = &data.clean {
        for (i, c) in clean.iter().enumerate() {
            write_tensor(clean_path(dir, i), c.tensor())?;
        }
    }
    let manifest = DatasetManifest {
        n_images: data.len(),
        k_raters: data.raters[0].len(),
        classes: data.classes,
        has_clean: data.clean.is_some(),
        synth: synth.cloned(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut images = Vec::with_capacity(manifest.n_images);
    let mut raters = Vec::with_capacity(manifest.n_images);
    for i in 0..manifest.n_images {
        images.push(read_tensor(image_path(dir, i))?);
        let stack = (0..manifest.k_raters)
            .map(|k| LabelField::hard(read_tensor(rater_path(dir, i, k))?))
            .collect::<Result<Vec<_>>>()?;
        raters.push(RaterStack::new(stack)?);
    }
    let mut data = Dataset::new(images, raters)?;
    if manifest.has_clean {
        data.clean = Some(
            (0..manifest.n_images)
                .map(|i| LabelField::hard(read_tensor(clean_path(dir, i))?))
                .collect::<Result<_>>()?,
        );
    }
    Ok(data)
}

/// Splits a `[C, H, W]` tensor into one image or an `[N, C, H, W]` tensor
/// into `N`.
pub fn unstack(t: TensorF) -> Result<Vec<TensorF>> {
    match t.dims().len() {
        3 => Ok(vec![t]),
        4 => {
            let dims = t.dims().to_vec();
            let inner: Vec<usize> = dims[1..].to_vec();
            let step: usize = inner.iter().product();
            t.data()
                .chunks(step)
                .map(|c| TensorF::new(inner.clone(), c.to_vec()))
                .collect()
        }
        _ => Err(Error::BadDims(t.dims().to_vec())),
    }
}

/// Inverse of [`unstack`]; a single image stays rank 3.
pub fn stack(parts: Vec<TensorF>) -> Result<TensorF> {
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("one part"));
    }
    let inner = parts[0].dims().to_vec();
    let mut dims = vec![parts.len()];
    dims.extend(&inner);
    let mut data = Vec::with_capacity(dims.iter().product());
    for p in parts {
        if p.dims() != inner.as_slice() {
            return Err(Error::ShapeMismatch {
                left: inner,
                right: p.dims().to_vec(),
            });
        }
        data.extend(p.into_data());
    }
    TensorF::new(dims, data)
}
