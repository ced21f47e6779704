//! Training pairs, the dataset manifest and the bicubic baseline.

use super::io::{read_image, write_png16, write_raw};
use super::kspace::kspace_truncate;
use super::phantom::{generate_phantom, PhantomSpec};
use crate::metrics::psnr;
use crate::model::bicubic_upsample;
use crate::tensor::Tensor;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One sample: target-contrast HR image, its k-space LR version and the
/// registered reference-contrast image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub reference: Tensor<f32>,
    pub scale: usize,
    pub seed: u64,
}

impl ImagePair {
    /// Builds a pair from registered HR and reference images, deriving the LR input.
    pub fn from_images(hr: Tensor<f32>, reference: Tensor<f32>, scale: usize, seed: u64) -> Result<Self> {
        if !matches!(scale, 2 | 4) {
            return Err(Error::Config(format!("scale must be 2 or 4, got {scale}")));
        }
        let (b, c, _, _) = hr.dims4()?;
        if b != 1 || c != 1 {
            return Err(Error::shape("image pair", format!("expected one [1, 1, H, W] image, got {:?}", hr.shape())));
        }
        if hr.shape() != reference.shape() {
            return Err(Error::shape("image pair", format!("hr {:?} and reference {:?} are not registered", hr.shape(), reference.shape())));
        }
        let lr = kspace_truncate(&hr, scale)?;
        Ok(ImagePair { hr, lr, reference, scale, seed })
    }

    /// Re-derives the LR image and checks it bit for bit.
    pub fn validate(&self) -> Result<()> {
        if self.hr.shape() != self.reference.shape() {
            return Err(Error::shape("image pair", "hr and reference shapes differ"));
        }
        if kspace_truncate(&self.hr, self.scale)? != self.lr {
            return Err(Error::format("image pair", "lr is not the k-space truncation of hr"));
        }
        Ok(())
    }
}

/// The pair generated from phantom seed `seed`.
pub fn make_pair(spec: &PhantomSpec, scale: usize, seed: u64) -> Result<ImagePair> {
    let (t2, t1) = generate_phantom(&PhantomSpec { seed, ..spec.clone() })?;
    ImagePair::from_images(t2.cast(), t1.cast(), scale, seed)
}

/// `n` pairs with seeds `spec.seed .. spec.seed + n`. Parallel and serial runs give identical bytes.
pub fn make_dataset(n: usize, spec: &PhantomSpec, scale: usize) -> Result<Vec<ImagePair>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    (0..n as u64).into_par_iter().map(|i| make_pair(spec, scale, spec.seed + i)).collect()
}

/// Mean PSNR of the clamped bicubic upsampling of each LR image against its HR target.
pub fn bicubic_baseline(pairs: &[ImagePair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let up = bicubic_upsample(&p.lr, p.scale)?.clamp(0.0, 1.0);
        total += psnr(&up, &p.hr, 1.0)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// One manifest line. Paths are relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub hr_path: PathBuf,
    pub ref_path: PathBuf,
    pub scale: usize,
    pub seed: u64,
}

/// Writes lossless `.ecf` images, 16-bit PNG previews and `manifest.json` into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, pairs: &[ImagePair]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let stem = format!("pair{i:04}");
        let (hr, rf) = (format!("{stem}_hr.ecf"), format!("{stem}_ref.ecf"));
        write_raw(dir.join(&hr), &p.hr)?;
        write_raw(dir.join(&rf), &p.reference)?;
        write_png16(dir.join(format!("{stem}_hr.png")), &p.hr.clamp(0.0, 1.0))?;
        write_png16(dir.join(format!("{stem}_ref.png")), &p.reference.clamp(0.0, 1.0))?;
        write_png16(dir.join(format!("{stem}_lr.png")), &p.lr.clamp(0.0, 1.0))?;
        entries.push(ManifestEntry { hr_path: hr.into(), ref_path: rf.into(), scale: p.scale, seed: p.seed });
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads every pair listed in a manifest. Images may be `.ecf` or `.png`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImagePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let hr = read_image(base.join(&e.hr_path))?;
            let reference = read_image(base.join(&e.ref_path))?;
            ImagePair::from_images(hr, reference, e.scale, e.seed)
        })
        .collect()
}
