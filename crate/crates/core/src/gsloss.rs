//! Gaussian-splatting training loss and per-client loss prediction.
//!
//! The photometric loss is `(1 - lambda) * L1 + lambda * (1 - SSIM)` with L1
//! the mean absolute difference and SSIM evaluated from global image
//! statistics (a single window covering the whole image).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scenario::{ClientDataset, LossSource};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.2, c1: 0.01f64.powi(2), c2: 0.03f64.powi(2) }
    }
}

impl LossConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }
}

pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn ssim(a: &Image, b: &Image, cfg: &LossConfig) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a.data()), mean(b.data()));
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    va /= n;
    vb /= n;
    cov /= n;
    Ok((2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2) / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2)))
}

pub fn gs_loss(a: &Image, b: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok((1.0 - cfg.lambda) * l1_loss(a, b)? + cfg.lambda * (1.0 - ssim(a, b, cfg)?))
}

/// Loss of one dataset image against its rendered counterpart, or its
/// precomputed value.
pub fn image_loss(dataset: &ClientDataset, index: usize, cfg: &LossConfig) -> Result<f64> {
    match &dataset.losses {
        LossSource::Rendered(r) => gs_loss(&r[index], &dataset.images[index], cfg),
        LossSource::Precomputed(l) => Ok(l[index]),
        LossSource::Unavailable => Err(Error::MissingCounterpart { index }),
    }
}

/// Summed loss `psi_k` over the pilot images.
pub fn pilot_loss(dataset: &ClientDataset, pilot: &[usize], cfg: &LossConfig) -> Result<f64> {
    pilot.iter().map(|&i| image_loss(dataset, i, cfg)).sum()
}

/// Summed loss over the whole dataset (the quantity being predicted).
pub fn total_loss(dataset: &ClientDataset, cfg: &LossConfig) -> Result<f64> {
    (0..dataset.len()).map(|i| image_loss(dataset, i, cfg)).sum()
}

/// `pi_k = |D_k| / |pilot| * psi_k`.
pub fn predict_client_loss(psi: f64, dataset_size: usize, pilot_size: usize) -> Result<f64> {
    if pilot_size == 0 {
        return Err(Error::field("pilot_size", "pilot set is empty"));
    }
    if dataset_size < pilot_size {
        return Err(Error::field("pilot_size", "pilot larger than the dataset"));
    }
    Ok(dataset_size as f64 / pilot_size as f64 * psi)
}
