//! Procedural image sets whose categories are unions of separated clusters.
//!
//! Each category owns one major equivalence class, a smooth prototype image
//! around which most of its samples scatter, plus a few minor classes whose
//! prototypes sit close to the major prototype of a different category.
//! Samples from a minor class carry their own category's label while looking
//! like another category, which is exactly the situation that produces
//! consistently misclassified training samples. Images are smooth (pixels
//! strongly correlated) and quantized to `[0, 255]`, so the sets can stand in
//! for natural images when the real data is unavailable.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dims, Image, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub categories: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    /// Minor equivalence classes per category.
    pub minor_classes: usize,
    /// Probability that a sample comes from one of its category's minor classes.
    pub minor_fraction: f64,
    /// Weight of the foreign category's prototype in a minor-class prototype.
    pub minor_blend: f64,
    /// Side of the low-resolution grid that prototypes are interpolated from.
    pub prototype_cells: usize,
    /// Prototypes are pulled toward mid-gray: `127.5 + contrast * (field - 127.5)`.
    pub prototype_contrast: f64,
    /// Side of the grid the per-sample deformation field is interpolated from.
    pub warp_cells: usize,
    /// Amplitude of the per-sample smooth deformation field.
    pub deformation: f64,
    /// Std of the per-sample global brightness shift.
    pub brightness: f64,
    /// Std of independent per-pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            channels: 3,
            categories: 10,
            train_per_category: 500,
            test_per_category: 200,
            minor_classes: 2,
            minor_fraction: 0.1,
            minor_blend: 0.7,
            prototype_cells: 3,
            prototype_contrast: 0.25,
            warp_cells: 3,
            deformation: 50.0,
            brightness: 20.0,
            pixel_noise: 25.0,
            seed: 2019,
        }
    }
}

/// Generated train/test pair plus the equivalence class of every sample
/// (0 = major class, `k >= 1` = minor class `k - 1`).
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
    /// For each category, the category each minor class imitates.
    pub minor_hosts: Vec<Vec<usize>>,
}

impl SyntheticSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::config("synthetic image dims must be positive"));
        }
        if self.categories < 2 || self.categories > 255 {
            return Err(Error::config("synthetic categories must lie in 2..=255"));
        }
        if self.train_per_category == 0 || self.test_per_category == 0 {
            return Err(Error::config("synthetic per-category counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.minor_fraction) || !(0.0..=1.0).contains(&self.minor_blend) {
            return Err(Error::config("minor_fraction and minor_blend must lie in [0, 1]"));
        }
        if self.minor_fraction > 0.0 && self.minor_classes == 0 {
            return Err(Error::config("minor_fraction > 0 needs at least one minor class"));
        }
        if self.prototype_cells < 2 || self.warp_cells < 2 {
            return Err(Error::config("prototype_cells and warp_cells must be at least 2"));
        }
        if !(self.prototype_contrast > 0.0 && self.prototype_contrast <= 1.0) {
            return Err(Error::config("prototype_contrast must lie in (0, 1]"));
        }
        for (name, v) in [
            ("deformation", self.deformation),
            ("brightness", self.brightness),
            ("pixel_noise", self.pixel_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticSet> {
        self.validate()?;
        let n_px = self.width * self.height;
        let mut proto_rng = rng_from(self.seed, &[0x9807]);
        let (lo, hi) = self.prototype_range();
        let major: Vec<Vec<f64>> = (0..self.categories)
            .map(|_| self.smooth_field(&mut proto_rng, self.prototype_cells, lo, hi))
            .collect();
        let mut minor_hosts = Vec::with_capacity(self.categories);
        let mut prototypes = Vec::with_capacity(self.categories);
        for (c, own) in major.iter().enumerate() {
            let mut classes = vec![own.clone()];
            let mut hosts = Vec::new();
            for _ in 0..self.minor_classes {
                let host = (c + 1 + proto_rng.random_range(0..self.categories - 1)) % self.categories;
                let fresh = self.smooth_field(&mut proto_rng, self.prototype_cells, lo, hi);
                let blended = major[host]
                    .iter()
                    .zip(&fresh)
                    .map(|(h, f)| self.minor_blend * h + (1.0 - self.minor_blend) * f)
                    .collect();
                classes.push(blended);
                hosts.push(host);
            }
            prototypes.push(classes);
            minor_hosts.push(hosts);
        }
        debug_assert!(prototypes.iter().flatten().all(|p| p.len() == n_px * self.channels));

        let (train, train_classes) =
            self.split(&prototypes, self.train_per_category, 1, Provenance::Synthetic)?;
        let (test, test_classes) =
            self.split(&prototypes, self.test_per_category, 2, Provenance::Test)?;
        Ok(SyntheticSet {
            train,
            test,
            train_classes,
            test_classes,
            minor_hosts,
        })
    }

    fn split(
        &self,
        prototypes: &[Vec<Vec<f64>>],
        per_category: usize,
        stream: u64,
        provenance: Provenance,
    ) -> Result<(LabeledDataset, Vec<usize>)> {
        let n = per_category * self.categories;
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut classes = Vec::with_capacity(n);
        let pixel = Normal::new(0.0, self.pixel_noise).expect("validated std");
        let shift = Normal::new(0.0, self.brightness).expect("validated std");
        for i in 0..n {
            let mut rng = rng_from(self.seed, &[stream, i as u64]);
            let label = i % self.categories;
            let class = if rng.random::<f64>() < self.minor_fraction {
                1 + rng.random_range(0..self.minor_classes)
            } else {
                0
            };
            let base = &prototypes[label][class];
            let warp = self.smooth_field(&mut rng, self.warp_cells, -1.0, 1.0);
            let b = shift.sample(&mut rng);
            let pixels = base
                .iter()
                .zip(&warp)
                .map(|(&p, &w)| {
                    let v = p + b + self.deformation * w + pixel.sample(&mut rng);
                    v.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            images.push(Image::new(self.width, self.height, self.channels, pixels)?);
            labels.push(label);
            classes.push(class);
        }
        let ds = LabeledDataset::new(
            self.dims(),
            images,
            labels,
            (0..n as u64).collect(),
            (0..self.categories).map(|c| format!("category-{c}")).collect(),
            provenance,
        )?;
        Ok((ds, classes))
    }

    fn prototype_range(&self) -> (f64, f64) {
        let half = 127.5 * self.prototype_contrast;
        (127.5 - half, 127.5 + half)
    }

    /// Per-channel bilinear interpolation of a `cells x cells` grid of values
    /// drawn uniformly from `[lo, hi]`.
    fn smooth_field<R: Rng>(&self, rng: &mut R, cells: usize, lo: f64, hi: f64) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(w * h * self.channels);
        for _ in 0..self.channels {
            let grid: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(lo..=hi)).collect();
            for y in 0..h {
                let gy = coord(y, h, cells);
                for x in 0..w {
                    let gx = coord(x, w, cells);
                    out.push(bilinear(&grid, cells, gx, gy));
                }
            }
        }
        out
    }
}

fn coord(i: usize, len: usize, cells: usize) -> f64 {
    if len == 1 {
        0.0
    } else {
        i as f64 * (cells - 1) as f64 / (len - 1) as f64
    }
}

fn bilinear(grid: &[f64], cells: usize, gx: f64, gy: f64) -> f64 {
    let x0 = (gx.floor() as usize).min(cells - 2);
    let y0 = (gy.floor() as usize).min(cells - 2);
    let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
    let at = |x: usize, y: usize| grid[y * cells + x];
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_reproducible_and_seed_dependent() {
        let spec = SyntheticSpec {
            train_per_category: 20,
            test_per_category: 5,
            ..Default::default()
        };
        let a = spec.generate().unwrap();
        assert_eq!(a.train.len(), 200);
        assert_eq!(a.test.len(), 50);
        for c in 0..10 {
            assert_eq!(a.train.labels().iter().filter(|&&l| l == c).count(), 20);
        }
        let b = spec.generate().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let other = SyntheticSpec { seed: 1, ..spec.clone() }.generate().unwrap();
        assert_ne!(a.train, other.train);
        assert!(a.minor_hosts.iter().enumerate().all(|(c, h)| h.iter().all(|&q| q != c)));
        assert!(a.train_classes.iter().any(|&k| k > 0));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SyntheticSpec { categories: 1, ..Default::default() }.generate().is_err());
        assert!(SyntheticSpec { minor_fraction: 1.5, ..Default::default() }.generate().is_err());
        assert!(SyntheticSpec { prototype_cells: 1, ..Default::default() }.generate().is_err());
    }
}
