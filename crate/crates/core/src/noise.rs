//! Synthetic noise images used as an extra "noise" training category.
//!
//! Gaussian noise is drawn on a low-resolution grid of
//! `ceil(w / 2^s) x ceil(h / 2^s)` cells per channel and upsampled by
//! nearest neighbour, so every aligned `2^s x 2^s` block is constant; `s = 0`
//! gives independent pixels. Draws are clipped to `[0, 255]` and rounded.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dims, Image, LabeledDataset, Provenance, SampleId};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    Gaussian {
        mean: f64,
        std: f64,
        #[serde(default)]
        scale: u32,
    },
    /// Independent integers uniform in `[0, 255]`.
    Uniform,
    /// One uniformly drawn colour per image, constant over every pixel.
    Solid,
    /// Each image draws `(mean, std, scale)` uniformly from the grid, then
    /// proceeds as Gaussian.
    Mixed {
        #[serde(default = "default_means")]
        means: Vec<f64>,
        #[serde(default = "default_stds")]
        stds: Vec<f64>,
        #[serde(default = "default_scales")]
        scales: Vec<u32>,
    },
}

fn default_means() -> Vec<f64> {
    vec![64.0, 127.0, 191.0]
}
fn default_stds() -> Vec<f64> {
    vec![30.0, 70.0, 110.0]
}
fn default_scales() -> Vec<u32> {
    vec![0, 1, 2]
}

impl NoiseKind {
    pub fn mixed_default() -> Self {
        NoiseKind::Mixed {
            means: default_means(),
            stds: default_stds(),
            scales: default_scales(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    /// Noise sample count as a multiple of the legitimate sample count.
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::config(format!("noise rate must be finite and > 0, got {}", self.rate)));
        }
        let max_scale = max_scale(dims);
        let check_scale = |s: u32| {
            if s > max_scale {
                Err(Error::config(format!(
                    "noise scale {s} too large for {}x{} images (max {max_scale})",
                    dims.width, dims.height
                )))
            } else {
                Ok(())
            }
        };
        let check_gauss = |mean: f64, std: f64| {
            if !mean.is_finite() || !(std.is_finite() && std >= 0.0) {
                Err(Error::config(format!("invalid gaussian noise mean {mean} / std {std}")))
            } else {
                Ok(())
            }
        };
        match &self.kind {
            NoiseKind::Gaussian { mean, std, scale } => {
                check_gauss(*mean, *std)?;
                check_scale(*scale)?;
            }
            NoiseKind::Mixed {
                means,
                stds,
                scales,
            } => {
                if means.is_empty() || stds.is_empty() || scales.is_empty() {
                    return Err(Error::config("mixed noise grid has an empty axis"));
                }
                for &m in means {
                    for &s in stds {
                        check_gauss(m, s)?;
                    }
                }
                scales.iter().try_for_each(|&s| check_scale(s))?;
            }
            NoiseKind::Uniform | NoiseKind::Solid => {}
        }
        Ok(())
    }

    /// Short label for reports, e.g. `gaussian(m=127,sd=70,s=0)x5`.
    pub fn describe(&self) -> String {
        let kind = match &self.kind {
            NoiseKind::Gaussian { mean, std, scale } => format!("gaussian(m={mean},sd={std},s={scale})"),
            NoiseKind::Uniform => "uniform".into(),
            NoiseKind::Solid => "solid".into(),
            NoiseKind::Mixed { .. } => "mixed".into(),
        };
        format!("{kind}x{}", self.rate)
    }
}

/// Largest scale whose blocks still fit: `floor(log2(min(w, h)))`.
pub fn max_scale(dims: Dims) -> u32 {
    dims.width.min(dims.height).max(1).ilog2()
}

/// `floor(rate * legit_count)`.
pub fn noise_count(rate: f64, legit_count: usize) -> usize {
    (rate * legit_count as f64).floor() as usize
}

/// `count` noise images, each labeled 0 in a single-category dataset named
/// `noise`, with ids `0..count`. Image `i` depends only on `(spec.seed, i)`.
pub fn generate(spec: &NoiseSpec, count: usize, dims: Dims) -> Result<LabeledDataset> {
    if count == 0 {
        return Err(Error::config("noise count must be positive"));
    }
    spec.validate(dims)?;
    let images = (0..count)
        .map(|i| generate_one(spec, i as u64, dims))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(
        dims,
        images,
        vec![0; count],
        (0..count as u64).collect(),
        vec!["noise".into()],
        Provenance::Noise,
    )
}

fn generate_one(spec: &NoiseSpec, index: u64, dims: Dims) -> Result<Image> {
    let mut rng = rng_from(spec.seed, &[0x4015e, index]);
    let pixels = match &spec.kind {
        NoiseKind::Gaussian { mean, std, scale } => gaussian_blocks(&mut rng, dims, *mean, *std, *scale),
        NoiseKind::Uniform => (0..dims.pixel_count()).map(|_| rng.random::<u8>()).collect(),
        NoiseKind::Solid => {
            let mut px = Vec::with_capacity(dims.pixel_count());
            for _ in 0..dims.channels {
                let v: u8 = rng.random();
                px.extend(std::iter::repeat_n(v, dims.width * dims.height));
            }
            px
        }
        NoiseKind::Mixed {
            means,
            stds,
            scales,
        } => {
            let mean = means[rng.random_range(0..means.len())];
            let std = stds[rng.random_range(0..stds.len())];
            let scale = scales[rng.random_range(0..scales.len())];
            gaussian_blocks(&mut rng, dims, mean, std, scale)
        }
    };
    Image::new(dims.width, dims.height, dims.channels, pixels)
}

fn gaussian_blocks<R: Rng>(rng: &mut R, dims: Dims, mean: f64, std: f64, scale: u32) -> Vec<u8> {
    let normal = Normal::new(mean, std).expect("validated parameters");
    let block = 1usize << scale;
    let (cw, ch) = (dims.width.div_ceil(block), dims.height.div_ceil(block));
    let mut pixels = Vec::with_capacity(dims.pixel_count());
    for _ in 0..dims.channels {
        let cells: Vec<u8> = (0..cw * ch)
            .map(|_| normal.sample(rng).clamp(0.0, 255.0).round() as u8)
            .collect();
        for y in 0..dims.height {
            for x in 0..dims.width {
                pixels.push(cells[(y / block) * cw + x / block]);
            }
        }
    }
    pixels
}

/// Appends `noise` to `legit` as a new last category named `noise`. Noise
/// ids continue after the largest legitimate id.
pub fn with_noise_category(legit: &LabeledDataset, noise: &LabeledDataset) -> Result<LabeledDataset> {
    let c = legit.category_count();
    let mut names = legit.category_names().to_vec();
    names.push("noise".into());
    let widened = legit.relabel_samples(&[], names)?;
    let first: SampleId = legit.max_id().map_or(0, |m| m + 1);
    let relabeled = LabeledDataset::new(
        noise.dims(),
        noise.images().to_vec(),
        vec![c; noise.len()],
        (0..noise.len() as u64).map(|i| first + i).collect(),
        widened.category_names().to_vec(),
        Provenance::Noise,
    )?;
    widened.concat(&relabeled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: f64, std: f64, scale: u32) -> NoiseSpec {
        NoiseSpec {
            kind: NoiseKind::Gaussian { mean, std, scale },
            rate: 1.0,
            seed: 5,
        }
    }

    #[test]
    fn degenerate_gaussian() {
        let ds = generate(&gauss(127.0, 0.0, 0), 10, Dims::new(8, 8, 3)).unwrap();
        assert!(ds.images().iter().all(|i| i.pixels().iter().all(|&p| p == 127)));
        assert_eq!(ds.category_names(), &["noise".to_string()]);
    }

    #[test]
    fn solid_images_are_constant_per_channel() {
        let spec = NoiseSpec {
            kind: NoiseKind::Solid,
            rate: 1.0,
            seed: 1,
        };
        let dims = Dims::new(4, 4, 3);
        for img in generate(&spec, 50, dims).unwrap().images() {
            for plane in img.pixels().chunks(16) {
                assert_eq!(plane.iter().max(), plane.iter().min());
            }
        }
    }

    #[test]
    fn counts() {
        assert_eq!(noise_count(5.0, 10_000), 50_000);
        assert_eq!(noise_count(1.0, 40_000), 40_000);
        assert_eq!(noise_count(0.5, 3), 1);
    }

    #[test]
    fn scale_limits() {
        let dims = Dims::new(8, 8, 1);
        assert_eq!(max_scale(dims), 3);
        assert!(generate(&gauss(127.0, 70.0, 3), 1, dims).is_ok());
        assert!(matches!(generate(&gauss(127.0, 70.0, 4), 1, dims), Err(Error::Config(_))));
        assert!(generate(&gauss(127.0, 70.0, 0), 0, dims).is_err());
        let bad_rate = NoiseSpec { rate: 0.0, ..gauss(1.0, 1.0, 0) };
        assert!(generate(&bad_rate, 1, dims).is_err());
    }

    #[test]
    fn non_divisible_dims_keep_blocks() {
        let dims = Dims::new(6, 5, 2);
        let ds = generate(&gauss(100.0, 60.0, 2), 5, dims).unwrap();
        for img in ds.images() {
            for c in 0..2 {
                for y in 0..5 {
                    for x in 0..6 {
                        assert_eq!(img.get(c, y, x), img.get(c, y / 4 * 4, x / 4 * 4));
                    }
                }
            }
        }
    }

    #[test]
    fn attaching_noise_category() {
        let dims = Dims::new(2, 2, 1);
        let legit = LabeledDataset::new(
            dims,
            vec![Image::new(2, 2, 1, vec![1; 4]).unwrap(); 2],
            vec![0, 1],
            vec![10, 20],
            vec!["a".into(), "b".into()],
            Provenance::Train,
        )
        .unwrap();
        let spec = NoiseSpec {
            kind: NoiseKind::Uniform,
            rate: 5.0,
            seed: 0,
        };
        let noise = generate(&spec, noise_count(spec.rate, legit.len()), dims).unwrap();
        let all = with_noise_category(&legit, &noise).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(all.category_count(), 3);
        assert_eq!(&all.ids()[..3], &[10, 20, 21]);
        assert!(all.labels()[2..].iter().all(|&l| l == 2));
    }

    #[test]
    fn json_shape() {
        let spec: NoiseSpec =
            serde_json::from_str(r#"{"kind":"gaussian","mean":127,"std":70,"scale":1,"rate":5}"#).unwrap();
        assert_eq!(spec, NoiseSpec { seed: 0, rate: 5.0, ..gauss(127.0, 70.0, 1) });
        let mixed: NoiseSpec = serde_json::from_str(r#"{"kind":"mixed","rate":1}"#).unwrap();
        assert_eq!(mixed.kind, NoiseKind::mixed_default());
    }
}
