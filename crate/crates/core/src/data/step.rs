//! One-dimensional step-function data: `y = 0` for `x <= 0.5`, else `1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::TensorBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub x: f64,
    pub y: f64,
}

impl StepSample {
    pub fn at(x: f64) -> Self {
        Self {
            x,
            y: step(x),
        }
    }
}

pub fn step(x: f64) -> f64 {
    if x <= 0.5 {
        0.0
    } else {
        1.0
    }
}

/// Half-open interval `[start, end)` with a sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl IntervalSpec {
    pub fn new(start: f64, end: f64, count: usize) -> Self {
        Self { start, end, count }
    }
}

/// Draws `count` points uniformly from each interval in turn.
pub fn make_step_dataset(spec: &[IntervalSpec], seed: u64) -> Result<Vec<StepSample>> {
    if spec.is_empty() {
        return Err(Error::config("step dataset needs at least one interval"));
    }
    for iv in spec {
        if !(0.0 <= iv.start && iv.start < iv.end && iv.end <= 1.0) {
            return Err(Error::config(format!(
                "interval [{}, {}) must satisfy 0 <= start < end <= 1",
                iv.start, iv.end
            )));
        }
        if iv.count == 0 {
            return Err(Error::config("interval sample count must be positive"));
        }
    }
    let mut out = Vec::with_capacity(spec.iter().map(|iv| iv.count).sum());
    for (k, iv) in spec.iter().enumerate() {
        let mut rng = rng_from(seed, &[0x57e9, k as u64]);
        for _ in 0..iv.count {
            let u: f64 = rng.random();
            let mut x = iv.start + (iv.end - iv.start) * u;
            if x >= iv.end {
                x = iv.end.next_down();
            }
            out.push(StepSample::at(x));
        }
    }
    Ok(out)
}

/// Inputs `[n, 1]` and targets `[n]` for a regressor.
pub fn to_tensors(samples: &[StepSample]) -> (TensorBuffer, Vec<f64>) {
    let xs = samples.iter().map(|s| s.x).collect();
    let ys = samples.iter().map(|s| s.y).collect();
    (
        TensorBuffer::new(vec![samples.len(), 1], xs).expect("finite inputs"),
        ys,
    )
}

/// The evaluation grid `{0, 0.001, ..., 1}`.
pub fn grid(points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points).map(|i| i as f64 / last).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals_and_labels() {
        let a = make_step_dataset(&[IntervalSpec::new(0.4, 0.6, 40_000)], 3).unwrap();
        assert_eq!(a.len(), 40_000);
        assert!(a.iter().all(|s| (0.4..0.6).contains(&s.x)));
        assert!(a.iter().all(|s| s.y == step(s.x)));

        let b = make_step_dataset(
            &[IntervalSpec::new(0.0, 0.1, 20_000), IntervalSpec::new(0.9, 1.0, 20_000)],
            3,
        )
        .unwrap();
        assert!(b[..20_000].iter().all(|s| s.y == 0.0));
        assert!(b[20_000..].iter().all(|s| s.y == 1.0));
        assert!(b[20_000..].iter().all(|s| s.x < 1.0));
    }

    #[test]
    fn boundary() {
        assert_eq!(StepSample::at(0.5).y, 0.0);
        assert_eq!(StepSample::at(0.5000001).y, 1.0);
    }

    #[test]
    fn seeded_and_validated() {
        let spec = [IntervalSpec::new(0.2, 0.3, 100)];
        let a = make_step_dataset(&spec, 9).unwrap();
        let b = make_step_dataset(&spec, 9).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.x.to_bits() == q.x.to_bits()));
        assert_ne!(a, make_step_dataset(&spec, 10).unwrap());
        assert!(make_step_dataset(&[], 0).is_err());
        assert!(make_step_dataset(&[IntervalSpec::new(0.5, 0.5, 1)], 0).is_err());
        assert!(make_step_dataset(&[IntervalSpec::new(0.0, 0.5, 0)], 0).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = grid(1001);
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1000], 1.0);
        assert!((g[500] - 0.5).abs() < 1e-15);
    }
}
