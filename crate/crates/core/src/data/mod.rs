//! Images as points of the discrete cube `[0, 255]^(w*h*d)`, labeled
//! datasets over them, and the dataset manipulations the experiments need.

pub mod cifar;
pub mod step;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SampleSource;
use crate::rng::rng_from;
use crate::tensor::TensorBuffer;

/// Stable identifier of a sample within its dataset.
pub type SampleId = u64;

/// Channel-planar, row-major 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Shape {
                expected: vec![channels, height, width],
                actual: vec![pixels.len()],
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            width: self.width,
            height: self.height,
            channels: self.channels,
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Pixel at (channel, row, column).
    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Real-valued view with every pixel divided by 255.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Per-sample tensor shape `[channels, height, width]`.
    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    Test,
    Synthetic,
    Noise,
}

/// Images with category labels and stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dims: Dims,
    images: Vec<Image>,
    labels: Vec<usize>,
    ids: Vec<SampleId>,
    category_names: Vec<String>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        dims: Dims,
        images: Vec<Image>,
        labels: Vec<usize>,
        ids: Vec<SampleId>,
        category_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != ids.len() {
            return Err(Error::config(format!(
                "dataset has {} images, {} labels and {} ids",
                images.len(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(img) = images.iter().find(|i| i.dims() != dims) {
            return Err(Error::config(format!(
                "image dims {:?} differ from dataset dims {dims:?}",
                img.dims()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= category_names.len()) {
            return Err(Error::config(format!(
                "label {l} outside {} categories",
                category_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(&dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::config(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            dims,
            images,
            labels,
            ids,
            category_names,
            provenance,
        })
    }

    /// Same dims, names and provenance; no samples.
    pub fn empty_like(&self) -> Self {
        Self {
            dims: self.dims,
            images: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
            category_names: self.category_names.clone(),
            provenance: self.provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn category_count(&self) -> usize {
        self.category_names.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Map from sample id to position.
    pub fn index_of_ids(&self) -> HashMap<SampleId, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Normalized batch of every sample, shape `[n, channels, height, width]`.
    pub fn to_batch(&self) -> TensorBuffer {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }

    /// Samples in the order given by `ids`.
    pub fn subset(&self, ids: &[SampleId]) -> Result<Self> {
        let index = self.index_of_ids();
        let positions = ids
            .iter()
            .map(|id| index.get(id).copied().ok_or(Error::Lookup(*id)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.empty_like();
        for p in positions {
            out.push_sample(self.images[p].clone(), self.labels[p], self.ids[p]);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = out.ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::config(format!("id {dup} requested twice")));
        }
        Ok(out)
    }

    fn push_sample(&mut self, image: Image, label: usize, id: SampleId) {
        self.images.push(image);
        self.labels.push(label);
        self.ids.push(id);
    }

    /// Rewrites every label through `mapping`, which must cover each label
    /// present. Categories not targeted by the mapping are simply unused.
    pub fn remap_labels(
        &self,
        mapping: &BTreeMap<usize, usize>,
        category_names: Vec<String>,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(self.len());
        for &l in &self.labels {
            let &new = mapping
                .get(&l)
                .ok_or_else(|| Error::config(format!("label mapping has no entry for {l}")))?;
            if new >= category_names.len() {
                return Err(Error::config(format!(
                    "label mapping target {new} outside {} categories",
                    category_names.len()
                )));
            }
            labels.push(new);
        }
        Ok(Self {
            labels,
            category_names,
            ..self.clone()
        })
    }

    /// Moves the listed samples to new labels; every other sample keeps its
    /// label.
    pub fn relabel_samples(
        &self,
        entries: &[(SampleId, usize)],
        category_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(&l) = self.labels.iter().find(|&&l| l >= category_names.len()) {
            return Err(Error::config(format!(
                "existing label {l} outside {} categories",
                category_names.len()
            )));
        }
        let index = self.index_of_ids();
        let mut labels = self.labels.clone();
        for &(id, new) in entries {
            let &p = index.get(&id).ok_or(Error::Lookup(id))?;
            if new >= category_names.len() {
                return Err(Error::config(format!(
                    "relabel target {new} outside {} categories",
                    category_names.len()
                )));
            }
            labels[p] = new;
        }
        Ok(Self {
            labels,
            category_names,
            ..self.clone()
        })
    }

    /// Appends `other`, whose labels must be valid here and whose ids must not
    /// collide with ours.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if other.dims != self.dims {
            return Err(Error::config("cannot concatenate datasets with different dims"));
        }
        let mut images = self.images.clone();
        images.extend_from_slice(&other.images);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Self::new(
            self.dims,
            images,
            labels,
            ids,
            self.category_names.clone(),
            self.provenance,
        )
    }

    /// Equal number of samples from every category, chosen by a seeded
    /// shuffle and returned in original order.
    pub fn stratified_subset(&self, per_category: usize, seed: u64) -> Result<Self> {
        let mut keep = Vec::with_capacity(per_category * self.category_count());
        for c in 0..self.category_count() {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            if members.len() < per_category {
                return Err(Error::config(format!(
                    "category {c} has {} samples, {per_category} requested",
                    members.len()
                )));
            }
            members.shuffle(&mut rng_from(seed, &[0x57a7, c as u64]));
            keep.extend_from_slice(&members[..per_category]);
        }
        keep.sort_unstable();
        let ids: Vec<SampleId> = keep.iter().map(|&i| self.ids[i]).collect();
        self.subset(&ids)
    }

    pub fn max_id(&self) -> Option<SampleId> {
        self.ids.iter().copied().max()
    }
}

impl SampleSource for LabeledDataset {
    fn sample_count(&self) -> usize {
        self.len()
    }

    fn gather(&self, indices: &[usize]) -> TensorBuffer {
        let mut values = Vec::with_capacity(indices.len() * self.dims.pixel_count());
        for &i in indices {
            values.extend(self.images[i].normalized());
        }
        let mut shape = vec![indices.len()];
        shape.extend(self.dims.shape());
        TensorBuffer::new(shape, values).expect("normalized pixels are finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n: usize, categories: usize) -> LabeledDataset {
        let dims = Dims::new(2, 2, 1);
        let images = (0..n)
            .map(|i| Image::new(2, 2, 1, vec![i as u8; 4]).unwrap())
            .collect();
        LabeledDataset::new(
            dims,
            images,
            (0..n).map(|i| i % categories).collect(),
            (0..n as u64).collect(),
            (0..categories).map(|c| format!("c{c}")).collect(),
            Provenance::Train,
        )
        .unwrap()
    }

    #[test]
    fn subset_orders_and_preserves() {
        let ds = toy(5, 2);
        assert_eq!(ds.subset(ds.ids()).unwrap(), ds);
        let empty = ds.subset(&[]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.category_names(), ds.category_names());
        let s = ds.subset(&[3, 1]).unwrap();
        assert_eq!(s.ids(), &[3, 1]);
        assert_eq!(s.labels(), &[1, 1]);
        assert_eq!(s.images()[0].pixels(), &[3, 3, 3, 3]);
        assert!(matches!(ds.subset(&[9]), Err(Error::Lookup(9))));
        assert!(ds.subset(&[1, 1]).is_err());
    }

    #[test]
    fn remapping() {
        let ds = toy(4, 2);
        let names = ds.category_names().to_vec();
        let identity: BTreeMap<_, _> = [(0, 0), (1, 1)].into();
        assert_eq!(ds.remap_labels(&identity, names.clone()).unwrap(), ds);
        let merge: BTreeMap<_, _> = [(0, 0), (1, 0)].into();
        let merged = ds.remap_labels(&merge, names.clone()).unwrap();
        assert!(merged.labels().iter().all(|&l| l == 0));
        assert_eq!(merged.ids(), ds.ids());
        let gap: BTreeMap<_, _> = [(0, 0)].into();
        assert!(matches!(ds.remap_labels(&gap, names.clone()), Err(Error::Config(_))));

        let mut wider = names.clone();
        wider.push("split".into());
        let split = ds.relabel_samples(&[(1, 2), (2, 2)], wider).unwrap();
        let moved: Vec<_> = split
            .ids()
            .iter()
            .zip(split.labels())
            .filter(|(_, &l)| l == 2)
            .map(|(&id, _)| id)
            .collect();
        assert_eq!(moved, vec![1, 2]);
        assert_eq!(split.labels()[0], 0);
        assert_eq!(split.labels()[3], 1);
    }

    #[test]
    fn stratified_is_balanced_and_seeded() {
        let ds = toy(40, 4);
        let a = ds.stratified_subset(3, 11).unwrap();
        assert_eq!(a.len(), 12);
        for c in 0..4 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 3);
        }
        assert_eq!(a, ds.stratified_subset(3, 11).unwrap());
        assert!(ds.stratified_subset(11, 0).is_err());
    }

    #[test]
    fn constructor_checks() {
        let dims = Dims::new(1, 1, 1);
        let img = Image::new(1, 1, 1, vec![0]).unwrap();
        let names = vec!["a".to_string()];
        assert!(LabeledDataset::new(dims, vec![img.clone()], vec![1], vec![0], names.clone(), Provenance::Train).is_err());
        assert!(LabeledDataset::new(
            dims,
            vec![img.clone(), img.clone()],
            vec![0, 0],
            vec![4, 4],
            names,
            Provenance::Train
        )
        .is_err());
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn gather_normalizes() {
        let ds = toy(3, 1);
        let b = ds.gather(&[2, 0]);
        assert_eq!(b.shape(), &[2, 1, 2, 2]);
        assert_eq!(b.values()[0], 2.0 / 255.0);
        assert_eq!(b.values()[4], 0.0);
    }
}
