//! Image corpora, class-disjoint splits, augmentation and batching.

mod augment;
mod synth;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentPolicy};
pub use synth::{synth_generate, synth_generate_with, Domain, SynthConfig};

/// Smallest and largest supported image side.
pub const MIN_SIDE: usize = 16;
pub const MAX_SIDE: usize = 64;

/// One image, stored `h x w x c` with 8-bit intensities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSample {
    pub pixels: Vec<u8>,
    pub label: usize,
    pub source_id: u64,
}

/// Geometry shared by every image of a [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        for (name, side) in [("height", height), ("width", width)] {
            if !(MIN_SIDE..=MAX_SIDE).contains(&side) {
                return Err(Error::param(name, format!("{side} outside [{MIN_SIDE}, {MAX_SIDE}]")));
            }
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param("channels", format!("{channels} not in {{1, 3}}")));
        }
        Ok(ImageDims {
            height,
            width,
            channels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Labeled images with a fixed geometry. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    dims: ImageDims,
    n_classes: usize,
    samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn new(dims: ImageDims, n_classes: usize, samples: Vec<ImageSample>) -> Result<Self> {
        for s in &samples {
            if s.pixels.len() != dims.pixels() {
                return Err(Error::dim("sample pixels", &[s.pixels.len()], &[dims.pixels()]));
            }
            if s.label >= n_classes {
                return Err(Error::param(
                    "label",
                    format!("sample {} has label {} >= {n_classes}", s.source_id, s.label),
                ));
            }
        }
        Ok(Dataset {
            dims,
            n_classes,
            samples,
        })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample indices grouped by class id (index = class id).
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = alloc::vec![Vec::new(); self.n_classes];
        for (i, s) in self.samples.iter().enumerate() {
            by[s.label].push(i);
        }
        by
    }

    /// Keep only `classes`, relabeled `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Dataset> {
        let mut remap = alloc::vec![None; self.n_classes];
        for (new, &c) in classes.iter().enumerate() {
            if c >= self.n_classes {
                return Err(Error::param("classes", format!("class {c} >= {}", self.n_classes)));
            }
            remap[c] = Some(new);
        }
        let samples = self
            .samples
            .iter()
            .filter_map(|s| remap[s.label].map(|label| ImageSample { label, ..s.clone() }))
            .collect();
        Dataset::new(self.dims, classes.len(), samples)
    }

    /// Split each class into its first samples and its last `holdout` samples.
    pub fn hold_out_per_class(&self, holdout: usize) -> (Dataset, Dataset) {
        let mut keep = Vec::new();
        let mut held = Vec::new();
        for idx in self.indices_by_class() {
            let cut = idx.len().saturating_sub(holdout);
            keep.extend(idx[..cut].iter().map(|&i| self.samples[i].clone()));
            held.extend(idx[cut..].iter().map(|&i| self.samples[i].clone()));
        }
        (
            Dataset {
                samples: keep,
                ..self.clone_empty()
            },
            Dataset {
                samples: held,
                ..self.clone_empty()
            },
        )
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            dims: self.dims,
            n_classes: self.n_classes,
            samples: Vec::new(),
        }
    }

    /// Deterministic (augmentation-free) network input for the given samples,
    /// shaped `[b, c, h, w]`.
    pub fn plain_batch(&self, indices: &[usize]) -> Tensor {
        let per = self.dims.pixels();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(augment::normalize_plain(&self.samples[i], self.dims).into_data());
        }
        Tensor::new(
            alloc::vec![indices.len(), self.dims.channels, self.dims.height, self.dims.width],
            data,
        )
        .expect("batch geometry")
    }

    /// Augmented network input for the given samples, shaped `[b, c, h, w]`.
    pub fn augmented_batch<R: Rng + ?Sized>(&self, indices: &[usize], policy: &AugmentPolicy, rng: &mut R) -> Tensor {
        let per = self.dims.pixels();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(augment(&self.samples[i], self.dims, policy, rng).into_data());
        }
        Tensor::new(
            alloc::vec![indices.len(), self.dims.channels, self.dims.height, self.dims.width],
            data,
        )
        .expect("batch geometry")
    }
}

/// Disjoint train / validation / test class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassSplit {
    /// Contiguous split of `0..n_classes` in the 64/16/20-style ratio
    /// (24/8/8 for 40 classes).
    pub fn standard(n_classes: usize) -> Result<Self> {
        if n_classes < 3 {
            return Err(Error::param("n_classes", "need at least 3 classes for a split"));
        }
        let val = (n_classes / 5).max(1);
        let test = (n_classes / 5).max(1);
        let train = n_classes - val - test;
        Ok(ClassSplit {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..n_classes).collect(),
        })
    }

    /// Checks disjointness, non-emptiness, range and the `n_way` floor on the
    /// test split.
    pub fn validate(&self, n_classes: usize, n_way: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if part.is_empty() {
                return Err(Error::param("split", format!("{name} split is empty")));
            }
            for &c in part {
                if c >= n_classes {
                    return Err(Error::param("split", format!("class {c} in {name} >= {n_classes}")));
                }
                if !seen.insert(c) {
                    return Err(Error::param("split", format!("class {c} appears in two splits")));
                }
            }
        }
        if self.test.len() < n_way {
            return Err(Error::param(
                "split",
                format!("test split has {} classes, fewer than n_way = {n_way}", self.test.len()),
            ));
        }
        Ok(())
    }
}

/// One epoch: a seeded permutation of `0..n` cut into batches of
/// `batch_size`; the last short batch is kept.
pub fn make_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::param("batch_size", "must be at least 1"));
    }
    if n == 0 {
        return Err(Error::State("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests;
