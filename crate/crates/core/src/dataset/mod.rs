//! Samples, class splits, rotation quadruples and the two dataset sources
//! (image folders on disk and the procedural glyph benchmark).

mod folder;
mod synthetic;

pub use folder::{export_folder, folder_split, load_folder_pools, load_image_folder, read_class_list, FolderSpec};
pub use synthetic::{generate_pool, generate_synthetic, ShiftParams, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RosError};

/// Number of rotations used by the pretext task (0°, 90°, 180°, 270°).
pub const NUM_ROTATIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Dense H×W×C image with values in `[0, 1]`, stored row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(RosError::shape("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(RosError::shape(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(size: usize, channels: usize) -> Self {
        Self {
            height: size,
            width: size,
            channels,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Clockwise rotation by `quarter_turns` × 90°. See [`rot90`].
    pub fn rot90(&self, quarter_turns: usize) -> Result<Image> {
        rot90(self, quarter_turns)
    }
}

/// Rotates a square image clockwise by `i` quarter turns as an exact pixel permutation.
///
/// `i = 0` returns a copy. Non-square input is a shape error and `i > 3` a domain error.
pub fn rot90(image: &Image, i: usize) -> Result<Image> {
    if !image.is_square() {
        return Err(RosError::shape(format!(
            "rot90 needs a square image, got {}x{}",
            image.height, image.width
        )));
    }
    if i >= NUM_ROTATIONS {
        return Err(RosError::domain(format!(
            "rotation index {i} outside 0..{NUM_ROTATIONS}"
        )));
    }
    let n = image.height;
    let ch = image.channels;
    let mut out = vec![0.0f32; image.data.len()];
    for y in 0..n {
        for x in 0..n {
            // destination (y, x) reads from the source pixel that lands there
            let (sy, sx) = match i {
                0 => (y, x),
                1 => (n - 1 - x, y),
                2 => (n - 1 - y, n - 1 - x),
                _ => (x, n - 1 - y),
            };
            let dst = (y * n + x) * ch;
            let src = (sy * n + sx) * ch;
            out[dst..dst + ch].copy_from_slice(&image.data[src..src + ch]);
        }
    }
    Ok(Image {
        height: n,
        width: n,
        channels: ch,
        data: out,
    })
}

/// Joint (class, rotation) label `z = 4y + i`.
pub fn make_multi_rotation_label(class_label: usize, rotation: usize, n_known: usize) -> Result<usize> {
    if class_label >= n_known {
        return Err(RosError::domain(format!(
            "class label {class_label} outside 0..{n_known}"
        )));
    }
    if rotation >= NUM_ROTATIONS {
        return Err(RosError::domain(format!(
            "rotation index {rotation} outside 0..{NUM_ROTATIONS}"
        )));
    }
    Ok(class_label * NUM_ROTATIONS + rotation)
}

/// Inverse of [`make_multi_rotation_label`]: `(z div 4, z mod 4)`.
pub fn split_multi_rotation_label(z: usize, n_known: usize) -> Result<(usize, usize)> {
    if z >= n_known * NUM_ROTATIONS {
        return Err(RosError::domain(format!(
            "multi-rotation label {z} outside 0..{}",
            n_known * NUM_ROTATIONS
        )));
    }
    Ok((z / NUM_ROTATIONS, z % NUM_ROTATIONS))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub class_label: usize,
    pub sample_id: usize,
    pub domain: Domain,
}

impl Sample {
    pub fn new(image: Image, class_label: usize, sample_id: usize, domain: Domain) -> Result<Self> {
        if !image.is_square() {
            return Err(RosError::shape(format!(
                "sample {sample_id} is {}x{}, images must be square",
                image.height, image.width
            )));
        }
        Ok(Self {
            image,
            class_label,
            sample_id,
            domain,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotatedQuadruple {
    pub sample_id: usize,
    pub anchor: Image,
    pub rotated: Image,
    pub rotation: usize,
    pub label: usize,
}

/// Expands every sample into its four relative-rotation quadruples (4N outputs).
pub fn build_rotation_set(samples: &[Sample], n_known: usize) -> Result<Vec<RotatedQuadruple>> {
    let mut out = Vec::with_capacity(samples.len() * NUM_ROTATIONS);
    for sample in samples {
        for i in 0..NUM_ROTATIONS {
            out.push(RotatedQuadruple {
                sample_id: sample.sample_id,
                anchor: sample.image.clone(),
                rotated: rot90(&sample.image, i)?,
                rotation: i,
                label: make_multi_rotation_label(sample.class_label, i, n_known)?,
            });
        }
    }
    Ok(out)
}

/// Ordered known/unknown class names. Label ids follow the order `known ++ unknown`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub known: Vec<String>,
    pub unknown: Vec<String>,
}

impl ClassSplit {
    pub fn new(known: Vec<String>, unknown: Vec<String>) -> Result<Self> {
        if known.is_empty() {
            return Err(RosError::validation("class split needs at least one known class"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in known.iter().chain(&unknown) {
            if !seen.insert(name.as_str()) {
                return Err(RosError::validation(format!(
                    "class `{name}` appears twice in the split"
                )));
            }
        }
        Ok(Self { known, unknown })
    }

    /// First `n_known` names of an ordered class list are known, the rest unknown.
    pub fn from_ordered(classes: &[String], n_known: usize) -> Result<Self> {
        if n_known == 0 || n_known > classes.len() {
            return Err(RosError::validation(format!(
                "n_known={n_known} invalid for {} classes",
                classes.len()
            )));
        }
        Self::new(classes[..n_known].to_vec(), classes[n_known..].to_vec())
    }

    /// Classes inside `window` (indices into `classes`) are known, every other class unknown.
    pub fn from_window(classes: &[String], window: std::ops::Range<usize>) -> Result<Self> {
        if window.is_empty() || window.end > classes.len() {
            return Err(RosError::validation(format!(
                "class window {}..{} invalid for {} classes",
                window.start,
                window.end,
                classes.len()
            )));
        }
        let known = classes[window.clone()].to_vec();
        let unknown = classes
            .iter()
            .enumerate()
            .filter(|(idx, _)| !window.contains(idx))
            .map(|(_, c)| c.clone())
            .collect();
        Self::new(known, unknown)
    }

    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    pub fn n_total(&self) -> usize {
        self.known.len() + self.unknown.len()
    }

    pub fn openness(&self) -> f64 {
        1.0 - self.n_known() as f64 / self.n_total() as f64
    }

    /// Target label id of `name`, if the class belongs to the split.
    pub fn label_of(&self, name: &str) -> Option<usize> {
        self.known.iter().chain(&self.unknown).position(|c| c == name)
    }
}

/// A labeled set of samples from one domain, with the class names its labels index.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image.height())
    }

    pub fn channels(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image.channels())
    }

    pub fn by_id(&self) -> std::collections::HashMap<usize, &Sample> {
        self.samples.iter().map(|s| (s.sample_id, s)).collect()
    }
}

/// All images of one domain, labeled by index into `classes` (before any known/unknown split).
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPool {
    pub domain: Domain,
    pub classes: Vec<String>,
    pub items: Vec<(usize, Image)>,
}

impl DomainPool {
    fn class_present(&self, name: &str) -> bool {
        match self.classes.iter().position(|c| c == name) {
            Some(idx) => self.items.iter().any(|(c, _)| *c == idx),
            None => false,
        }
    }
}

/// Applies a split to a pair of pools: source keeps only known classes relabeled
/// `0..|C_s|`, target keeps every class of the split labeled by its split order.
pub fn apply_split(source: &DomainPool, target: &DomainPool, split: &ClassSplit) -> Result<(Dataset, Dataset)> {
    for name in &split.known {
        if !source.class_present(name) {
            return Err(RosError::validation(format!(
                "known class `{name}` has no images in the source domain"
            )));
        }
    }
    let remap = |pool: &DomainPool, keep_unknown: bool| -> Result<Vec<Sample>> {
        let mut samples = Vec::new();
        for (class_idx, image) in &pool.items {
            let name = &pool.classes[*class_idx];
            let label = match split.label_of(name) {
                Some(l) if l < split.n_known() || keep_unknown => l,
                _ => continue,
            };
            let id = samples.len();
            samples.push(Sample::new(image.clone(), label, id, pool.domain)?);
        }
        Ok(samples)
    };
    let source_set = Dataset {
        domain: Domain::Source,
        class_names: split.known.clone(),
        samples: remap(source, false)?,
    };
    let target_set = Dataset {
        domain: Domain::Target,
        class_names: split.known.iter().chain(&split.unknown).cloned().collect(),
        samples: remap(target, true)?,
    };
    Ok((source_set, target_set))
}
