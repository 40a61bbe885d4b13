//! Paired RGB-D and unpaired RGB corpora.
//!
//! On-disk layout is `<root>/rgb/<name>.png` plus `<root>/depth/<name>.png` for
//! paired sets. The identity label is the filename prefix up to the first
//! underscore. An optional `<root>/manifest.txt` lists relative paths, one per
//! line; without it the directories are scanned.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};

pub use synthetic::{
    grid_coord, lambert, make_synthetic_dataset, render_sample, surface_normal, Blob,
    IdentityShape, Pose, RenderedSample,
    SyntheticConfig,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RGB_DIR: &str = "rgb";
pub const DEPTH_DIR: &str = "depth";
pub const MIN_SIZE: usize = 8;

/// Co-registered RGB and depth of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub name: String,
    pub identity: String,
    pub rgb: ImageTensor,
    pub depth: ImageTensor,
}

/// A lone RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedSample {
    pub name: String,
    pub identity: String,
    pub rgb: ImageTensor,
}

impl From<PairedSample> for UnpairedSample {
    fn from(s: PairedSample) -> Self {
        Self {
            name: s.name,
            identity: s.identity,
            rgb: s.rgb,
        }
    }
}

/// Anything carrying an identity label.
pub trait Labeled {
    fn identity(&self) -> &str;
}

impl Labeled for PairedSample {
    fn identity(&self) -> &str {
        &self.identity
    }
}

impl Labeled for UnpairedSample {
    fn identity(&self) -> &str {
        &self.identity
    }
}

impl Labeled for String {
    fn identity(&self) -> &str {
        identity_of(self)
    }
}

/// Which part of a dataset a manifest selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSpec {
    All,
    /// Fold `index` of a seeded `k`-fold partition; `test` picks the held-out side.
    Fold {
        k: usize,
        index: usize,
        seed: u64,
        test: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: SplitSpec,
    /// Target side length after preprocessing.
    pub image_size: usize,
    /// Relative paths (`rgb/...`, `depth/...`) in lexicographic order.
    pub entries: Vec<String>,
}

/// `id003_0007.png` -> `id003`
pub fn identity_of(name: &str) -> &str {
    let stem = name.rsplit('/').next().unwrap_or(name);
    let stem = stem.split('.').next().unwrap_or(stem);
    stem.split('_').next().unwrap_or(stem)
}

impl DatasetManifest {
    /// Reads `<root>/manifest.txt` or, when absent, scans `rgb/` and `depth/`.
    pub fn open(root: impl AsRef<Path>, image_size: usize) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::MissingPath(root.to_path_buf()));
        }
        let listing = root.join(MANIFEST_FILE);
        let entries = if listing.is_file() {
            let text = fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect()
        } else {
            let mut entries = Vec::new();
            for dir in [RGB_DIR, DEPTH_DIR] {
                let path = root.join(dir);
                if !path.is_dir() {
                    continue;
                }
                let reader = fs::read_dir(&path).map_err(|e| Error::io(&path, e))?;
                for entry in reader {
                    let entry = entry.map_err(|e| Error::io(&path, e))?;
                    if entry.path().is_file() {
                        entries.push(format!("{dir}/{}", entry.file_name().to_string_lossy()));
                    }
                }
            }
            if entries.is_empty() && !root.join(RGB_DIR).is_dir() {
                return Err(Error::MissingPath(root.join(RGB_DIR)));
            }
            entries
        };
        Self::from_entries(root, image_size, entries)
    }

    pub fn from_entries(root: &Path, image_size: usize, mut entries: Vec<String>) -> Result<Self> {
        if image_size < MIN_SIZE {
            return Err(Error::Config(format!(
                "image size {image_size} below minimum {MIN_SIZE}"
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.as_str()) {
                return Err(Error::Manifest(format!("duplicate entry {e}")));
            }
            let dir = e.split('/').next().unwrap_or("");
            if dir != RGB_DIR && dir != DEPTH_DIR || !e.contains('/') {
                return Err(Error::Manifest(format!(
                    "entry {e} is not under {RGB_DIR}/ or {DEPTH_DIR}/"
                )));
            }
            if !root.join(e).is_file() {
                return Err(Error::Manifest(format!("listed file {e} does not exist")));
            }
        }
        entries.sort();
        Ok(Self {
            root: root.to_path_buf(),
            split: SplitSpec::All,
            image_size,
            entries,
        })
    }

    pub fn with_split(mut self, split: SplitSpec) -> Self {
        self.split = split;
        self
    }

    fn names_in(&self, dir: &str) -> Vec<String> {
        let prefix = format!("{dir}/");
        self.entries
            .iter()
            .filter_map(|e| e.strip_prefix(&prefix).map(str::to_string))
            .collect()
    }

    /// RGB file names after applying the split.
    pub fn rgb_names(&self) -> Result<Vec<String>> {
        let names = self.names_in(RGB_DIR);
        match self.split {
            SplitSpec::All => Ok(names),
            SplitSpec::Fold {
                k,
                index,
                seed,
                test,
            } => {
                let folds = split_folds(&names, k, seed)?;
                let fold = folds.get(index).ok_or_else(|| {
                    Error::Config(format!("fold index {index} out of range for k={k}"))
                })?;
                let pick = if test { &fold.test } else { &fold.train };
                Ok(pick.iter().map(|&i| names[i].clone()).collect())
            }
        }
    }

    pub fn sample_count(&self) -> Result<usize> {
        Ok(self.rgb_names()?.len())
    }

    /// Checks the 1:1 rgb/depth correspondence of a paired layout.
    pub fn validate_paired(&self) -> Result<()> {
        let rgb: BTreeSet<String> = self.names_in(RGB_DIR).into_iter().collect();
        let depth: BTreeSet<String> = self.names_in(DEPTH_DIR).into_iter().collect();
        if let Some(orphan) = rgb.difference(&depth).next() {
            return Err(Error::Manifest(format!("orphan {RGB_DIR}/{orphan}")));
        }
        if let Some(orphan) = depth.difference(&rgb).next() {
            return Err(Error::Manifest(format!("orphan {DEPTH_DIR}/{orphan}")));
        }
        Ok(())
    }

    /// Writes the entry listing to `<root>/manifest.txt`.
    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut text = self.entries.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Maps any 8- or 16-bit image to a `size x size x 3` tensor in `[-1, 1]`.
pub fn preprocess(raw: &DynamicImage, target_size: usize) -> Result<ImageTensor> {
    if raw.width() == 0 || raw.height() == 0 {
        return Err(Error::Validation("zero-area image".into()));
    }
    if target_size < MIN_SIZE {
        return Err(Error::Validation(format!(
            "target size {target_size} below minimum {MIN_SIZE}"
        )));
    }
    // to_rgb32f divides by the type's maximum and replicates gray channels
    let mut img = raw.to_rgb32f();
    for v in img.iter_mut() {
        *v = 2.0 * *v - 1.0;
    }
    let side = target_size as u32;
    if img.width() != side || img.height() != side {
        img = imageops::resize(&img, side, side, FilterType::Triangle);
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(3, h, w, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c].clamp(-1.0, 1.0)
    }))
}

pub fn load_image(path: &Path, target_size: usize) -> Result<ImageTensor> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let raw = image::open(path).map_err(|source| Error::ImageLoad {
        path: path.to_path_buf(),
        source,
    })?;
    preprocess(&raw, target_size).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_paired_dataset(manifest: &DatasetManifest) -> Result<Vec<PairedSample>> {
    manifest.validate_paired()?;
    manifest
        .rgb_names()?
        .into_iter()
        .map(|name| {
            let rgb = load_image(&manifest.root.join(RGB_DIR).join(&name), manifest.image_size)?;
            let depth =
                load_image(&manifest.root.join(DEPTH_DIR).join(&name), manifest.image_size)?;
            Ok(PairedSample {
                identity: identity_of(&name).to_string(),
                name,
                rgb,
                depth,
            })
        })
        .collect()
}

pub fn load_rgb_dataset(manifest: &DatasetManifest) -> Result<Vec<UnpairedSample>> {
    manifest
        .rgb_names()?
        .into_iter()
        .map(|name| {
            let rgb = load_image(&manifest.root.join(RGB_DIR).join(&name), manifest.image_size)?;
            Ok(UnpairedSample {
                identity: identity_of(&name).to_string(),
                name,
                rgb,
            })
        })
        .collect()
}

/// Indices into the sample sequence for one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition by image, stratified within identity.
///
/// Each identity's images are shuffled and dealt round-robin into folds with
/// a counter that carries over between identities, so fold sizes differ by at
/// most one.
pub fn split_folds<S: Labeled>(samples: &[S], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Validation(format!("k must be at least 2, got {k}")));
    }
    if k > samples.len() {
        return Err(Error::Validation(format!(
            "k={k} exceeds sample count {}",
            samples.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.identity()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; samples.len()];
    let mut counter = 0usize;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = counter % k;
            counter += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..samples.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// `[-1, 1]` tensor to an 8-bit RGB image.
pub fn tensor_to_rgb8(t: &ImageTensor) -> Result<RgbImage> {
    if t.channels() != 3 {
        return Err(Error::Shape(format!(
            "expected 3 channels, got {}",
            t.channels()
        )));
    }
    let (w, h) = (t.width() as u32, t.height() as u32);
    Ok(ImageBuffer::from_fn(w, h, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            to_byte(t.get(0, y, x)),
            to_byte(t.get(1, y, x)),
            to_byte(t.get(2, y, x)),
        ])
    }))
}

/// `[-1, 1]` tensor to an 8-bit grayscale image of its channel mean.
pub fn tensor_to_gray8(t: &ImageTensor) -> GrayImage {
    let m = t.channel_mean();
    ImageBuffer::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        image::Luma([to_byte(m.get(0, y as usize, x as usize))])
    })
}

pub(crate) fn save_png<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageLoad {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

pub fn save_depth_png(t: &ImageTensor, path: &Path) -> Result<()> {
    save_png(&tensor_to_gray8(t), path)
}

pub fn save_rgb_png(t: &ImageTensor, path: &Path) -> Result<()> {
    save_png(&tensor_to_rgb8(t)?, path)
}
