//! Per-component parameter archives and run checkpoints.
//!
//! Archive layout: 8-byte magic, little-endian `u64` header length, a JSON
//! header, then raw little-endian values (parameters, then Adam first and
//! second moments when present) in [`Parameters::tensors`] order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::pool::{ImagePool, RngState};
use super::step::TrainState;
use crate::error::{Error, Result};
use crate::models::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, GrayPassthrough, Hallucinator,
};
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::tensor::{ImageTensor, Scalar};

const ARCHIVE_MAGIC: &[u8; 8] = b"DHALLUC1";
const POOLS_MAGIC: &[u8; 8] = b"DHPOOLS1";

pub const G_A2B_FILE: &str = "g_a2b.ckpt";
pub const G_B2A_FILE: &str = "g_b2a.ckpt";
pub const D_DEPTH_FILE: &str = "d_depth.ckpt";
pub const D_RGB_FILE: &str = "d_rgb.ckpt";
/// Student-phase optimizer moments of the shared generator.
pub const G_A2B_STUDENT_MOMENTS_FILE: &str = "g_a2b_student_moments.ckpt";
pub const POOLS_FILE: &str = "pools.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
    /// Grayscale-of-input debug mapping with no parameters.
    Passthrough,
    /// Optimizer moments for a generator, without the weights.
    GeneratorMoments(GeneratorConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub architecture: Architecture,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamHeader>,
}

fn entries<P: Parameters<f32>>(p: &P) -> Vec<TensorEntry> {
    p.tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            len: t.len(),
        })
        .collect()
}

fn shape_diff(expected: &[TensorEntry], found: &[TensorEntry]) -> Option<String> {
    if expected == found {
        return None;
    }
    let mut lines = Vec::new();
    let n = expected.len().max(found.len());
    for i in 0..n {
        match (expected.get(i), found.get(i)) {
            (Some(e), Some(f)) if e == f => {}
            (Some(e), Some(f)) => lines.push(format!(
                "{}: expected {} ({} values), found {} ({} values)",
                i, e.name, e.len, f.name, f.len
            )),
            (Some(e), None) => lines.push(format!("missing {} ({} values)", e.name, e.len)),
            (None, Some(f)) => lines.push(format!("unexpected {} ({} values)", f.name, f.len)),
            (None, None) => {}
        }
    }
    Some(lines.join("; "))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write_values(w: &mut impl Write, values: &[f32], path: &Path) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_values(r: &mut impl Read, out: &mut [f32], path: &Path) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    for (v, b) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
    Ok(())
}

fn write_archive<P: Parameters<f32>>(
    path: &Path,
    architecture: Architecture,
    params: Option<&P>,
    adam: Option<&Adam<f32>>,
) -> Result<()> {
    create_parent(path)?;
    let header = ArchiveHeader {
        architecture,
        dtype: f32::DTYPE.to_string(),
        tensors: params.map(entries).unwrap_or_default(),
        adam: adam.map(|a| AdamHeader {
            config: a.config,
            step: a.step,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(ARCHIVE_MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    if let Some(p) = params {
        if !matches!(header.architecture, Architecture::GeneratorMoments(_)) {
            for (_, t) in p.tensors() {
                write_values(&mut w, t, path)?;
            }
        }
    }
    if let Some(a) = adam {
        for m in a.first_moment.iter().chain(&a.second_moment) {
            write_values(&mut w, m, path)?;
        }
    }
    w.flush().map_err(io)
}

fn read_header(path: &Path) -> Result<(ArchiveHeader, BufReader<fs::File>)> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a parameter archive",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let header: ArchiveHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.dtype != f32::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported dtype {}",
            path.display(),
            header.dtype
        )));
    }
    Ok((header, r))
}

/// Fills `params` (and optionally fresh Adam state) from an archive body.
fn read_body<P: Parameters<f32>>(
    path: &Path,
    header: &ArchiveHeader,
    mut r: BufReader<fs::File>,
    params: &mut P,
) -> Result<Option<Adam<f32>>> {
    if let Some(diff) = shape_diff(&entries(params), &header.tensors) {
        return Err(Error::Checkpoint(format!(
            "{}: architecture mismatch: {diff}",
            path.display()
        )));
    }
    if !matches!(header.architecture, Architecture::GeneratorMoments(_)) {
        for (_, t) in params.tensors_mut() {
            read_values(&mut r, t, path)?;
        }
    }
    let Some(ah) = &header.adam else {
        return Ok(None);
    };
    let mut adam = Adam::new(ah.config, params);
    adam.step = ah.step;
    for m in adam.first_moment.iter_mut().chain(adam.second_moment.iter_mut()) {
        read_values(&mut r, m, path)?;
    }
    Ok(Some(adam))
}

pub fn save_generator(path: &Path, g: &Generator<f32>, adam: Option<&Adam<f32>>) -> Result<()> {
    write_archive(path, Architecture::Generator(g.config.clone()), Some(g), adam)
}

pub fn save_discriminator(
    path: &Path,
    d: &Discriminator<f32>,
    adam: Option<&Adam<f32>>,
) -> Result<()> {
    write_archive(path, Architecture::Discriminator(d.config.clone()), Some(d), adam)
}

/// Writes only the Adam moments of a generator-shaped parameter set.
pub fn save_generator_moments(path: &Path, g: &Generator<f32>, adam: &Adam<f32>) -> Result<()> {
    write_archive(path, Architecture::GeneratorMoments(g.config.clone()), Some(g), Some(adam))
}

pub fn load_generator_moments(path: &Path, expected: &GeneratorConfig) -> Result<Adam<f32>> {
    let (header, r) = read_header(path)?;
    if header.architecture != Architecture::GeneratorMoments(expected.clone()) {
        return Err(Error::Checkpoint(format!(
            "{}: architecture mismatch: expected moments for {:?}, found {:?}",
            path.display(),
            expected,
            header.architecture
        )));
    }
    let mut g = Generator::zeros(expected);
    read_body(path, &header, r, &mut g)?
        .ok_or_else(|| Error::Checkpoint(format!("{}: no optimizer state", path.display())))
}

/// Writes a parameter-free archive whose generator returns the input's grayscale.
pub fn save_passthrough(path: &Path) -> Result<()> {
    write_archive::<Generator<f32>>(path, Architecture::Passthrough, None, None)
}

pub fn load_generator(
    path: &Path,
    expected: Option<&GeneratorConfig>,
) -> Result<(Generator<f32>, Option<Adam<f32>>)> {
    let (header, r) = read_header(path)?;
    let Architecture::Generator(cfg) = &header.architecture else {
        return Err(Error::Checkpoint(format!(
            "{}: expected a generator archive, found {:?}",
            path.display(),
            header.architecture
        )));
    };
    let target = expected.unwrap_or(cfg);
    let mut g = Generator::zeros(target);
    let adam = read_body(path, &header, r, &mut g)?;
    Ok((g, adam))
}

pub fn load_discriminator(
    path: &Path,
    expected: Option<&DiscriminatorConfig>,
) -> Result<(Discriminator<f32>, Option<Adam<f32>>)> {
    let (header, r) = read_header(path)?;
    let Architecture::Discriminator(cfg) = &header.architecture else {
        return Err(Error::Checkpoint(format!(
            "{}: expected a discriminator archive, found {:?}",
            path.display(),
            header.architecture
        )));
    };
    let target = expected.unwrap_or(cfg);
    let mut d = Discriminator::zeros(target);
    let adam = read_body(path, &header, r, &mut d)?;
    Ok((d, adam))
}

/// Loads the RGB-to-depth generator from an archive or a checkpoint directory.
pub fn load_hallucinator(path: &Path) -> Result<Box<dyn Hallucinator>> {
    let file = if path.is_dir() {
        path.join(G_A2B_FILE)
    } else {
        path.to_path_buf()
    };
    let (header, _) = read_header(&file)?;
    match header.architecture {
        Architecture::Passthrough => Ok(Box::new(GrayPassthrough)),
        Architecture::Generator(_) => Ok(Box::new(load_generator(&file, None)?.0)),
        other => Err(Error::Checkpoint(format!(
            "{} holds {other:?}, not a generator",
            file.display()
        ))),
    }
}

fn write_pools(path: &Path, pools: &[&ImagePool]) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(POOLS_MAGIC).map_err(io)?;
    w.write_all(&(pools.len() as u64).to_le_bytes()).map_err(io)?;
    for p in pools {
        w.write_all(&(p.capacity() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(p.len() as u64).to_le_bytes()).map_err(io)?;
        for img in p.images() {
            let (c, h, wd) = img.shape();
            for d in [c, h, wd] {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            write_values(&mut w, img.data(), path)?;
        }
    }
    w.flush().map_err(io)
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

/// `(capacity, images)` per stored pool.
fn read_pools(path: &Path) -> Result<Vec<(usize, Vec<ImageTensor>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != POOLS_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a pool file", path.display())));
    }
    let n = read_u64(&mut r, path)?;
    let mut out = Vec::new();
    for _ in 0..n {
        let cap = read_u64(&mut r, path)? as usize;
        let count = read_u64(&mut r, path)? as usize;
        let mut images = Vec::with_capacity(count);
        for _ in 0..count {
            let c = read_u64(&mut r, path)? as usize;
            let h = read_u64(&mut r, path)? as usize;
            let w = read_u64(&mut r, path)? as usize;
            let mut data = vec![0f32; c * h * w];
            read_values(&mut r, &mut data, path)?;
            images.push(ImageTensor::from_vec(c, h, w, data)?);
        }
        out.push((cap, images));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub epoch: usize,
    pub global_step: u64,
    pub config_hash: String,
    pub seed: u64,
    pub config: TrainingConfig,
    /// Epoch-mean losses of the last completed epoch.
    pub metrics: BTreeMap<String, f64>,
    pub depth_pool_rng: RngState,
    pub rgb_pool_rng: RngState,
    pub components: Vec<String>,
}

pub fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch_{epoch:04}"))
}

/// Writes every component active in `config.mode` plus pools and manifest.
pub fn save_checkpoint(
    root: &Path,
    state: &TrainState,
    config: &TrainingConfig,
    metrics: BTreeMap<String, f64>,
) -> Result<PathBuf> {
    let dir = epoch_dir(root, state.epoch);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut components = vec![G_A2B_FILE.to_string()];
    save_generator(&dir.join(G_A2B_FILE), &state.g_a2b, Some(&state.opt_g_a2b))?;
    if config.mode.uses_discriminators() {
        save_discriminator(&dir.join(D_DEPTH_FILE), &state.d_depth, Some(&state.opt_d_depth))?;
        components.push(D_DEPTH_FILE.to_string());
    }
    if config.mode.runs_student() {
        save_generator(&dir.join(G_B2A_FILE), &state.g_b2a, Some(&state.opt_g_b2a))?;
        save_discriminator(&dir.join(D_RGB_FILE), &state.d_rgb, Some(&state.opt_d_rgb))?;
        save_generator_moments(
            &dir.join(G_A2B_STUDENT_MOMENTS_FILE),
            &state.g_a2b,
            &state.opt_g_a2b_student,
        )?;
        components.push(G_B2A_FILE.to_string());
        components.push(D_RGB_FILE.to_string());
        components.push(G_A2B_STUDENT_MOMENTS_FILE.to_string());
    }
    write_pools(&dir.join(POOLS_FILE), &[&state.depth_pool, &state.rgb_pool])?;
    let manifest = CheckpointManifest {
        epoch: state.epoch,
        global_step: state.global_step,
        config_hash: config.hash(),
        seed: config.seed,
        config: config.clone(),
        metrics,
        depth_pool_rng: state.depth_pool.rng_state(),
        rgb_pool_rng: state.rgb_pool.rng_state(),
        components,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingPath(path));
    }
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Most recent `epoch_*` directory holding a manifest.
pub fn latest_checkpoint(root: &Path) -> Result<Option<PathBuf>> {
    if !root.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(n) = name.strip_prefix("epoch_").and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        if entry.path().join(MANIFEST_FILE).is_file() && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Restores a training state; components absent from the checkpoint start
/// from the seeded initialization of `config`.
pub fn load_checkpoint(dir: &Path, config: &TrainingConfig) -> Result<(TrainState, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let mut state = TrainState::new(config);
    state.epoch = manifest.epoch;
    state.global_step = manifest.global_step;
    let gc = config.generator();
    let dc = config.discriminator();
    let adam_or = |a: Option<Adam<f32>>, fallback: Adam<f32>| a.unwrap_or(fallback);

    let (g, a) = load_generator(&dir.join(G_A2B_FILE), Some(&gc))?;
    state.opt_g_a2b = adam_or(a, Adam::new(config.adam(), &g));
    state.g_a2b = g;
    if dir.join(D_DEPTH_FILE).is_file() {
        let (d, a) = load_discriminator(&dir.join(D_DEPTH_FILE), Some(&dc))?;
        state.opt_d_depth = adam_or(a, Adam::new(config.adam(), &d));
        state.d_depth = d;
    }
    if dir.join(G_B2A_FILE).is_file() {
        let (g, a) = load_generator(&dir.join(G_B2A_FILE), Some(&gc))?;
        state.opt_g_b2a = adam_or(a, Adam::new(config.adam(), &g));
        state.g_b2a = g;
    }
    if dir.join(G_A2B_STUDENT_MOMENTS_FILE).is_file() {
        state.opt_g_a2b_student = load_generator_moments(&dir.join(G_A2B_STUDENT_MOMENTS_FILE), &gc)?;
    }
    if dir.join(D_RGB_FILE).is_file() {
        let (d, a) = load_discriminator(&dir.join(D_RGB_FILE), Some(&dc))?;
        state.opt_d_rgb = adam_or(a, Adam::new(config.adam(), &d));
        state.d_rgb = d;
    }
    let pools = read_pools(&dir.join(POOLS_FILE))?;
    if pools.len() != 2 {
        return Err(Error::Checkpoint(format!(
            "expected 2 pools, found {}",
            pools.len()
        )));
    }
    let mut pools = pools.into_iter();
    let (cap, images) = pools.next().expect("two pools");
    state.depth_pool = ImagePool::from_parts(cap, images, manifest.depth_pool_rng.restore()?)?;
    let (cap, images) = pools.next().expect("two pools");
    state.rgb_pool = ImagePool::from_parts(cap, images, manifest.rgb_pool_rng.restore()?)?;
    Ok((state, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GeneratorConfig;

    #[test]
    fn generator_round_trip_with_moments() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::<f32>::init(&GeneratorConfig::uniform(2, 1), 3);
        let mut adam = Adam::new(AdamConfig::default(), &g);
        let grads = Generator::<f32>::init(&GeneratorConfig::uniform(2, 1), 4);
        let mut moved = g.clone();
        adam.update(&mut moved, &grads, 1e-3).unwrap();
        let path = dir.path().join("g.ckpt");
        save_generator(&path, &moved, Some(&adam)).unwrap();
        let (back, back_adam) = load_generator(&path, None).unwrap();
        assert_eq!(back, moved);
        assert_eq!(back_adam.unwrap(), adam);
    }

    #[test]
    fn mismatch_reports_shape_diff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_generator(&path, &Generator::zeros(&GeneratorConfig::uniform(2, 1)), None).unwrap();
        let err = load_generator(&path, Some(&GeneratorConfig::uniform(3, 1))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("architecture mismatch"), "{msg}");
        assert!(msg.contains("stem.weight"), "{msg}");
    }

    #[test]
    fn wrong_kind_and_garbage_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        save_discriminator(&path, &Discriminator::zeros(&DiscriminatorConfig::default()), None)
            .unwrap();
        assert!(load_generator(&path, None).is_err());
        let junk = dir.path().join("junk.ckpt");
        fs::write(&junk, b"not an archive").unwrap();
        assert!(matches!(load_generator(&junk, None), Err(Error::Checkpoint(_))));
    }
}
