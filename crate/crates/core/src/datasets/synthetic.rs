//! Analytic paired RGB-D data: gaussian height fields with Lambertian shading.
//!
//! Each identity owns 1-3 smooth blobs and an albedo color. Each image shifts
//! the blobs and relights them. The depth image is the height field itself
//! and the RGB image shades that same field, so depth is recoverable from
//! shading up to the usual ambiguities.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_png, DatasetManifest, DEPTH_DIR, MIN_SIZE, RGB_DIR};
use crate::error::{Error, Result};

const AMBIENT: f64 = 0.15;
const MAX_LIGHT_TILT_DEG: f64 = 35.0;
const MAX_SHIFT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub size: usize,
    pub identities: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityShape {
    pub blobs: Vec<Blob>,
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub shift: [f64; 2],
    /// Unit vector towards the light; `[0, 0, 1]` is the viewer direction.
    pub light: [f64; 3],
}

/// Unquantized render in `[0, 1]`, row-major `size x size` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSample {
    pub size: usize,
    pub height: Vec<f64>,
    pub shading: Vec<f64>,
    pub rgb: [Vec<f64>; 3],
}

impl IdentityShape {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let count = rng.random_range(1..=3usize);
        let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.3..1.0)).collect();
        let total_weight: f64 = weights.iter().sum();
        let peak = rng.random_range(0.5..0.95);
        let blobs = weights
            .iter()
            .map(|w| Blob {
                center: [rng.random_range(-0.35..0.35), rng.random_range(-0.35..0.35)],
                sigma: rng.random_range(0.15..0.35),
                amplitude: peak * w / total_weight,
            })
            .collect();
        let albedo = [
            rng.random_range(0.45..1.0),
            rng.random_range(0.45..1.0),
            rng.random_range(0.45..1.0),
        ];
        Self { blobs, albedo }
    }

    /// Height and its gradient at domain point `(u, v)` in `[-1, 1]^2`.
    pub fn height_and_gradient(&self, u: f64, v: f64, shift: [f64; 2]) -> (f64, f64, f64) {
        let (mut h, mut hu, mut hv) = (0.0, 0.0, 0.0);
        for b in &self.blobs {
            let du = u - b.center[0] - shift[0];
            let dv = v - b.center[1] - shift[1];
            let s2 = b.sigma * b.sigma;
            let g = b.amplitude * (-(du * du + dv * dv) / (2.0 * s2)).exp();
            h += g;
            hu -= g * du / s2;
            hv -= g * dv / s2;
        }
        (h, hu, hv)
    }
}

impl Pose {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let tilt = rng.random_range(0.0..MAX_LIGHT_TILT_DEG).to_radians();
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            shift: [
                rng.random_range(-MAX_SHIFT..MAX_SHIFT),
                rng.random_range(-MAX_SHIFT..MAX_SHIFT),
            ],
            light: [
                tilt.sin() * azimuth.cos(),
                tilt.sin() * azimuth.sin(),
                tilt.cos(),
            ],
        }
    }
}

/// Pixel center of index `i` on a `size`-wide grid, in `[-1, 1]`.
pub fn grid_coord(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / size as f64 * 2.0 - 1.0
}

/// Unit surface normal of a height field with gradient `(hu, hv)`.
pub fn surface_normal(hu: f64, hv: f64) -> [f64; 3] {
    let n = (1.0 + hu * hu + hv * hv).sqrt();
    [-hu / n, -hv / n, 1.0 / n]
}

pub fn lambert(normal: [f64; 3], light: [f64; 3]) -> f64 {
    let d = normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2];
    AMBIENT + (1.0 - AMBIENT) * d.max(0.0)
}

pub fn render_sample(shape: &IdentityShape, pose: &Pose, size: usize) -> RenderedSample {
    let n = size * size;
    let mut height = Vec::with_capacity(n);
    let mut shading = Vec::with_capacity(n);
    for y in 0..size {
        for x in 0..size {
            let (h, hu, hv) =
                shape.height_and_gradient(grid_coord(x, size), grid_coord(y, size), pose.shift);
            height.push(h);
            shading.push(lambert(surface_normal(hu, hv), pose.light));
        }
    }
    let rgb = shape
        .albedo
        .map(|a| shading.iter().map(|s| a * s).collect::<Vec<f64>>());
    RenderedSample {
        size,
        height,
        shading,
        rgb,
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl RenderedSample {
    pub fn depth_image(&self) -> GrayImage {
        let s = self.size as u32;
        ImageBuffer::from_fn(s, s, |x, y| {
            Luma([quantize(self.height[(y * s + x) as usize])])
        })
    }

    pub fn rgb_image(&self) -> RgbImage {
        let s = self.size as u32;
        ImageBuffer::from_fn(s, s, |x, y| {
            let i = (y * s + x) as usize;
            Rgb([
                quantize(self.rgb[0][i]),
                quantize(self.rgb[1][i]),
                quantize(self.rgb[2][i]),
            ])
        })
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.samples < self.identities {
            return Err(Error::Config(format!(
                "synthetic set needs samples >= identities >= 1, got {} and {}",
                self.samples, self.identities
            )));
        }
        if self.size < MIN_SIZE {
            return Err(Error::Config(format!(
                "synthetic size {} below minimum {MIN_SIZE}",
                self.size
            )));
        }
        Ok(())
    }

    /// Every sample as `(file name, render)`, in file-name order.
    pub fn synthesize(&self) -> Result<Vec<(String, RenderedSample)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shapes: Vec<IdentityShape> = (0..self.identities)
            .map(|_| IdentityShape::random(&mut rng))
            .collect();
        let mut out = Vec::with_capacity(self.samples);
        for (id, shape) in shapes.iter().enumerate() {
            let count = self.samples / self.identities
                + usize::from(id < self.samples % self.identities);
            for k in 0..count {
                let pose = Pose::random(&mut rng);
                out.push((
                    format!("id{id:03}_{k:04}.png"),
                    render_sample(shape, &pose, self.size),
                ));
            }
        }
        Ok(out)
    }
}

/// Renders the set into `out_dir` with the standard layout and a manifest.
pub fn make_synthetic_dataset(out_dir: &Path, config: &SyntheticConfig) -> Result<DatasetManifest> {
    let samples = config.synthesize()?;
    for dir in [RGB_DIR, DEPTH_DIR] {
        let path = out_dir.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len() * 2);
    for (name, render) in &samples {
        save_png(&render.rgb_image(), &out_dir.join(RGB_DIR).join(name))?;
        save_png(&render.depth_image(), &out_dir.join(DEPTH_DIR).join(name))?;
        entries.push(format!("{RGB_DIR}/{name}"));
        entries.push(format!("{DEPTH_DIR}/{name}"));
    }
    let manifest = DatasetManifest::from_entries(out_dir, config.size, entries)?;
    manifest.write()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_blob() -> IdentityShape {
        IdentityShape {
            blobs: vec![Blob {
                center: [0.1, -0.05],
                sigma: 0.3,
                amplitude: 0.8,
            }],
            albedo: [1.0, 0.8, 0.6],
        }
    }

    #[test]
    fn viewer_light_shading_matches_finite_difference_normals() {
        let size = 64;
        let pose = Pose {
            shift: [0.0, 0.0],
            light: [0.0, 0.0, 1.0],
        };
        let r = render_sample(&one_blob(), &pose, size);
        let step = 2.0 / size as f64;
        let at = |x: usize, y: usize| r.height[y * size + x];
        for y in 1..size - 1 {
            for x in 1..size - 1 {
                let hu = (at(x + 1, y) - at(x - 1, y)) / (2.0 * step);
                let hv = (at(x, y + 1) - at(x, y - 1)) / (2.0 * step);
                let nz = 1.0 / (1.0 + hu * hu + hv * hv).sqrt();
                let expected = AMBIENT + (1.0 - AMBIENT) * nz;
                assert!(
                    (r.shading[y * size + x] - expected).abs() < 2e-3,
                    "pixel ({x},{y})"
                );
            }
        }
        // steepest slope is darkest, flat peak and background are brightest
        let (steep, _) = (1..size - 1)
            .map(|x| {
                let hu = at(x + 1, 32) - at(x - 1, 32);
                let hv = at(x, 33) - at(x, 31);
                (x, hu * hu + hv * hv)
            })
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let row = &r.shading[32 * size..33 * size];
        let darkest = row
            .iter()
            .enumerate()
            .fold((0, f64::MAX), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
        assert!((steep as isize - darkest.0 as isize).abs() <= 1);
    }

    #[test]
    fn height_gradient_is_analytic() {
        let shape = one_blob();
        let e = 1e-6;
        for &(u, v) in &[(0.0, 0.0), (0.3, -0.2), (-0.5, 0.4)] {
            let (_, hu, hv) = shape.height_and_gradient(u, v, [0.02, 0.0]);
            let fu = (shape.height_and_gradient(u + e, v, [0.02, 0.0]).0
                - shape.height_and_gradient(u - e, v, [0.02, 0.0]).0)
                / (2.0 * e);
            let fv = (shape.height_and_gradient(u, v + e, [0.02, 0.0]).0
                - shape.height_and_gradient(u, v - e, [0.02, 0.0]).0)
                / (2.0 * e);
            assert!((hu - fu).abs() < 1e-7 && (hv - fv).abs() < 1e-7);
        }
    }

    #[test]
    fn amplitudes_keep_height_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = IdentityShape::random(&mut rng);
            assert!((1..=3).contains(&s.blobs.len()));
            assert!(s.blobs.iter().map(|b| b.amplitude).sum::<f64>() <= 1.0);
        }
    }

    #[test]
    fn sample_counts_per_identity() {
        let cfg = SyntheticConfig {
            samples: 4,
            size: 8,
            identities: 2,
            seed: 1,
        };
        let names: Vec<String> = cfg.synthesize().unwrap().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["id000_0000.png", "id000_0001.png", "id001_0000.png", "id001_0001.png"]
        );
        let bad = SyntheticConfig {
            identities: 5,
            ..cfg
        };
        assert!(bad.synthesize().is_err());
    }
}
