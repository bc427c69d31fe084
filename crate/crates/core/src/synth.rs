//! Procedural faces with known coefficients: a z-buffered orthographic
//! rasterizer, seeded identities and frames, the on-disk dataset layout and
//! pretraining of the coefficient regressor.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::face::{mesh_from, Coefficients, FaceBasis, Mesh, MeshTopology, N_COEFFS, N_EXP, N_ID};
use crate::losses::{CoefficientRegressor, ConvRegressor};
use crate::nn::{Adam, AdamConfig, Module};
use crate::tensor::{backward, Tensor};

pub const BACKGROUND: f64 = 0.5;
pub const COEFF_STD: f64 = 0.3;
pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_TRANSLATION: f64 = 0.2;
pub const DATASET_VERSION: u32 = 1;

/// Row-major `[3, H, W]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Image {
            height,
            width,
            data: vec![v; 3 * height * width],
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, 3, self.height, self.width]).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::shape("image", "[1, 3, H, W]", format!("{s:?}")));
        }
        Ok(Image {
            height: s[2],
            width: s[3],
            data: t.to_vec(),
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize(*v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        Image {
            height,
            width,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Image::from_u8(self.height, self.width, &self.to_u8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let planar = self.to_u8();
        let mut rgb = Vec::with_capacity(3 * h * w);
        for p in 0..h * w {
            for c in 0..3 {
                rgb.push(planar[c * h * w + p]);
            }
        }
        image::save_buffer(
            path,
            &rgb,
            w as u32,
            h as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.into_raw();
        let mut planar = vec![0u8; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                planar[c * h * w + p] = raw[3 * p + c];
            }
        }
        Ok(Image::from_u8(h, w, &planar))
    }

    /// Images placed left to right.
    pub fn hconcat(images: &[Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("hconcat", "no images"))?;
        let h = first.height;
        if images.iter().any(|i| i.height != h) {
            return Err(Error::invalid("hconcat", "images differ in height"));
        }
        let w: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::filled(h, w, 0.0);
        let mut x0 = 0;
        for img in images {
            for c in 0..3 {
                for y in 0..h {
                    let src = &img.data[(c * h + y) * img.width..(c * h + y + 1) * img.width];
                    out.data[(c * h + y) * w + x0..(c * h + y) * w + x0 + img.width]
                        .copy_from_slice(src);
                }
            }
            x0 += img.width;
        }
        Ok(out)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Pixel coordinate of normalized position `x` on an axis of `len` pixels
/// (pixel centers at integers, the image spanning `[-1, 1]`).
pub fn to_pixel(x: f64, len: usize) -> f64 {
    (x + 1.0) * len as f64 / 2.0 - 0.5
}

/// Orthographic, z-buffered rasterization of a posed mesh. Pixel centers
/// take the barycentric blend of vertex colors from the front-most covering
/// triangle (largest z); uncovered pixels are background grey.
pub fn render_mesh(mesh: &Mesh, colors: &[[f64; 3]], height: usize, width: usize) -> Result<Image> {
    let n = mesh.topology.n_vertices;
    if colors.len() != n {
        return Err(Error::shape(
            "render",
            format!("{n} vertex colors"),
            colors.len().to_string(),
        ));
    }
    if let Some(i) = mesh.vertices.first_non_finite() {
        return Err(Error::NonFinite {
            what: "mesh vertices".into(),
            index: i,
        });
    }
    let v = mesh.vertices.data();
    let proj: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                to_pixel(v[3 * i], width),
                to_pixel(v[3 * i + 1], height),
                v[3 * i + 2],
            ]
        })
        .collect();
    let mut depth = vec![f64::NEG_INFINITY; height * width];
    let mut img = Image::filled(height, width, BACKGROUND);
    let plane = height * width;
    for f in &mesh.topology.faces {
        let [a, b, c] = [proj[f[0]], proj[f[1]], proj[f[2]]];
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let x_lo = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let x_hi = a[0].max(b[0]).max(c[0]).floor().min(width as f64 - 1.0);
        let y_lo = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let y_hi = a[1].max(b[1]).max(c[1]).floor().min(height as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        for py in y_lo as usize..=y_hi as usize {
            for px in x_lo as usize..=x_hi as usize {
                let (x, y) = (px as f64, py as f64);
                let w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / area;
                let w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let p = py * width + px;
                if z <= depth[p] {
                    continue;
                }
                depth[p] = z;
                for ch in 0..3 {
                    let col = w0 * colors[f[0]][ch] + w1 * colors[f[1]][ch] + w2 * colors[f[2]][ch];
                    img.data[ch * plane + p] = col.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(img)
}

/// Renders the posed face of `c` at `size × size`.
pub fn render(
    basis: &FaceBasis,
    c: &Coefficients,
    colors: &[[f64; 3]],
    size: usize,
) -> Result<Image> {
    render_mesh(&mesh_from(basis, c)?, colors, size, size)
}

/// Identity coefficients and a per-vertex color field.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticIdentity {
    pub identity: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xD1B54A32D192ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn bump(p: &[f64; 3], center: [f64; 3], radius: f64) -> f64 {
    let d2: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
    (-d2 / (radius * radius)).exp()
}

/// Identity `index` of a dataset seeded with `seed`. Colors follow the
/// reference sphere: a skin tone with low-frequency variation, dark eyes and
/// brows, a red mouth and darker hair on the back and top.
pub fn synthetic_identity(seed: u64, index: usize, topology: &MeshTopology) -> SyntheticIdentity {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, index as u64));
    let normal = Normal::new(0.0, COEFF_STD).expect("positive std");
    let identity: Vec<f64> = (0..N_ID).map(|_| normal.sample(&mut rng)).collect();
    let skin = [
        rng.random_range(0.55..0.9),
        rng.random_range(0.4..0.7),
        rng.random_range(0.3..0.55),
    ];
    let hair = [
        rng.random_range(0.05..0.45),
        rng.random_range(0.05..0.35),
        rng.random_range(0.0..0.3),
    ];
    let waves: Vec<([f64; 3], f64, [f64; 3])> = (0..4)
        .map(|_| {
            let dir = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let amp = [
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
            ];
            (dir, rng.random_range(0.0..std::f64::consts::TAU), amp)
        })
        .collect();
    let eye_dx = rng.random_range(0.28..0.4);
    let mouth_w = rng.random_range(0.2..0.35);
    let colors = topology
        .reference
        .iter()
        .map(|p| {
            let mut c = skin;
            for (dir, phase, amp) in &waves {
                let s = (dir[0] * p[0] + dir[1] * p[1] + dir[2] * p[2] + phase).sin();
                for k in 0..3 {
                    c[k] += amp[k] * s;
                }
            }
            let hair_w =
                (((-p[1] - 0.35) * 4.0).clamp(0.0, 1.0)).max(((-p[2] - 0.1) * 3.0).clamp(0.0, 1.0));
            let eyes =
                bump(p, [-eye_dx, -0.25, 0.9], 0.14).max(bump(p, [eye_dx, -0.25, 0.9], 0.14));
            let brows =
                bump(p, [-eye_dx, -0.45, 0.82], 0.1).max(bump(p, [eye_dx, -0.45, 0.82], 0.1));
            let mouth =
                (-(p[0] / mouth_w).powi(2) - ((p[1] - 0.5) / 0.08).powi(2)).exp() * p[2].max(0.0);
            for k in 0..3 {
                c[k] = c[k] * (1.0 - hair_w) + hair[k] * hair_w;
                c[k] *= 1.0 - 0.85 * eyes.max(0.7 * brows);
            }
            c[0] = c[0] * (1.0 - mouth) + 0.75 * mouth;
            c[1] *= 1.0 - 0.7 * mouth;
            c[2] *= 1.0 - 0.6 * mouth;
            c.map(|v| v.clamp(0.0, 1.0))
        })
        .collect();
    SyntheticIdentity { identity, colors }
}

fn rotation(ax: f64, ay: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    mul(rz, mul(ry, rx))
}

/// Expression and pose of frame `frame` of identity `index`.
pub fn synthetic_frame_coefficients(
    seed: u64,
    index: usize,
    frame: usize,
    identity: &[f64],
) -> Coefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2 + index as u64, frame as u64));
    let normal = Normal::new(0.0, COEFF_STD).expect("positive std");
    let expression: Vec<f64> = (0..N_EXP).map(|_| normal.sample(&mut rng)).collect();
    let lim = MAX_ROTATION_DEG.to_radians();
    let r = rotation(
        rng.random_range(-lim..=lim),
        rng.random_range(-lim..=lim),
        rng.random_range(-lim..=lim),
    );
    let t: Vec<f64> = (0..3)
        .map(|_| rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION))
        .collect();
    let mut pose = Vec::with_capacity(12);
    for i in 0..3 {
        pose.extend_from_slice(&r[i]);
        pose.push(t[i]);
    }
    Coefficients {
        identity: identity.to_vec(),
        expression,
        pose,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub identities: usize,
    pub frames_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub mesh_level: u32,
    pub basis_seed: u64,
}

impl DatasetMeta {
    pub fn frame_count(&self) -> usize {
        self.identities * self.frames_per_identity
    }

    pub fn to_text(&self) -> String {
        format!(
            "version={}\nseed={}\nidentities={}\nframes_per_identity={}\nheight={}\nwidth={}\nmesh_level={}\nbasis_seed={}\n",
            self.version,
            self.seed,
            self.identities,
            self.frames_per_identity,
            self.height,
            self.width,
            self.mesh_level,
            self.basis_seed
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {} is not key=value", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<u64> {
            map.get(k)
                .ok_or_else(|| Error::format(path, format!("missing key `{k}`")))?
                .parse::<u64>()
                .map_err(|e| Error::format(path, format!("key `{k}`: {e}")))
        };
        let version = get("version")? as u32;
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: DATASET_VERSION,
            });
        }
        let meta = DatasetMeta {
            version,
            seed: get("seed")?,
            identities: get("identities")? as usize,
            frames_per_identity: get("frames_per_identity")? as usize,
            height: get("height")? as usize,
            width: get("width")? as usize,
            mesh_level: get("mesh_level")? as u32,
            basis_seed: get("basis_seed")?,
        };
        if meta.identities == 0
            || meta.frames_per_identity == 0
            || meta.height == 0
            || meta.width == 0
        {
            return Err(Error::format(path, "counts and dims must be positive"));
        }
        Ok(meta)
    }
}

/// One rendered frame. `image` holds the 8-bit quantization of the render,
/// which is what the PNG on disk stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub identity_index: usize,
    pub coefficients: Coefficients,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub basis: Arc<FaceBasis>,
    pub frames: Vec<Frame>,
}

/// Builds `n_identities × frames_per_identity` frames. Every frame depends
/// only on `(seed, identity, frame)`.
pub fn make_dataset(
    seed: u64,
    basis: Arc<FaceBasis>,
    n_identities: usize,
    frames_per_identity: usize,
    size: usize,
    mesh_level: u32,
    basis_seed: u64,
) -> Result<Dataset> {
    if n_identities == 0 || frames_per_identity == 0 || size == 0 {
        return Err(Error::invalid(
            "make_dataset",
            "counts and image size must be at least 1",
        ));
    }
    let mut frames = Vec::with_capacity(n_identities * frames_per_identity);
    for id in 0..n_identities {
        let ident = synthetic_identity(seed, id, &basis.topology);
        for f in 0..frames_per_identity {
            let c = synthetic_frame_coefficients(seed, id, f, &ident.identity);
            let image = render(&basis, &c, &ident.colors, size)?.quantized();
            frames.push(Frame {
                identity_index: id,
                coefficients: c,
                image,
            });
        }
    }
    let meta = DatasetMeta {
        version: DATASET_VERSION,
        seed,
        identities: n_identities,
        frames_per_identity,
        height: size,
        width: size,
        mesh_level,
        basis_seed,
    };
    Ok(Dataset {
        meta,
        basis,
        frames,
    })
}

fn frame_file(i: usize) -> String {
    format!("frame_{i:06}.png")
}

impl Dataset {
    pub fn identity(&self, index: usize) -> SyntheticIdentity {
        synthetic_identity(self.meta.seed, index, &self.basis.topology)
    }

    /// Frame indices of one identity.
    pub fn frames_of(&self, identity: usize) -> std::ops::Range<usize> {
        let k = self.meta.frames_per_identity;
        identity * k..(identity + 1) * k
    }

    /// Writes `meta`, `basis.mgfb`, `coeffs.bin` and one PNG per frame.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("meta");
        fs::write(&meta_path, self.meta.to_text()).map_err(|e| Error::io(&meta_path, e))?;
        self.basis.save(&dir.join("basis.mgfb"))?;
        let coeff_path = dir.join("coeffs.bin");
        let mut bytes = Vec::with_capacity(self.frames.len() * N_COEFFS * 8);
        for f in &self.frames {
            for v in f.coefficients.to_vec() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = fs::File::create(&coeff_path).map_err(|e| Error::io(&coeff_path, e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(&coeff_path, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            f.image.save_png(&dir.join(frame_file(i)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = DatasetMeta::parse(&text, &meta_path)?;
        let topology = Arc::new(crate::face::icosphere(meta.mesh_level));
        let basis = Arc::new(FaceBasis::load(&dir.join("basis.mgfb"), topology)?);
        let coeff_path = dir.join("coeffs.bin");
        let bytes = fs::read(&coeff_path).map_err(|e| Error::io(&coeff_path, e))?;
        let n = meta.frame_count();
        if bytes.len() != n * N_COEFFS * 8 {
            return Err(Error::format(
                &coeff_path,
                format!("expected {} bytes, found {}", n * N_COEFFS * 8, bytes.len()),
            ));
        }
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            let vals: Vec<f64> = bytes[i * N_COEFFS * 8..(i + 1) * N_COEFFS * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let coefficients = Coefficients::from_slice(&vals)?;
            let path = dir.join(frame_file(i));
            let image = Image::load_png(&path)?;
            if image.height != meta.height || image.width != meta.width {
                return Err(Error::format(
                    &path,
                    format!("image is {}×{}", image.height, image.width),
                ));
            }
            frames.push(Frame {
                identity_index: i / meta.frames_per_identity,
                coefficients,
                image,
            });
        }
        Ok(Dataset {
            meta,
            basis,
            frames,
        })
    }

    /// Frames `indices` as one `[B, 3, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w) = (self.meta.height, self.meta.width);
        let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
        for &i in indices {
            data.extend_from_slice(&self.frames[i].image.data);
        }
        Tensor::new(data, &[indices.len(), 3, h, w])
    }

    /// Pixelwise mean over the given frames.
    pub fn mean_image(&self, indices: &[usize]) -> Result<Image> {
        if indices.is_empty() {
            return Err(Error::invalid("mean_image", "no frames"));
        }
        let mut acc = Image::filled(self.meta.height, self.meta.width, 0.0);
        for &i in indices {
            acc.data
                .iter_mut()
                .zip(&self.frames[i].image.data)
                .for_each(|(a, b)| *a += b);
        }
        let k = indices.len() as f64;
        acc.data.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }
}

/// Loss trace of a regressor pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub step0_mse: f64,
    /// Mean over the last `window` steps.
    pub final_mse: f64,
    /// `(step, mse)` samples.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Steps averaged when reporting the final MSE.
    pub window: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 5000,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            window: 50,
        }
    }
}

/// Fits a [`ConvRegressor`] to ground-truth coefficients with mean squared
/// error and Adam, on the frames listed in `train`. Returns it frozen.
pub fn pretrain_regressor(
    dataset: &Dataset,
    train: &[usize],
    config: &PretrainConfig,
) -> Result<(ConvRegressor, PretrainReport)> {
    if train.is_empty() {
        return Err(Error::invalid("pretrain_regressor", "no training frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reg = ConvRegressor::new(&mut rng, dataset.meta.height)?;
    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| train[rng.random_range(0..train.len())])
            .collect();
        let x = dataset.batch(&idx)?;
        let mut target = Vec::with_capacity(idx.len() * N_COEFFS);
        for &i in &idx {
            target.extend(dataset.frames[i].coefficients.to_vec());
        }
        let target = Tensor::new(target, &[idx.len(), N_COEFFS])?;
        let loss = reg.regress(&x)?.sub(&target)?.square().mean();
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                seed: config.seed,
                what: "regressor mse".into(),
            });
        }
        losses.push(value);
        backward(&loss)?;
        opt.step(&mut reg, "regressor")?;
        if step % 250 == 0 {
            log::info!("regressor step {step}: mse {value:.5}");
        }
    }
    reg.freeze();
    let w = config.window.clamp(1, losses.len().max(1));
    let avg = |s: &[f64]| {
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    let report = PretrainReport {
        step0_mse: losses.first().copied().unwrap_or(f64::NAN),
        final_mse: avg(&losses[losses.len().saturating_sub(w)..]),
        curve: losses
            .iter()
            .enumerate()
            .step_by(50)
            .map(|(i, &v)| (i, v))
            .collect(),
    };
    Ok((reg, report))
}
