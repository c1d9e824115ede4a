//! Deterministic synthetic keypoint dataset: a stick figure rendered as a
//! grey image, Gaussian heatmap targets, and scale/rotation/flip augmentation.

pub mod augment;
pub mod pose;
pub mod render;
pub mod skeleton;

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, ByteReader};
use crate::tensor::Tensor;

pub use augment::{augment, augment_with, AugmentParams};
pub use pose::{sample_pose, Pose};
pub use render::{quantize, render_heatmaps, render_image, to_heatmap_coords};
pub use skeleton::{JOINT_NAMES, MIRROR, NUM_JOINTS};

pub const RECORD_MAGIC: [u8; 4] = *b"CUNS";
pub const RECORD_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";
pub const RECORDS_FILE: &str = "samples.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `C×res×res`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub pose: Pose,
    /// `K×R×R` with `R = res/4`.
    pub heatmaps: Tensor<f32>,
}

/// Heatmap Gaussian width: one pixel at `R = 16`, proportional otherwise.
pub fn default_sigma(heatmap_res: usize) -> f64 {
    heatmap_res as f64 / 16.0
}

/// SplitMix64 finaliser over `(seed, index, stream)`, giving independent
/// per-sample seeds.
pub fn derive_seed(seed: u64, index: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub input_res: usize,
    pub sigma: f64,
    pub in_channels: usize,
}

impl Manifest {
    pub fn new(seed: u64, count: usize, input_res: usize, in_channels: usize) -> Result<Self> {
        let m = Manifest {
            seed,
            count,
            input_res,
            sigma: default_sigma(input_res / 4),
            in_channels,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_res < 4 || self.input_res % 4 != 0 {
            return Err(Error::Config(format!("input_res divisible by 4 (got {})", self.input_res)));
        }
        if self.in_channels < 1 {
            return Err(Error::Config("in_channels >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma > 0 (got {})", self.sigma)));
        }
        Ok(())
    }

    pub fn heatmap_res(&self) -> usize {
        self.input_res / 4
    }

    pub fn to_kv(&self) -> String {
        format!(
            "seed = {}\ncount = {}\ninput_res = {}\nsigma = {}\nin_channels = {}\n",
            self.seed, self.count, self.input_res, self.sigma, self.in_channels
        )
    }

    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        let mut fields: [Option<&str>; 5] = [None; 5];
        const KEYS: [&str; 5] = ["seed", "count", "input_res", "sigma", "in_channels"];
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("expected `key = value`, got `{line}`")))?;
            let slot = KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| Error::format(path, format!("unknown key `{}`", k.trim())))?;
            if fields[slot].replace(v.trim()).is_some() {
                return Err(Error::format(path, format!("duplicate key `{}`", KEYS[slot])));
            }
        }
        let get = |i: usize| fields[i].ok_or_else(|| Error::format(path, format!("missing key `{}`", KEYS[i])));
        let bad = |i: usize| Error::format(path, format!("invalid value for `{}`", KEYS[i]));
        let m = Manifest {
            seed: get(0)?.parse().map_err(|_| bad(0))?,
            count: get(1)?.parse().map_err(|_| bad(1))?,
            input_res: get(2)?.parse().map_err(|_| bad(2))?,
            sigma: get(3)?.parse().map_err(|_| bad(3))?,
            in_channels: get(4)?.parse().map_err(|_| bad(4))?,
        };
        m.validate()?;
        Ok(m)
    }

    /// Sample `index`, a pure function of the manifest and the index.
    pub fn generate(&self, index: usize) -> Sample {
        let pose = sample_pose(derive_seed(self.seed, index as u64, 0), self.input_res);
        let image = render_image(
            &pose,
            derive_seed(self.seed, index as u64, 1),
            self.in_channels,
            self.input_res,
        );
        let heatmaps = render_heatmaps(&pose, self.input_res, self.heatmap_res(), self.sigma);
        Sample { image, pose, heatmaps }
    }

    fn payload_floats(&self) -> usize {
        let r = self.heatmap_res();
        self.in_channels * self.input_res * self.input_res + NUM_JOINTS * r * r + NUM_JOINTS * 3
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Appends one record: 16-byte header then image, heatmaps and `K×3`
/// keypoints `(x, y, visibility)`, all little-endian binary32.
pub fn encode_record(sample: &Sample, out: &mut Vec<u8>) {
    let n = sample.image.numel() + sample.heatmaps.numel() + NUM_JOINTS * 3;
    out.extend_from_slice(&RECORD_MAGIC);
    io::put_u32(out, RECORD_VERSION);
    io::put_u64(out, (n * 4) as u64);
    io::put_f32s(out, sample.image.data());
    io::put_f32s(out, sample.heatmaps.data());
    for (p, &v) in sample.pose.joints.iter().zip(&sample.pose.visible) {
        io::put_f32s(out, &[p[0] as f32, p[1] as f32, if v { 1.0 } else { 0.0 }]);
    }
}

fn decode_record(r: &mut ByteReader<'_>, m: &Manifest) -> Result<Sample> {
    let at = r.position();
    if r.take(4)? != RECORD_MAGIC {
        return Err(r.fail(format!("bad record magic at offset {at}")));
    }
    let version = r.u32()?;
    if version != RECORD_VERSION {
        return Err(r.fail(format!("unsupported record version {version}")));
    }
    let len = r.u64()?;
    if len != (m.payload_floats() * 4) as u64 {
        return Err(r.fail(format!(
            "record at offset {at} has {len} payload bytes, manifest implies {}",
            m.payload_floats() * 4
        )));
    }
    let (res, hr) = (m.input_res, m.heatmap_res());
    let image = Tensor::from_vec([m.in_channels, res, res], r.f32s(m.in_channels * res * res)?)?;
    let heatmaps = Tensor::from_vec([NUM_JOINTS, hr, hr], r.f32s(NUM_JOINTS * hr * hr)?)?;
    let kp = r.f32s(NUM_JOINTS * 3)?;
    let mut pose = Pose {
        joints: [[0.0; 2]; NUM_JOINTS],
        visible: [false; NUM_JOINTS],
    };
    for (k, c) in kp.chunks_exact(3).enumerate() {
        pose.joints[k] = [c[0] as f64, c[1] as f64];
        pose.visible[k] = c[2] != 0.0;
    }
    Ok(Sample { image, pose, heatmaps })
}

/// Serialises the whole dataset described by `m`.
pub fn encode_dataset(m: &Manifest) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.count * (16 + 4 * m.payload_floats()));
    for i in 0..m.count {
        encode_record(&m.generate(i), &mut out);
    }
    out
}

/// Generates the dataset and writes `manifest` and the record file into `dir`.
pub fn write_dataset(dir: &Path, m: &Manifest) -> Result<()> {
    m.validate()?;
    io::create_dir(dir)?;
    io::write_atomic(&dir.join(RECORDS_FILE), &encode_dataset(m))?;
    io::write_atomic(&dir.join(MANIFEST_FILE), m.to_kv().as_bytes())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Builds the samples in memory without touching disk.
    pub fn generate(manifest: Manifest) -> Self {
        let samples = (0..manifest.count).map(|i| manifest.generate(i)).collect();
        Dataset { manifest, samples }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = Manifest::from_kv(&io::read_text(&mpath)?, &mpath)?;
        let rpath = dir.join(RECORDS_FILE);
        let bytes = io::read_file(&rpath)?;
        let mut r = ByteReader::new(&rpath, &bytes);
        let mut samples = Vec::with_capacity(manifest.count);
        for _ in 0..manifest.count {
            samples.push(decode_record(&mut r, &manifest)?);
        }
        if r.remaining() != 0 {
            return Err(r.fail(format!("{} trailing bytes after {} records", r.remaining(), manifest.count)));
        }
        Ok(Dataset { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `val` samples for validation.
    pub fn split(self, val: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
        if val == 0 || val >= self.samples.len() {
            return Err(Error::invalid(
                "split",
                format!("validation size {val} must be in 1..{}", self.samples.len()),
            ));
        }
        let mut train = self.samples;
        let val = train.split_off(train.len() - val);
        Ok((train, val))
    }
}
