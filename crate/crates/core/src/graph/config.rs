use std::fmt;

use crate::error::{Error, Result};

/// Hyper-parameters of a coupled (or, with `coupling` off, stacked) U-Net cascade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CUNetConfig {
    /// Number of U-Nets in the cascade.
    pub unets: usize,
    /// Main-flow channel count.
    pub m: usize,
    /// Channels generated by every semantic block.
    pub n: usize,
    /// Resolution levels per U-Net.
    pub depth: usize,
    pub keypoints: usize,
    pub in_channels: usize,
    /// Side of the square input image.
    pub input_res: usize,
    pub coupling: bool,
    /// Supervision heads, counting the final one.
    pub supervisions: usize,
    pub seed: u64,
}

const KEYS: [&str; 10] = [
    "u",
    "m",
    "n",
    "depth",
    "keypoints",
    "in_channels",
    "input_res",
    "coupling",
    "supervisions",
    "seed",
];

impl CUNetConfig {
    /// m=128, n=32 with D=4 at 256×256 input.
    pub fn paper(unets: usize, supervisions: usize) -> Self {
        CUNetConfig {
            unets,
            m: 128,
            n: 32,
            depth: 4,
            keypoints: 16,
            in_channels: 3,
            input_res: 256,
            coupling: true,
            supervisions,
            seed: 0,
        }
    }

    /// CU-Net-8 with heads after U-Nets 2, 4, 6 and 8.
    pub fn cu_net_8() -> Self {
        Self::paper(8, 4)
    }

    /// Desk-scale CU-Net: m=32, n=16, D=3, 64×64 grayscale input.
    pub fn desk(unets: usize) -> Self {
        CUNetConfig {
            unets,
            m: 32,
            n: 16,
            depth: 3,
            keypoints: 16,
            in_channels: 1,
            input_res: 64,
            coupling: true,
            supervisions: 1,
            seed: 0,
        }
    }

    /// Smallest useful cascade, used for gradient checks.
    pub fn tiny() -> Self {
        CUNetConfig {
            unets: 2,
            m: 8,
            n: 4,
            depth: 2,
            keypoints: 4,
            in_channels: 1,
            input_res: 32,
            coupling: true,
            supervisions: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.unets < 1 {
            return fail("u >= 1".into());
        }
        if self.depth < 1 {
            return fail("depth >= 1".into());
        }
        if self.n < 1 || self.m < self.n {
            return fail(format!("m >= n >= 1 (m={}, n={})", self.m, self.n));
        }
        if self.keypoints < 1 || self.in_channels < 1 {
            return fail("keypoints >= 1 and in_channels >= 1".into());
        }
        check_resolution(self.input_res, self.depth)?;
        if self.supervisions < 1 || self.supervisions > self.unets {
            return fail(format!(
                "1 <= supervisions <= u (supervisions={}, u={})",
                self.supervisions, self.unets
            ));
        }
        Ok(())
    }

    /// Side of the U-Net working resolution and of the output heatmaps.
    pub fn heatmap_res(&self) -> usize {
        self.input_res / 4
    }

    /// Renders the `key = value` document.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn entries(&self) -> [(&'static str, String); 10] {
        [
            ("u", self.unets.to_string()),
            ("m", self.m.to_string()),
            ("n", self.n.to_string()),
            ("depth", self.depth.to_string()),
            ("keypoints", self.keypoints.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("input_res", self.input_res.to_string()),
            ("coupling", self.coupling.to_string()),
            ("supervisions", self.supervisions.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Parses a `key = value` document. Every key must be present exactly
    /// once; unknown keys are rejected. Blank lines and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let v = parse_doc(text, &KEYS)?;
        let coupling = match v[7] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Config(format!("`coupling` must be true or false, got `{other}`"))),
        };
        Ok(CUNetConfig {
            unets: parse_num(&v, &KEYS, 0)?,
            m: parse_num(&v, &KEYS, 1)?,
            n: parse_num(&v, &KEYS, 2)?,
            depth: parse_num(&v, &KEYS, 3)?,
            keypoints: parse_num(&v, &KEYS, 4)?,
            in_channels: parse_num(&v, &KEYS, 5)?,
            input_res: parse_num(&v, &KEYS, 6)?,
            coupling,
            supervisions: parse_num(&v, &KEYS, 8)?,
            seed: parse_num(&v, &KEYS, 9)?,
        })
    }

    /// Applies a single `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = String::new();
        for (k, v) in self.entries() {
            let v = if k == key { value.to_string() } else { v };
            doc.push_str(&format!("{k} = {v}\n"));
        }
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        *self = Self::from_kv(&doc)?;
        Ok(())
    }
}

impl fmt::Display for CUNetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Values of `keys`, in order, from a `key = value` document.
pub(crate) fn parse_doc<'a>(text: &'a str, keys: &[&str]) -> Result<Vec<&'a str>> {
    let mut values: Vec<Option<&str>> = vec![None; keys.len()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        let slot = keys
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)))?;
        if values[slot].replace(value.trim()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    values
        .into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| Error::Config(format!("missing key `{k}`"))))
        .collect()
}

fn parse_num<N: std::str::FromStr>(values: &[&str], keys: &[&str], i: usize) -> Result<N> {
    values[i]
        .parse()
        .map_err(|_| Error::Config(format!("`{}` must be a non-negative integer", keys[i])))
}

pub(crate) fn check_resolution(input_res: usize, depth: usize) -> Result<()> {
    if input_res == 0 || input_res % 4 != 0 {
        return Err(Error::Config(format!("input_res divisible by 4 (got {input_res})")));
    }
    let r = input_res / 4;
    let levels = 1usize.checked_shl(depth as u32).unwrap_or(0);
    if levels == 0 || r % levels != 0 || r < levels {
        return Err(Error::Config(format!(
            "input_res/4 divisible by 2^depth (input_res={input_res}, depth={depth})"
        )));
    }
    Ok(())
}

/// A single U-Net whose semantic positions hold dense blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseUNetConfig {
    /// Layers per dense block.
    pub layers: usize,
    /// Channels added by every dense layer.
    pub growth: usize,
    /// Width of each layer's 1×1 bottleneck, conventionally `4 * growth`.
    pub bottleneck: usize,
    /// Width the 1×1 compression maps every block back to.
    pub m: usize,
    pub depth: usize,
    pub keypoints: usize,
    pub in_channels: usize,
    pub input_res: usize,
    pub seed: u64,
}

impl DenseUNetConfig {
    pub fn new(layers: usize, growth: usize, like: &CUNetConfig) -> Self {
        DenseUNetConfig {
            layers,
            growth,
            bottleneck: 4 * growth,
            m: like.m,
            depth: like.depth,
            keypoints: like.keypoints,
            in_channels: like.in_channels,
            input_res: like.input_res,
            seed: like.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.growth < 1 || self.bottleneck < 1 {
            return Err(Error::Config(format!(
                "layers >= 1, growth >= 1, bottleneck >= 1 (got {}, {}, {})",
                self.layers, self.growth, self.bottleneck
            )));
        }
        if self.m < 1 || self.depth < 1 || self.keypoints < 1 || self.in_channels < 1 {
            return Err(Error::Config("m, depth, keypoints, in_channels >= 1".into()));
        }
        check_resolution(self.input_res, self.depth)
    }

    pub fn heatmap_res(&self) -> usize {
        self.input_res / 4
    }

    pub fn to_kv(&self) -> String {
        let vals = [
            self.layers.to_string(),
            self.growth.to_string(),
            self.bottleneck.to_string(),
            self.m.to_string(),
            self.depth.to_string(),
            self.keypoints.to_string(),
            self.in_channels.to_string(),
            self.input_res.to_string(),
            self.seed.to_string(),
        ];
        DENSE_KEYS
            .iter()
            .zip(vals)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let v = parse_doc(text, &DENSE_KEYS)?;
        let k = &DENSE_KEYS;
        Ok(DenseUNetConfig {
            layers: parse_num(&v, k, 0)?,
            growth: parse_num(&v, k, 1)?,
            bottleneck: parse_num(&v, k, 2)?,
            m: parse_num(&v, k, 3)?,
            depth: parse_num(&v, k, 4)?,
            keypoints: parse_num(&v, k, 5)?,
            in_channels: parse_num(&v, k, 6)?,
            input_res: parse_num(&v, k, 7)?,
            seed: parse_num(&v, k, 8)?,
        })
    }
}

const DENSE_KEYS: [&str; 9] = [
    "layers",
    "growth",
    "bottleneck",
    "m",
    "depth",
    "keypoints",
    "in_channels",
    "input_res",
    "seed",
];
