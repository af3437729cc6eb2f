//! Synthetic CT-like slices with per-pixel disease masks.
//!
//! Each slice is a body ellipse of soft tissue enclosing two lung ellipses of
//! healthy parenchyma. Disease classes are painted as irregular lesions inside
//! the lungs, each with its own attenuation texture:
//!
//! | id | class        | texture                                        |
//! |----|--------------|------------------------------------------------|
//! | 1  | GroundGlass  | hazy raised attenuation around -600 HU         |
//! | 2  | Reticular    | diagonal lattice of dense lines on -760 HU     |
//! | 3  | Honeycomb    | clustered air cysts (-950 HU) with dense walls |
//! | 4  | Emphysema    | near-air pockets around -985 HU                |
//!
//! Texture length scales are expressed in units of `grid_size / 64`, so a
//! 512×512 slice resized to 64×64 looks like a natively generated 64×64 one.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Number of disease classes.
pub const NUM_CLASSES: usize = 4;

/// Disease class names, in label-vector order (mask ids 1..=4).
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["GroundGlass", "Reticular", "Honeycomb", "Emphysema"];

pub const HU_MIN: i16 = -1400;
pub const HU_MAX: i16 = 400;

/// Side length of the reference resolution that pixel thresholds are quoted in.
pub const NATIVE_GRID: usize = 512;

/// One axial slice: attenuation grid plus per-pixel class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSlice {
    pub height: usize,
    pub width: usize,
    /// Row-major Hounsfield units in `[HU_MIN, HU_MAX]`.
    pub hu: Vec<i16>,
    /// Row-major class ids, 0 = healthy.
    pub mask: Vec<u8>,
    pub patient_id: String,
    pub slice_id: String,
}

impl LabeledSlice {
    pub fn new(
        height: usize,
        width: usize,
        hu: Vec<i16>,
        mask: Vec<u8>,
        patient_id: impl Into<String>,
        slice_id: impl Into<String>,
    ) -> Result<Self> {
        if hu.len() != height * width || mask.len() != height * width {
            return Err(Error::Shape(format!(
                "slice grids must be {height}x{width}, got hu={} mask={}",
                hu.len(),
                mask.len()
            )));
        }
        if let Some(bad) = mask.iter().find(|&&m| m as usize > NUM_CLASSES) {
            return Err(Error::Data(format!("mask id {bad} outside 0..={NUM_CLASSES}")));
        }
        Ok(Self {
            height,
            width,
            hu,
            mask,
            patient_id: patient_id.into(),
            slice_id: slice_id.into(),
        })
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Pixels per disease class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountVector(pub [u64; NUM_CLASSES]);

impl CountVector {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Per-pixel tally of the mask. `counts[k]` is the number of pixels with id `k + 1`.
pub fn mask_to_counts(slice: &LabeledSlice) -> CountVector {
    let mut counts = [0u64; NUM_CLASSES];
    for &m in &slice.mask {
        if m > 0 {
            counts[m as usize - 1] += 1;
        }
    }
    CountVector(counts)
}

/// Transfer function from pixel counts to regression / classification targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelMapping {
    Identity,
    /// 1 iff `count >= threshold`.
    Step { threshold: f64 },
    /// 0 below `low`, 1 above `high`, linear in between.
    Piecewise { low: f64, high: f64 },
}

impl LabelMapping {
    pub fn step(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::param("T", format!("step threshold must be > 0, got {threshold}")));
        }
        Ok(LabelMapping::Step { threshold })
    }

    pub fn piecewise(low: f64, high: f64) -> Result<Self> {
        if !(low >= 0.0 && low < high && high.is_finite()) {
            return Err(Error::param(
                "T1,T2",
                format!("piecewise thresholds need 0 <= T1 < T2, got {low}, {high}"),
            ));
        }
        Ok(LabelMapping::Piecewise { low, high })
    }

    /// Piecewise mapping with the default knots `T/2` and `T`.
    pub fn piecewise_default(threshold: f64) -> Result<Self> {
        Self::piecewise(threshold / 2.0, threshold)
    }

    /// Parse `identity`, `step:T` or `piecewise:T1,T2` (or `piecewise:T`).
    pub fn parse(text: &str) -> Result<Self> {
        let usage = || Error::Usage(format!("bad mapping `{text}`; expected identity | step:T | piecewise:T1,T2"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| usage());
        match text.split_once(':') {
            None if text == "identity" => Ok(LabelMapping::Identity),
            Some(("step", t)) => Self::step(num(t)?).map_err(|e| Error::Usage(e.to_string())),
            Some(("piecewise", rest)) => match rest.split_once(',') {
                Some((a, b)) => Self::piecewise(num(a)?, num(b)?),
                None => Self::piecewise_default(num(rest)?),
            }
            .map_err(|e| Error::Usage(e.to_string())),
            _ => Err(usage()),
        }
    }

    /// Multiply every threshold by `factor` (used to move thresholds quoted at
    /// 512×512 onto smaller grids).
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            LabelMapping::Identity => LabelMapping::Identity,
            LabelMapping::Step { threshold } => LabelMapping::Step {
                threshold: threshold * factor,
            },
            LabelMapping::Piecewise { low, high } => LabelMapping::Piecewise {
                low: low * factor,
                high: high * factor,
            },
        }
    }

    /// The presence threshold implied by this mapping, if any.
    pub fn presence_threshold(&self) -> Option<f64> {
        match *self {
            LabelMapping::Identity => None,
            LabelMapping::Step { threshold } => Some(threshold),
            LabelMapping::Piecewise { high, .. } => Some(high),
        }
    }

    pub fn apply(&self, count: f64) -> f64 {
        match *self {
            LabelMapping::Identity => count,
            LabelMapping::Step { threshold } => {
                if count >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            LabelMapping::Piecewise { low, high } => {
                if count <= low {
                    0.0
                } else if count >= high {
                    1.0
                } else {
                    (count - low) / (high - low)
                }
            }
        }
    }
}

impl std::fmt::Display for LabelMapping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelMapping::Identity => write!(f, "identity"),
            LabelMapping::Step { threshold } => write!(f, "step:{threshold}"),
            LabelMapping::Piecewise { low, high } => write!(f, "piecewise:{low},{high}"),
        }
    }
}

/// Slice-level targets, one entry per disease class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelVector(pub [f64; NUM_CLASSES]);

impl LabelVector {
    pub fn is_healthy(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

pub fn map_counts_to_labels(counts: &CountVector, mapping: &LabelMapping) -> LabelVector {
    let mut y = [0.0; NUM_CLASSES];
    for (out, &c) in y.iter_mut().zip(&counts.0) {
        *out = mapping.apply(c as f64);
    }
    LabelVector(y)
}

/// Texture knobs for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Standard deviation of per-pixel attenuation noise, in HU.
    pub noise_hu: f64,
    /// Lesion area as a fraction of one lung's area, `(min, max)`.
    pub lesion_fraction: (f64, f64),
    /// Probability that a healthy lung pixel is a bright vessel cross-section.
    pub vessel_density: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            noise_hu: 25.0,
            lesion_fraction: (0.2, 0.6),
            vessel_density: 0.006,
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub num_patients: usize,
    pub slices_per_patient: usize,
    pub grid_size: usize,
    /// Per-slice probability that each class is painted.
    pub prevalence: [f64; NUM_CLASSES],
    pub texture: TextureParams,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_patients: 20,
            slices_per_patient: 8,
            grid_size: 64,
            prevalence: [0.35, 0.3, 0.25, 0.3],
            texture: TextureParams::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_patients < 1 {
            return Err(Error::param("num_patients", "must be >= 1"));
        }
        if self.slices_per_patient < 1 {
            return Err(Error::param("slices_per_patient", "must be >= 1"));
        }
        if self.grid_size < 32 {
            return Err(Error::param("grid_size", format!("must be >= 32, got {}", self.grid_size)));
        }
        if self.grid_size > 4096 {
            return Err(Error::param("grid_size", format!("must be <= 4096, got {}", self.grid_size)));
        }
        if let Some(p) = self.prevalence.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::param("prevalence", format!("entries must lie in [0, 1], got {p}")));
        }
        let (lo, hi) = self.texture.lesion_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::param("lesion_fraction", format!("need 0 < min <= max <= 1, got ({lo}, {hi})")));
        }
        if !(self.texture.noise_hu >= 0.0 && self.texture.noise_hu.is_finite()) {
            return Err(Error::param("noise_hu", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.texture.vessel_density) {
            return Err(Error::param("vessel_density", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Ratio between this grid's area and the 512×512 reference area.
    pub fn area_scale(&self) -> f64 {
        (self.grid_size * self.grid_size) as f64 / (NATIVE_GRID * NATIVE_GRID) as f64
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:04}")
}

/// Generate `num_patients * slices_per_patient` slices, patient-major.
///
/// Each patient draws from its own sub-seed of `(seed, patient index)`, so the
/// result does not depend on how patients are scheduled.
pub fn generate_dataset(spec: &GeneratorSpec, seed: u64) -> Result<Vec<LabeledSlice>> {
    spec.validate()?;
    let per_patient: Vec<Vec<LabeledSlice>> = (0..spec.num_patients)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::substream(seed, "data", p as u64);
            generate_patient(spec, p, &mut rng)
        })
        .collect();
    Ok(per_patient.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn area(&self) -> f64 {
        PI * self.rx * self.ry
    }
}

/// Irregular blob: an ellipse whose radius wobbles with angle.
#[derive(Debug, Clone, Copy)]
struct Lesion {
    cx: f64,
    cy: f64,
    radius: f64,
    aspect: f64,
    tilt: f64,
    lobes: f64,
    wobble: f64,
    phase: f64,
}

impl Lesion {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (s, c) = self.tilt.sin_cos();
        let u = (dx * c + dy * s) / self.aspect;
        let v = (-dx * s + dy * c) * self.aspect;
        let r = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        r <= self.radius * (1.0 + self.wobble * (self.lobes * theta + self.phase).sin())
    }
}

struct PatientStyle {
    lung_scale: f64,
    parenchyma_hu: f64,
    tissue_hu: f64,
}

fn generate_patient(spec: &GeneratorSpec, index: usize, rng: &mut Rng) -> Vec<LabeledSlice> {
    let style = PatientStyle {
        lung_scale: rng.gen_range(0.9..1.05),
        parenchyma_hu: rng.gen_range(-875.0..-825.0),
        tissue_hu: rng.gen_range(20.0..60.0),
    };
    let pid = patient_id(index);
    (0..spec.slices_per_patient)
        .map(|s| {
            let (hu, mask) = paint_slice(spec, &style, rng);
            LabeledSlice {
                height: spec.grid_size,
                width: spec.grid_size,
                hu,
                mask,
                patient_id: pid.clone(),
                slice_id: format!("{pid}_S{s:03}"),
            }
        })
        .collect()
}

fn clamp_hu(v: f64) -> i16 {
    v.round().clamp(HU_MIN as f64, HU_MAX as f64) as i16
}

fn paint_slice(spec: &GeneratorSpec, style: &PatientStyle, rng: &mut Rng) -> (Vec<i16>, Vec<u8>) {
    let n = spec.grid_size;
    let g = n as f64;
    let unit = g / 64.0;
    let tex = &spec.texture;
    let noise = Normal::new(0.0, tex.noise_hu.max(1e-12)).expect("finite sd");

    // Lung extent varies along the (implicit) cranio-caudal axis.
    let level = style.lung_scale * rng.gen_range(0.8..1.0);
    let body = Ellipse {
        cx: 0.5 * g,
        cy: 0.5 * g,
        rx: 0.46 * g,
        ry: 0.40 * g,
    };
    let lungs = [
        Ellipse {
            cx: 0.30 * g,
            cy: 0.5 * g,
            rx: 0.15 * g * level,
            ry: 0.30 * g * level,
        },
        Ellipse {
            cx: 0.70 * g,
            cy: 0.5 * g,
            rx: 0.15 * g * level,
            ry: 0.30 * g * level,
        },
    ];

    let mut hu = vec![0i16; n * n];
    let mut mask = vec![0u8; n * n];
    let mut in_lung = vec![false; n * n];

    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * n + x;
            let v = if lungs.iter().any(|l| l.contains(px, py)) {
                in_lung[i] = true;
                if rng.gen_bool(tex.vessel_density) {
                    rng.gen_range(-250.0..-50.0)
                } else {
                    style.parenchyma_hu + noise.sample(rng)
                }
            } else if body.contains(px, py) {
                style.tissue_hu + 0.4 * noise.sample(rng)
            } else {
                -1000.0 + 0.4 * noise.sample(rng)
            };
            hu[i] = clamp_hu(v);
        }
    }

    for (k, &p) in spec.prevalence.iter().enumerate() {
        if p <= 0.0 || !rng.gen_bool(p) {
            continue;
        }
        let lung = lungs[rng.gen_range(0..2)];
        let (lo, hi) = tex.lesion_fraction;
        let area = lung.area() * rng.gen_range(lo..=hi);
        // Lesion centre uniform inside the lung, pulled slightly inwards.
        let (r, t) = (rng.gen::<f64>().sqrt() * 0.7, rng.gen_range(0.0..2.0 * PI));
        let lesion = Lesion {
            cx: lung.cx + r * lung.rx * t.cos(),
            cy: lung.cy + r * lung.ry * t.sin(),
            radius: (area / PI).sqrt(),
            aspect: rng.gen_range(0.75..1.33),
            tilt: rng.gen_range(0.0..PI),
            lobes: rng.gen_range(2..6) as f64,
            wobble: rng.gen_range(0.05..0.25),
            phase: rng.gen_range(0.0..2.0 * PI),
        };
        let class = (k + 1) as u8;
        let texture = ClassTexture::draw(class, unit, rng);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if in_lung[i] && lesion.contains(px, py) {
                    mask[i] = class;
                    hu[i] = clamp_hu(texture.sample(px, py, &noise, rng));
                }
            }
        }
    }
    (hu, mask)
}

/// Per-lesion texture parameters.
struct ClassTexture {
    class: u8,
    unit: f64,
    period: f64,
    offset: (f64, f64),
    level: f64,
}

impl ClassTexture {
    fn draw(class: u8, unit: f64, rng: &mut Rng) -> Self {
        let (period, level) = match class {
            1 => (0.0, rng.gen_range(-640.0..-560.0)),
            2 => (rng.gen_range(3.5..4.5), rng.gen_range(-280.0..-220.0)),
            3 => (rng.gen_range(4.5..5.5), rng.gen_range(-140.0..-60.0)),
            _ => (0.0, rng.gen_range(-995.0..-975.0)),
        };
        Self {
            class,
            unit,
            period,
            offset: (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)),
            level,
        }
    }

    fn sample(&self, x: f64, y: f64, noise: &Normal<f64>, rng: &mut Rng) -> f64 {
        let u = x / self.unit + self.offset.0;
        let v = y / self.unit + self.offset.1;
        match self.class {
            1 => self.level + 1.2 * noise.sample(rng),
            2 => {
                // Two families of diagonal lines.
                let a = (u + v).rem_euclid(self.period);
                let b = (u - v).rem_euclid(self.period);
                if a < 1.0 || b < 1.0 {
                    self.level + noise.sample(rng)
                } else {
                    -760.0 + noise.sample(rng)
                }
            }
            3 => {
                let cu = (u / self.period).floor() * self.period + 0.5 * self.period;
                let cv = (v / self.period).floor() * self.period + 0.5 * self.period;
                let d = ((u - cu).powi(2) + (v - cv).powi(2)).sqrt();
                if d > 0.32 * self.period {
                    self.level + noise.sample(rng)
                } else {
                    -950.0 + 0.4 * noise.sample(rng)
                }
            }
            _ => self.level + 0.3 * noise.sample(rng),
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "ildnet-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub slice_id: String,
    /// Path relative to the dataset directory.
    pub file: String,
}

/// Dataset manifest. Written after all slice files, so its presence marks a
/// complete directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub grid_height: usize,
    pub grid_width: usize,
    pub seed: Option<u64>,
    pub generator: Option<GeneratorSpec>,
    pub slices: Vec<ManifestEntry>,
}

/// Slice file body: `i16` LE HU grid then `u8` mask, both row-major.
pub fn encode_slice(slice: &LabeledSlice) -> Vec<u8> {
    let mut out = Vec::with_capacity(slice.area() * 3);
    for &v in &slice.hu {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&slice.mask);
    out
}

pub fn decode_slice(
    bytes: &[u8],
    height: usize,
    width: usize,
    patient_id: &str,
    slice_id: &str,
) -> Result<LabeledSlice> {
    let area = height * width;
    if bytes.len() != area * 3 {
        return Err(Error::Data(format!(
            "slice {slice_id}: expected {} bytes for {height}x{width}, got {}",
            area * 3,
            bytes.len()
        )));
    }
    let hu = bytes[..2 * area]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    let mask = bytes[2 * area..].to_vec();
    LabeledSlice::new(height, width, hu, mask, patient_id, slice_id)
}

/// Write slices plus manifest into `dir` (created if missing).
pub fn write_dataset(
    dir: &Path,
    slices: &[LabeledSlice],
    seed: Option<u64>,
    generator: Option<&GeneratorSpec>,
) -> Result<Manifest> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Data("refusing to write an empty dataset".into()))?;
    let (h, w) = (first.height, first.width);
    let slice_dir = dir.join("slices");
    fs::create_dir_all(&slice_dir).map_err(|e| Error::io(&slice_dir, e))?;
    let mut entries = Vec::with_capacity(slices.len());
    for s in slices {
        if (s.height, s.width) != (h, w) {
            return Err(Error::Shape(format!("slice {} is {}x{}, dataset is {h}x{w}", s.slice_id, s.height, s.width)));
        }
        let rel = format!("slices/{}.bin", s.slice_id);
        let path = dir.join(&rel);
        fs::write(&path, encode_slice(s)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            patient_id: s.patient_id.clone(),
            slice_id: s.slice_id.clone(),
            file: rel,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        grid_height: h,
        grid_width: w,
        seed,
        generator: generator.cloned(),
        slices: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::format(&path, format!("unexpected format `{}`", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
    }
    Ok(manifest)
}

/// Load every slice listed in the manifest.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<LabeledSlice>)> {
    let manifest = read_manifest(dir)?;
    let slices = manifest
        .slices
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            decode_slice(&bytes, manifest.grid_height, manifest.grid_width, &e.patient_id, &e.slice_id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, slices))
}
