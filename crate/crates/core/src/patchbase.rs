//! Patch-based baseline: single-label patch classification applied by a
//! sliding window, plus the wall-clock benchmark against holistic inference.

use std::collections::VecDeque;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{predict_all, softmax_rows, train, Network, NetworkSpec, Objective, SgdOptions, Tensor};
use crate::preprocess::{window_rescale, ChannelStats, InputImage, WindowSet};
use crate::synthdata::{LabeledSlice, NUM_CLASSES};

pub const PATCH_SIZE: usize = 32;
pub const PATCH_STRIDE: usize = 10;
/// Healthy tissue plus every pattern class.
pub const PATCH_CLASSES: usize = NUM_CLASSES + 1;

/// Top-left corners of every patch on the grid, row by row.
pub fn patch_grid(height: usize, width: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(Error::param("patch", "size and stride must be >= 1"));
    }
    if height < size || width < size {
        return Err(Error::Data(format!("{height}x{width} slice is smaller than a {size}x{size} patch")));
    }
    let ys = (height - size) / stride + 1;
    let xs = (width - size) / stride + 1;
    Ok((0..ys).flat_map(|i| (0..xs).map(move |j| (i * stride, j * stride))).collect())
}

/// A patch position with the majority mask id under it (0 = healthy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub y: usize,
    pub x: usize,
    pub label: usize,
}

/// Every grid patch of `slice`, labelled by the most frequent mask id (ties go to the lower id).
pub fn extract_patches(slice: &LabeledSlice, size: usize, stride: usize) -> Result<Vec<Patch>> {
    let grid = patch_grid(slice.height, slice.width, size, stride)?;
    Ok(grid
        .into_iter()
        .map(|(y, x)| {
            let mut counts = [0usize; PATCH_CLASSES];
            for r in y..y + size {
                for &m in &slice.mask[r * slice.width + x..r * slice.width + x + size] {
                    counts[m as usize] += 1;
                }
            }
            let label = (0..PATCH_CLASSES).fold(0, |best, k| if counts[k] > counts[best] { k } else { best });
            Patch { y, x, label }
        })
        .collect())
}

/// Pixels of the air-filled region enclosed by the body: low-attenuation
/// pixels not connected to the image border.
pub fn lung_region(slice: &LabeledSlice) -> Vec<bool> {
    let (h, w) = (slice.height, slice.width);
    let low: Vec<bool> = slice.hu.iter().map(|&v| v < -300).collect();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (y == 0 || x == 0 || y == h - 1 || x == w - 1) && low[y * w + x] {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let neighbours = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
        for (ny, nx) in neighbours {
            if ny < h && nx < w && low[ny * w + nx] && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    low.iter().zip(&outside).map(|(&l, &o)| l && !o).collect()
}

/// Patches with at least `min_fraction` of their pixels inside `region`.
pub fn restrict_to_region(patches: Vec<Patch>, region: &[bool], width: usize, size: usize, min_fraction: f64) -> Vec<Patch> {
    patches
        .into_iter()
        .filter(|p| {
            let inside: usize = (p.y..p.y + size)
                .map(|r| region[r * width + p.x..r * width + p.x + size].iter().filter(|&&b| b).count())
                .sum();
            inside as f64 >= min_fraction * (size * size) as f64
        })
        .collect()
}

/// The three windowed channels of a whole slice at native resolution.
fn windowed(slice: &LabeledSlice, windows: &WindowSet) -> Vec<Vec<f64>> {
    windows.0.iter().map(|&w| window_rescale(&slice.hu, w)).collect()
}

fn cut(planes: &[Vec<f64>], width: usize, p: &Patch, size: usize) -> InputImage {
    let mut data = Vec::with_capacity(3 * size * size);
    for plane in planes {
        for r in p.y..p.y + size {
            data.extend_from_slice(&plane[r * width + p.x..r * width + p.x + size]);
        }
    }
    InputImage { size, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub size: usize,
    pub stride: usize,
    /// A class enters the slice label set when more than this fraction of
    /// evaluated patches predict it.
    pub label_fraction: f64,
    /// Patches need this much overlap with the lung region to be used.
    pub min_lung_fraction: f64,
    pub windows: WindowSet,
    pub sgd: SgdOptions,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: PATCH_SIZE,
            stride: PATCH_STRIDE,
            label_fraction: 0.05,
            min_lung_fraction: 0.25,
            windows: WindowSet::default(),
            sgd: SgdOptions::default(),
        }
    }
}

/// Training patches: unstandardised images and single labels.
#[derive(Debug, Clone, Default)]
pub struct PatchDataset {
    pub images: Vec<InputImage>,
    pub labels: Vec<usize>,
}

/// Lung-restricted patches of every slice, at the configured training stride.
pub fn build_patch_dataset(slices: &[LabeledSlice], config: &PatchConfig) -> Result<PatchDataset> {
    let per_slice: Vec<PatchDataset> = slices
        .par_iter()
        .map(|s| {
            let region = lung_region(s);
            let patches = restrict_to_region(
                extract_patches(s, config.size, config.stride)?,
                &region,
                s.width,
                config.size,
                config.min_lung_fraction,
            );
            let planes = windowed(s, &config.windows);
            Ok(PatchDataset {
                images: patches.iter().map(|p| cut(&planes, s.width, p, config.size)).collect(),
                labels: patches.iter().map(|p| p.label).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = PatchDataset::default();
    for d in per_slice {
        out.images.extend(d.images);
        out.labels.extend(d.labels);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PatchModel {
    pub network: Network,
    pub config: PatchConfig,
    pub stats: ChannelStats,
}

/// Result of sliding the patch classifier over one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidePrediction {
    pub patches: Vec<Patch>,
    /// Fraction of evaluated patches assigned to each pattern class.
    pub fractions: Vec<f64>,
    pub labels: Vec<bool>,
}

impl PatchModel {
    /// Softmax training over healthy plus the pattern classes.
    pub fn fit(data: &PatchDataset, config: &PatchConfig) -> Result<(Self, Vec<f64>)> {
        if data.images.is_empty() {
            return Err(Error::Data("no training patches".into()));
        }
        let stats = ChannelStats::fit(&data.images)?;
        let inputs: Vec<Vec<f64>> = data.images.iter().map(|i| stats.apply(i)).collect();
        let mut spec = NetworkSpec::patch_default(PATCH_CLASSES);
        if config.size != PATCH_SIZE {
            spec.input.height = config.size;
            spec.input.width = config.size;
            let side = config.size / 4;
            spec.layers[6] = crate::nn::LayerSpec::dense(32 * side * side, 64);
        }
        let objective = Objective::Softmax {
            labels: data.labels.clone(),
        };
        let outcome = train(&inputs, &objective, &spec, &config.sgd)?;
        Ok((
            Self {
                network: outcome.network,
                config: *config,
                stats,
            },
            outcome.history,
        ))
    }

    /// Class probabilities for standardised patch inputs.
    pub fn probabilities(&self, images: &[InputImage]) -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<Vec<f64>> = images.iter().map(|i| self.stats.apply(i)).collect();
        let logits = predict_all(&self.network, &inputs, 64)?;
        let rows: Vec<&[f64]> = logits.iter().map(|r| r.as_slice()).collect();
        Ok(softmax_rows(&Tensor::from_rows(&rows)?).rows().map(|r| r.to_vec()).collect())
    }

    /// Classify every lung patch at `stride` and aggregate to a slice label set.
    pub fn slide_predict(&self, slice: &LabeledSlice, stride: usize) -> Result<SlidePrediction> {
        let c = &self.config;
        let region = lung_region(slice);
        let patches = restrict_to_region(
            patch_grid(slice.height, slice.width, c.size, stride)?
                .into_iter()
                .map(|(y, x)| Patch { y, x, label: 0 })
                .collect(),
            &region,
            slice.width,
            c.size,
            c.min_lung_fraction,
        );
        let mut fractions = vec![0.0; NUM_CLASSES];
        let mut labelled = patches.clone();
        if !patches.is_empty() {
            let planes = windowed(slice, &c.windows);
            let images: Vec<InputImage> = patches.iter().map(|p| cut(&planes, slice.width, p, c.size)).collect();
            for (p, probs) in labelled.iter_mut().zip(self.probabilities(&images)?) {
                p.label = (0..PATCH_CLASSES).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
                if p.label > 0 {
                    fractions[p.label - 1] += 1.0;
                }
            }
            fractions.iter_mut().for_each(|f| *f /= patches.len() as f64);
        }
        let labels = fractions.iter().map(|&f| f > c.label_fraction).collect();
        Ok(SlidePrediction {
            patches: labelled,
            fractions,
            labels,
        })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            "patch-model",
            serde_json::json!({ "spec": self.network.spec(), "config": self.config, "stats": self.stats }),
        );
        self.network.append_blocks(&mut c, "");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("patch-model")?;
        Ok(Self {
            network: Network::from_blocks(c.field("spec")?, c, "")?,
            config: c.field("config")?,
            stats: c.field("stats")?,
        })
    }
}

pub const TIMING_HEADER: &str = "method,n_slices,min_s,max_s,mean_s,threads";

/// Per-slice wall-clock statistics for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub method: String,
    pub n_slices: usize,
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
    pub threads: usize,
}

impl TimingStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{}",
            self.method, self.n_slices, self.min_s, self.max_s, self.mean_s, self.threads
        )
    }
}

/// A named per-slice inference routine.
pub type Method<'a> = (&'a str, Box<dyn Fn(&LabeledSlice) -> Result<()> + Sync + 'a>);

/// Time every method on every slice inside a pool of `threads` workers.
///
/// Each method first runs once on the first slice untimed; a slice's time is
/// the mean over `repetitions` runs.
pub fn benchmark(methods: &[Method<'_>], slices: &[LabeledSlice], repetitions: usize, threads: usize) -> Result<Vec<TimingStats>> {
    if slices.is_empty() {
        return Err(Error::Data("benchmark needs at least one slice".into()));
    }
    if repetitions == 0 || threads == 0 {
        return Err(Error::param("benchmark", "repetitions and threads must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    pool.install(|| {
        methods
            .iter()
            .map(|(name, run)| {
                run(&slices[0])?;
                let mut times = Vec::with_capacity(slices.len());
                for s in slices {
                    let start = Instant::now();
                    for _ in 0..repetitions {
                        run(s)?;
                    }
                    times.push(start.elapsed().as_secs_f64() / repetitions as f64);
                }
                Ok(TimingStats {
                    method: name.to_string(),
                    n_slices: slices.len(),
                    min_s: times.iter().cloned().fold(f64::INFINITY, f64::min),
                    max_s: times.iter().cloned().fold(0.0, f64::max),
                    mean_s: times.iter().sum::<f64>() / times.len() as f64,
                    threads,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_with(mask: Vec<u8>, hu: Vec<i16>, side: usize) -> LabeledSlice {
        LabeledSlice::new(side, side, hu, mask, "P0000", "P0000_S000").unwrap()
    }

    #[test]
    fn grid_counts() {
        assert_eq!(patch_grid(224, 224, 32, 10).unwrap().len(), 400);
        assert_eq!(patch_grid(32, 32, 32, 10).unwrap().len(), 1);
        assert_eq!(patch_grid(100, 70, 32, 32).unwrap().len(), 3 * 2);
        assert!(matches!(patch_grid(31, 64, 32, 10), Err(Error::Data(_))));
    }

    #[test]
    fn majority_labels() {
        let side = 64;
        let mut mask = vec![0u8; side * side];
        for y in 0..side {
            for x in 32..side {
                mask[y * side + x] = 4;
            }
        }
        let s = slice_with(mask, vec![0; side * side], side);
        let patches = extract_patches(&s, 32, 32).unwrap();
        assert_eq!(patches.iter().map(|p| p.label).collect::<Vec<_>>(), vec![0, 4, 0, 4]);
    }

    #[test]
    fn lung_region_excludes_outside_air() {
        // Air border, tissue ring, air core.
        let side = 20;
        let hu: Vec<i16> = (0..side * side)
            .map(|i| {
                let (y, x) = (i / side, i % side);
                let d = y.min(x).min(side - 1 - y).min(side - 1 - x);
                if d < 3 {
                    -1000
                } else if d < 6 {
                    40
                } else {
                    -850
                }
            })
            .collect();
        let s = slice_with(vec![0; side * side], hu, side);
        let region = lung_region(&s);
        assert!(!region[0]);
        assert!(!region[4 * side + 4]);
        assert!(region[10 * side + 10]);
        assert_eq!(region.iter().filter(|&&b| b).count(), 8 * 8);
    }

    #[test]
    fn benchmark_rejects_empty_input() {
        let methods: Vec<Method> = vec![("noop", Box::new(|_: &LabeledSlice| Ok(())))];
        assert!(benchmark(&methods, &[], 1, 1).is_err());
        let s = slice_with(vec![0; 1024], vec![0; 1024], 32);
        let t = benchmark(&methods, &[s], 3, 1).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].mean_s < 1e-3);
        assert!(t[0].csv_row().starts_with("noop,1,"));
    }
}
