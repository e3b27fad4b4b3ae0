//! Datasets, seeded subsetting and differentiable augmentation.
//!
//! The built-in synthetic dataset places one bright block per mode on a dark
//! background, which makes mode coverage directly measurable: a generated
//! image is assigned to the nearest template. Subsetting is stratified so a
//! fraction of a balanced dataset stays balanced.

use crate::autodiff::{ImgShape, Tape, Var};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::rng::{StreamRng, STREAM_SUBSET};

/// In-memory labeled image set. Pixel values live in [-1, 1] and rows are
/// channel-major flattened images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Mat,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub channels: usize,
    pub image_size: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn img_shape(&self) -> ImgShape {
        ImgShape {
            c: self.channels,
            h: self.image_size,
            w: self.image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(KdError::degenerate("dataset has no samples"));
        }
        if self.images.cols() != self.channels * self.image_size * self.image_size {
            return Err(KdError::shape(format!(
                "dataset rows have {} values, expected {}x{}x{}",
                self.images.cols(),
                self.channels,
                self.image_size,
                self.image_size
            )));
        }
        if self.labels.len() != self.len() {
            return Err(KdError::shape(format!(
                "{} labels for {} images",
                self.labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(KdError::invalid(format!(
                "label {} outside 0..{}",
                bad,
                self.num_classes()
            )));
        }
        if !self.images.all_finite() {
            return Err(KdError::numeric("dataset contains non-finite pixels"));
        }
        if self
            .images
            .data()
            .iter()
            .any(|&v| !(-1.0..=1.0).contains(&v))
        {
            return Err(KdError::invalid("dataset pixels outside [-1, 1]"));
        }
        Ok(())
    }

    /// Draws a batch uniformly with replacement from the given stream.
    pub fn draw_batch(&self, batch_size: usize, stream: &mut StreamRng) -> (Mat, Vec<usize>) {
        let mut images = Mat::zeros(batch_size, self.images.cols());
        let mut labels = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let i = stream.below(self.len());
            images.row_mut(b).copy_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    /// Retains exactly the given (sorted, validated) indices.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut images = Mat::zeros(indices.len(), self.images.cols());
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(KdError::invalid(format!(
                    "index {} outside dataset of {}",
                    i,
                    self.len()
                )));
            }
            images.row_mut(row).copy_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            images,
            labels,
            class_names: self.class_names.clone(),
            channels: self.channels,
            image_size: self.image_size,
        })
    }
}

/// Parameters of the synthetic block-per-mode dataset.
#[derive(Debug, Clone)]
pub struct SyntheticModesSpec {
    pub num_modes: usize,
    pub samples_per_mode: usize,
    pub image_size: usize,
    /// Gaussian pixel noise scale; images are clamped back to [-1, 1].
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticModesSpec {
    fn default() -> SyntheticModesSpec {
        SyntheticModesSpec {
            num_modes: 8,
            samples_per_mode: 100,
            image_size: 8,
            jitter: 0.1,
            seed: 0,
        }
    }
}

/// Noise-free class prototypes, one bright block per grid cell on a -1
/// background. Row k is the flattened template of mode k.
pub fn mode_templates(num_modes: usize, image_size: usize) -> Result<Mat> {
    if num_modes == 0 {
        return Err(KdError::invalid("mode_templates: need at least one mode"));
    }
    let grid = (num_modes as f64).sqrt().ceil() as usize;
    if image_size < grid {
        return Err(KdError::invalid(format!(
            "mode_templates: image_size {} too small for a {}x{} mode grid",
            image_size, grid, grid
        )));
    }
    let cell = image_size / grid;
    let mut t = Mat::filled(num_modes, image_size * image_size, -1.0);
    for k in 0..num_modes {
        let (gx, gy) = (k % grid, k / grid);
        let row = t.row_mut(k);
        for y in gy * cell..(gy + 1) * cell {
            for x in gx * cell..(gx + 1) * cell {
                row[y * image_size + x] = 1.0;
            }
        }
    }
    Ok(t)
}

/// Builds the jittered single-channel dataset; sample i of mode k sits at row
/// k * samples_per_mode + i.
pub fn make_synthetic_modes(spec: &SyntheticModesSpec) -> Result<Dataset> {
    if spec.num_modes < 2 {
        return Err(KdError::invalid(format!(
            "make_synthetic_modes: need at least 2 modes, got {}",
            spec.num_modes
        )));
    }
    if spec.samples_per_mode == 0 {
        return Err(KdError::invalid(
            "make_synthetic_modes: samples_per_mode must be positive",
        ));
    }
    if !(spec.jitter.is_finite() && spec.jitter >= 0.0) {
        return Err(KdError::invalid(format!(
            "make_synthetic_modes: jitter {} must be finite and non-negative",
            spec.jitter
        )));
    }
    let templates = mode_templates(spec.num_modes, spec.image_size)?;
    let n = spec.num_modes * spec.samples_per_mode;
    let len = spec.image_size * spec.image_size;
    let mut rng = StreamRng::new(spec.seed, "data:modes");
    let mut images = Mat::zeros(n, len);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.num_modes {
        for i in 0..spec.samples_per_mode {
            let row = images.row_mut(k * spec.samples_per_mode + i);
            let noise = rng.fill_normal(len);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = (templates.get(k, j) + spec.jitter * noise[j]).clamp(-1.0, 1.0);
            }
            labels.push(k);
        }
    }
    Ok(Dataset {
        images,
        labels,
        class_names: (0..spec.num_modes).map(|k| format!("mode_{}", k)).collect(),
        channels: 1,
        image_size: spec.image_size,
    })
}

/// Outcome of a stratified subset selection.
#[derive(Debug, Clone)]
pub struct SubsetReport {
    /// Sorted, unique indices into the source dataset.
    pub indices: Vec<usize>,
    /// One message per class that ended up empty despite having samples.
    pub warnings: Vec<String>,
}

/// Stratified subset: the total is round(fraction * N) and every class keeps
/// within one sample of fraction * its own count (largest-remainder split).
/// Which samples survive inside a class is a seeded shuffle.
pub fn subset_indices(
    labels: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<SubsetReport> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(KdError::invalid(format!(
            "subset fraction {} outside (0, 1]",
            fraction
        )));
    }
    if labels.is_empty() {
        return Err(KdError::degenerate("subset of an empty dataset"));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(KdError::invalid(format!(
                "label {} outside 0..{}",
                l, num_classes
            )));
        }
        per_class[l].push(i);
    }

    let total = (fraction * labels.len() as f64).round() as usize;
    if total == 0 {
        return Err(KdError::degenerate(format!(
            "subset fraction {} of {} samples selects nothing",
            fraction,
            labels.len()
        )));
    }

    // Largest-remainder quota: floor everywhere, then hand the shortfall to
    // the classes with the largest fractional parts (ties by class index).
    let exact: Vec<f64> = per_class
        .iter()
        .map(|c| fraction * c.len() as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let floored: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(floored)) {
        quota[c] += 1;
    }
    for (c, q) in quota.iter_mut().enumerate() {
        *q = (*q).min(per_class[c].len());
    }

    let mut rng = StreamRng::new(seed, STREAM_SUBSET);
    let mut indices = Vec::with_capacity(total);
    let mut warnings = Vec::new();
    for (c, members) in per_class.iter().enumerate() {
        let mut pool = members.clone();
        rng.shuffle(&mut pool);
        indices.extend_from_slice(&pool[..quota[c]]);
        if quota[c] == 0 && !members.is_empty() {
            warnings.push(format!(
                "class {} kept no samples after subsetting (had {})",
                c,
                members.len()
            ));
        }
    }
    indices.sort_unstable();
    Ok(SubsetReport { indices, warnings })
}

/// Applies the stratified selection to a dataset.
pub fn load_subset(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<String>)> {
    ds.validate()?;
    let report = subset_indices(&ds.labels, ds.num_classes(), fraction, seed)?;
    let sub = ds.select(&report.indices)?;
    Ok((sub, report.warnings))
}

/// Augmentation policy. `Basic` combines a small random translation with a
/// half-size cutout; one shared draw per training step keeps real and fake
/// batches aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentPolicy {
    None,
    Basic,
}

/// One concrete augmentation: translate by (dx, dy) with zero fill, then
/// zero a square of half the image side at (cx, cy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dx: i64,
    pub dy: i64,
    pub cx: usize,
    pub cy: usize,
    pub cut: usize,
}

/// Draws augmentation parameters, or nothing when the policy is off. The off
/// branch consumes no randomness, so disabling augmentation leaves every
/// other stream untouched.
pub fn sample_augment(
    policy: AugmentPolicy,
    image_size: usize,
    stream: &mut StreamRng,
) -> Option<AugmentDraw> {
    match policy {
        AugmentPolicy::None => None,
        AugmentPolicy::Basic => {
            let max_shift = (image_size / 8).max(1) as i64;
            let cut = (image_size / 2).max(1);
            let dx = stream.range_inclusive(-max_shift, max_shift);
            let dy = stream.range_inclusive(-max_shift, max_shift);
            let cx = stream.below(image_size - cut + 1);
            let cy = stream.below(image_size - cut + 1);
            Some(AugmentDraw {
                dx,
                dy,
                cx,
                cy,
                cut,
            })
        }
    }
}

fn cutout_mask(draw: &AugmentDraw, shape: ImgShape) -> Mat {
    let mut mask = Mat::filled(1, shape.c * shape.h * shape.w, 1.0);
    let row = mask.row_mut(0);
    for c in 0..shape.c {
        for y in draw.cy..(draw.cy + draw.cut).min(shape.h) {
            for x in draw.cx..(draw.cx + draw.cut).min(shape.w) {
                row[c * shape.h * shape.w + y * shape.w + x] = 0.0;
            }
        }
    }
    mask
}

/// Differentiable application on a tape: shift, then multiply by the cutout
/// mask broadcast over the batch.
pub fn apply_augment_tape(
    tape: &mut Tape,
    images: Var,
    draw: &AugmentDraw,
    shape: ImgShape,
) -> Var {
    let shifted = tape.shift(images, shape, draw.dx, draw.dy);
    let mask = cutout_mask(draw, shape);
    let batch = tape.value(shifted).rows();
    let mut full = Mat::zeros(batch, mask.cols());
    for b in 0..batch {
        full.row_mut(b).copy_from_slice(mask.row(0));
    }
    let mask_var = tape.constant(full);
    tape.mul_elem(shifted, mask_var)
}

/// Value-level twin of the tape application; bit-identical by construction
/// of both paths (integer indexing, same operation order).
pub fn apply_augment_value(images: &Mat, draw: &AugmentDraw, shape: ImgShape) -> Mat {
    let plane = shape.h * shape.w;
    assert_eq!(
        images.cols(),
        shape.c * plane,
        "augment: image layout mismatch"
    );
    let mask = cutout_mask(draw, shape);
    let mut out = Mat::zeros(images.rows(), images.cols());
    for b in 0..images.rows() {
        let src = images.row(b);
        let dst = out.row_mut(b);
        for c in 0..shape.c {
            for y in 0..shape.h {
                let sy = y as i64 - draw.dy;
                if sy < 0 || sy >= shape.h as i64 {
                    continue;
                }
                for x in 0..shape.w {
                    let sx = x as i64 - draw.dx;
                    if sx < 0 || sx >= shape.w as i64 {
                        continue;
                    }
                    dst[c * plane + y * shape.w + x] =
                        src[c * plane + sy as usize * shape.w + sx as usize];
                }
            }
        }
        for (j, m) in mask.row(0).iter().enumerate() {
            dst[j] *= m;
        }
    }
    out
}
