//! Dense containers shared by every stage: feature grids, masks, flow fields
//! and video clips.
//!
//! Everything is stored row-major: a cell `(h, w)` lives at linear index
//! `h * width + w`, and a feature map keeps the channels of one cell
//! contiguous.

use crate::error::{invalid, shape, Error, Result};

/// Row-major linear index of `(h, w)` on a grid of the given size.
pub fn linear_index(h: usize, w: usize, height: usize, width: usize) -> Result<usize> {
    if h >= height || w >= width {
        return Err(Error::OutOfBounds { h, w, height, width });
    }
    Ok(h * width + w)
}

/// Borrowed `rows x dim` matrix.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(shape(format!("{} values do not form rows of width {dim}", data.len())));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

/// Dense `height x width x dim` grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(invalid(format!(
                "feature map dims must be positive, got {height}x{width}x{dim}"
            )));
        }
        if data.len() != height * width * dim {
            return Err(shape(format!(
                "expected {} values for {height}x{width}x{dim}, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite feature value at offset {i}")));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Result<Self> {
        Self::new(height, width, dim, vec![0.0; height * width * dim])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid cells, `height * width`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for perturbation-based checks. Callers must keep the
    /// values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The `dim`-vector stored at `(h, w)`.
    pub fn feature_at(&self, h: usize, w: usize) -> Result<&[f64]> {
        let i = linear_index(h, w, self.height, self.width)?;
        Ok(self.cell(i))
    }

    /// The vector of the cell at linear index `i`. Panics when out of range.
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// All cells as an `L x dim` matrix.
    pub fn rows(&self) -> Rows<'_> {
        Rows {
            data: &self.data,
            dim: self.dim,
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.dim == other.dim
    }
}

/// Ground-truth mask with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("mask dims must be positive"));
        }
        if data.len() != height * width {
            return Err(shape(format!(
                "expected {} mask entries, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(invalid("mask entries must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                data.push(u8::from(f(h, w)));
            }
        }
        Self::new(height, width, data)
    }

    /// Binarizes a probability mask: `p >= threshold` becomes shadow.
    pub fn threshold(prob: &ProbMask, threshold: f64) -> Self {
        Self {
            height: prob.height,
            width: prob.width,
            data: prob.data.iter().map(|&p| u8::from(p >= threshold)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.data[h * self.width + w] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_shape<T: Grid>(&self, other: &T) -> bool {
        self.height == other.grid_height() && self.width == other.grid_width()
    }

    /// Flips every cell.
    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn to_prob(&self) -> ProbMask {
        ProbMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Mirrors the mask left-to-right.
    pub fn flipped_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Predicted shadow probability per cell, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("mask dims must be positive"));
        }
        if data.len() != height * width {
            return Err(shape(format!(
                "expected {} probabilities, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probabilities must be finite and in [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.width + w]
    }

    /// Nearest-neighbour upsampling by an integer factor (block replication).
    pub fn upsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("upsample factor must be positive"));
        }
        let (oh, ow) = (self.height * factor, self.width * factor);
        let mut data = Vec::with_capacity(oh * ow);
        for h in 0..oh {
            for w in 0..ow {
                data.push(self.get(h / factor, w / factor));
            }
        }
        Ok(Self {
            height: oh,
            width: ow,
            data,
        })
    }
}

/// Per-cell pixel displacement `(dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("flow dims must be positive"));
        }
        if data.len() != height * width {
            return Err(shape(format!(
                "expected {} flow vectors, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("flow values must be finite"));
        }
        Ok(Self { height, width, data })
    }

    pub fn uniform(height: usize, width: usize, dx: f32, dy: f32) -> Result<Self> {
        Self::new(height, width, vec![[dx, dy]; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    /// `(dx, dy)` at `(h, w)`.
    pub fn get(&self, h: usize, w: usize) -> [f32; 2] {
        self.data[h * self.width + w]
    }
}

/// Anything laid out on a `height x width` grid.
pub trait Grid {
    fn grid_height(&self) -> usize;
    fn grid_width(&self) -> usize;
}

macro_rules! impl_grid {
    ($($t:ty),*) => {$(
        impl Grid for $t {
            fn grid_height(&self) -> usize { self.height }
            fn grid_width(&self) -> usize { self.width }
        }
    )*};
}

impl_grid!(FeatureMap, BinaryMask, ProbMask, FlowField, RgbFrame);

pub(crate) fn check_same_grid(a: &impl Grid, b: &impl Grid, what: &str) -> Result<()> {
    if a.grid_height() != b.grid_height() || a.grid_width() != b.grid_width() {
        return Err(shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.grid_height(),
            a.grid_width(),
            b.grid_height(),
            b.grid_width()
        )));
    }
    Ok(())
}

/// RGB frame with channel values in `[0, 1]`, stored `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbFrame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("frame dims must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(shape(format!(
                "expected {} channel values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("frame values must be finite and in [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, h: usize, w: usize) -> [f64; 3] {
        let o = (h * self.width + w) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Applies `f` to every channel value, clamping the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * 3) {
            for px in row.chunks_exact(3).rev() {
                data.extend_from_slice(px);
            }
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// A clip of `T` frames with per-frame ground truth and optional
/// frame-to-frame flows (`T - 1` of them).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<RgbFrame>,
    gt_masks: Vec<BinaryMask>,
    flows: Option<Vec<FlowField>>,
}

impl VideoClip {
    pub fn new(frames: Vec<RgbFrame>, gt_masks: Vec<BinaryMask>, flows: Option<Vec<FlowField>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(invalid("clip has no frames"));
        }
        if frames.len() != gt_masks.len() {
            return Err(shape(format!("{} frames but {} masks", frames.len(), gt_masks.len())));
        }
        let first = &frames[0];
        for f in &frames {
            check_same_grid(first, f, "frame shapes differ")?;
        }
        for m in &gt_masks {
            check_same_grid(first, m, "mask shape differs from frames")?;
        }
        if let Some(flows) = &flows {
            if flows.len() + 1 != frames.len() {
                return Err(shape(format!(
                    "{} frames need {} flows, got {}",
                    frames.len(),
                    frames.len() - 1,
                    flows.len()
                )));
            }
            for fl in flows {
                check_same_grid(first, fl, "flow shape differs from frames")?;
            }
        }
        Ok(Self {
            frames,
            gt_masks,
            flows,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn gt_masks(&self) -> &[BinaryMask] {
        &self.gt_masks
    }

    pub fn flows(&self) -> Option<&[FlowField]> {
        self.flows.as_deref()
    }
}

/// Majority-pools a mask down to `target_h x target_w`.
///
/// Source pixel `(h, w)` falls in target cell
/// `(h * target_h / height, w * target_w / width)`. A target cell is shadow
/// when at least half of its source pixels are; exact ties count as shadow.
pub fn downsample_mask_majority(mask: &BinaryMask, target_h: usize, target_w: usize) -> Result<BinaryMask> {
    if target_h == 0 || target_w == 0 {
        return Err(invalid("target dims must be positive"));
    }
    if target_h > mask.height || target_w > mask.width {
        return Err(invalid(format!(
            "cannot downsample {}x{} to larger {target_h}x{target_w}",
            mask.height, mask.width
        )));
    }
    let mut ones = vec![0usize; target_h * target_w];
    let mut total = vec![0usize; target_h * target_w];
    for h in 0..mask.height {
        let th = h * target_h / mask.height;
        for w in 0..mask.width {
            let tw = w * target_w / mask.width;
            let k = th * target_w + tw;
            total[k] += 1;
            ones[k] += usize::from(mask.data[h * mask.width + w]);
        }
    }
    let data = ones.iter().zip(&total).map(|(&o, &t)| u8::from(2 * o >= t)).collect();
    BinaryMask::new(target_h, target_w, data)
}
