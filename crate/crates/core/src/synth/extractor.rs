//! Tiny two-stage convolutional feature extractor with a per-cell logistic
//! head, and its exact backward pass.
//!
//! Stage 1: 3x3 convolution (3 -> C, zero padding 1) + bias, rectifier.
//! Stage 2: 3x3 convolution (C -> D, zero padding 1) + bias.
//! The stage-2 output is average-pooled into a G x G feature map; the head
//! maps every D-vector to a probability.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape, Result};
use crate::tensor::{FeatureMap, ProbMask, RgbFrame};

const K: usize = 3;

/// Parameters stored as one flat vector:
/// `w1 [C][3][3][3] | b1 [C] | w2 [D][3][3][C] | b2 [D] | head_w [D] | head_b`.
/// Kernels are laid out `[out][kh][kw][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractorParams {
    pub hidden: usize,
    pub dim: usize,
    pub grid: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    hw: usize,
    hb: usize,
    len: usize,
}

impl Layout {
    fn new(c: usize, d: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + c * K * K * 3;
        let w2 = b1 + c;
        let b2 = w2 + d * K * K * c;
        let hw = b2 + d;
        let hb = hw + d;
        Self {
            w1,
            b1,
            w2,
            b2,
            hw,
            hb,
            len: hb + 1,
        }
    }
}

impl ToyExtractorParams {
    pub fn param_count(hidden: usize, dim: usize) -> usize {
        Layout::new(hidden, dim).len
    }

    pub fn zeros(hidden: usize, dim: usize, grid: usize) -> Result<Self> {
        if hidden == 0 || dim == 0 || grid == 0 {
            return Err(invalid("extractor sizes must be positive"));
        }
        Ok(Self {
            hidden,
            dim,
            grid,
            values: vec![0.0; Self::param_count(hidden, dim)],
        })
    }

    /// He-style normal initialization of the kernels; biases start at 0.
    pub fn random<R: Rng + ?Sized>(hidden: usize, dim: usize, grid: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(hidden, dim, grid)?;
        let l = p.layout();
        let fill = |vals: &mut [f64], fan_in: usize, rng: &mut R| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            vals.iter_mut().for_each(|v| *v = n.sample(rng));
        };
        fill(&mut p.values[l.w1..l.b1], 27, rng);
        fill(&mut p.values[l.w2..l.b2], K * K * hidden, rng);
        fill(&mut p.values[l.hw..l.hb], dim, rng);
        Ok(p)
    }

    /// Shifts both convolution biases so that stage-1 pre-activations and
    /// the pooled features have zero mean per channel over `frames`.
    pub fn center_biases(&mut self, frames: &[RgbFrame]) -> Result<()> {
        if frames.is_empty() {
            return Err(invalid("need at least one frame to center on"));
        }
        let l = self.layout();
        let (c, d) = (self.hidden, self.dim);
        let mut mean1 = vec![0.0; c];
        let mut count = 0usize;
        for f in frames {
            let cache = extract_features(f, self)?;
            for px in cache.z1.chunks_exact(c) {
                mean1.iter_mut().zip(px).for_each(|(m, z)| *m += z);
            }
            count += cache.z1.len() / c;
        }
        for (b, m) in self.values[l.b1..l.w2].iter_mut().zip(&mean1) {
            *b -= m / count as f64;
        }
        let mut mean2 = vec![0.0; d];
        let mut count = 0usize;
        for f in frames {
            let cache = extract_features(f, self)?;
            for row in cache.features.data().chunks_exact(d) {
                mean2.iter_mut().zip(row).for_each(|(m, z)| *m += z);
            }
            count += cache.features.cells();
        }
        for (b, m) in self.values[l.b2..l.hw].iter_mut().zip(&mean2) {
            *b -= m / count as f64;
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        Layout::new(self.hidden, self.dim)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.layout().len {
            return Err(shape(format!(
                "expected {} parameters, got {}",
                self.layout().len,
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// Stage-1 pre-activations, `[h][w][C]`.
    pub z1: Vec<f64>,
    pub features: FeatureMap,
    pub preds: ProbMask,
}

impl ForwardCache {
    /// Sign pattern of the rectifier inputs; a change means the forward pass
    /// crossed a kink.
    pub fn activation_pattern(&self) -> Vec<usize> {
        self.z1
            .chunks(usize::BITS as usize)
            .map(|ch| {
                ch.iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, &z)| acc | (usize::from(z > 0.0) << i))
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[h][w][co] += sum over (kh, kw, ci) of kernel[co][kh][kw][ci] * input[h+kh-1][w+kw-1][ci]`.
fn conv3x3(input: &[f64], cin: usize, kernel: &[f64], bias: &[f64], height: usize, width: usize) -> Vec<f64> {
    let cout = bias.len();
    let mut out = Vec::with_capacity(height * width * cout);
    for h in 0..height {
        for w in 0..width {
            let base = out.len();
            out.extend_from_slice(bias);
            let acc = &mut out[base..base + cout];
            for kh in 0..K {
                let y = h + kh;
                if y < 1 || y > height {
                    continue;
                }
                for kw in 0..K {
                    let x = w + kw;
                    if x < 1 || x > width {
                        continue;
                    }
                    let px = &input[((y - 1) * width + (x - 1)) * cin..][..cin];
                    for (co, a) in acc.iter_mut().enumerate() {
                        let k = &kernel[((co * K + kh) * K + kw) * cin..][..cin];
                        *a += k.iter().zip(px).map(|(k, p)| k * p).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}

/// Runs the extractor on one frame.
pub fn extract_features(frame: &RgbFrame, params: &ToyExtractorParams) -> Result<ForwardCache> {
    params.check()?;
    let (height, width) = (frame.height(), frame.width());
    let g = params.grid;
    if height % g != 0 || width % g != 0 {
        return Err(shape(format!("frame {height}x{width} is not divisible by grid {g}")));
    }
    let l = params.layout();
    let v = &params.values;
    let (c, d) = (params.hidden, params.dim);

    let z1 = conv3x3(frame.data(), 3, &v[l.w1..l.b1], &v[l.b1..l.w2], height, width);
    let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    let z2 = conv3x3(&a1, c, &v[l.w2..l.b2], &v[l.b2..l.hw], height, width);

    let (sh, sw) = (height / g, width / g);
    let inv = 1.0 / (sh * sw) as f64;
    let mut pooled = vec![0.0; g * g * d];
    for h in 0..height {
        for w in 0..width {
            let cell = (h / sh) * g + w / sw;
            let dst = &mut pooled[cell * d..(cell + 1) * d];
            for (p, z) in dst.iter_mut().zip(&z2[(h * width + w) * d..][..d]) {
                *p += z;
            }
        }
    }
    pooled.iter_mut().for_each(|p| *p *= inv);

    let head_w = &v[l.hw..l.hb];
    let head_b = v[l.hb];
    let preds: Vec<f64> = pooled
        .chunks_exact(d)
        .map(|f| sigmoid(head_b + f.iter().zip(head_w).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    Ok(ForwardCache {
        height,
        width,
        z1,
        features: FeatureMap::new(g, g, d, pooled)?,
        preds: ProbMask::new(g, g, preds)?,
    })
}

/// Parameter gradient given upstream gradients on the feature map
/// (`grad_features`, `G x G x D` values) and on the predictions
/// (`grad_preds`, `G x G` values).
pub fn extractor_backward(
    frame: &RgbFrame,
    params: &ToyExtractorParams,
    cache: &ForwardCache,
    grad_features: &[f64],
    grad_preds: &[f64],
) -> Result<Vec<f64>> {
    params.check()?;
    let l = params.layout();
    let v = &params.values;
    let (c, d, g) = (params.hidden, params.dim, params.grid);
    let (height, width) = (cache.height, cache.width);
    if frame.height() != height || frame.width() != width {
        return Err(shape("frame does not match the forward cache"));
    }
    if grad_features.len() != g * g * d || grad_preds.len() != g * g {
        return Err(shape(format!(
            "upstream gradients must have {} and {} entries, got {} and {}",
            g * g * d,
            g * g,
            grad_features.len(),
            grad_preds.len()
        )));
    }
    let mut grad = vec![0.0; l.len];
    let feats = cache.features.data();
    let head_w = &v[l.hw..l.hb];

    // Head.
    let mut d_feat = grad_features.to_vec();
    for cell in 0..g * g {
        let p = cache.preds.data()[cell];
        let dlogit = grad_preds[cell] * p * (1.0 - p);
        if dlogit == 0.0 {
            continue;
        }
        grad[l.hb] += dlogit;
        for k in 0..d {
            grad[l.hw + k] += dlogit * feats[cell * d + k];
            d_feat[cell * d + k] += dlogit * head_w[k];
        }
    }

    // Pooling spreads each cell's gradient evenly over its block, so the
    // stage-2 gradient is constant per cell.
    let (sh, sw) = (height / g, width / g);
    let inv = 1.0 / (sh * sw) as f64;
    let dcell: Vec<f64> = d_feat.iter().map(|x| x * inv).collect();
    let a1: Vec<f64> = cache.z1.iter().map(|&z| z.max(0.0)).collect();
    let da1 = pooled_conv_backward(
        &a1,
        c,
        &dcell,
        d,
        g,
        &v[l.w2..l.b2],
        height,
        width,
        &mut grad[l.w2..l.hw],
    );

    // Rectifier.
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&cache.z1)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();

    // Stage 1.
    conv_backward(frame.data(), 3, &dz1, c, height, width, &mut grad[l.w1..l.w2]);
    Ok(grad)
}

/// Backward pass of [`conv3x3`] when the output gradient is constant over
/// each `height/g x width/g` block (`dcell` holds one `cout` vector per
/// cell). Accumulates kernel and bias gradients into `grad_kb` and returns
/// the input gradient.
#[allow(clippy::too_many_arguments)]
fn pooled_conv_backward(
    input: &[f64],
    cin: usize,
    dcell: &[f64],
    cout: usize,
    g: usize,
    kernel: &[f64],
    height: usize,
    width: usize,
    grad_kb: &mut [f64],
) -> Vec<f64> {
    let (sh, sw) = (height / g, width / g);
    let taps = K * K * cin;
    let (gk, gb) = grad_kb.split_at_mut(cout * taps);
    for cell in dcell.chunks_exact(cout) {
        for (b, x) in gb.iter_mut().zip(cell) {
            *b += x * (sh * sw) as f64;
        }
    }
    // Per cell: input sums seen by each tap, and the kernel contracted with
    // the cell gradient.
    let mut sums = vec![0.0; g * g * taps];
    let mut contracted = vec![0.0; g * g * taps];
    for (cell, dc) in dcell.chunks_exact(cout).enumerate() {
        let e = &mut contracted[cell * taps..(cell + 1) * taps];
        for (co, &x) in dc.iter().enumerate() {
            if x != 0.0 {
                for (a, k) in e.iter_mut().zip(&kernel[co * taps..(co + 1) * taps]) {
                    *a += x * k;
                }
            }
        }
    }
    let mut dinput = vec![0.0; height * width * cin];
    for y in 0..height {
        for x in 0..width {
            let off = (y * width + x) * cin;
            let px = &input[off..off + cin];
            for kh in 0..K {
                // Output row fed by this pixel through tap `kh`.
                let Some(h) = (y + 1).checked_sub(kh).filter(|&h| h < height) else {
                    continue;
                };
                for kw in 0..K {
                    let Some(w) = (x + 1).checked_sub(kw).filter(|&w| w < width) else {
                        continue;
                    };
                    let cell = (h / sh) * g + w / sw;
                    let t = cell * taps + (kh * K + kw) * cin;
                    for (s, p) in sums[t..t + cin].iter_mut().zip(px) {
                        *s += p;
                    }
                    for (d, e) in dinput[off..off + cin].iter_mut().zip(&contracted[t..t + cin]) {
                        *d += e;
                    }
                }
            }
        }
    }
    for (co, gk_co) in gk.chunks_exact_mut(taps).enumerate() {
        for (cell, s) in sums.chunks_exact(taps).enumerate() {
            let x = dcell[cell * cout + co];
            if x != 0.0 {
                for (a, v) in gk_co.iter_mut().zip(s) {
                    *a += x * v;
                }
            }
        }
    }
    dinput
}

/// Accumulates kernel and bias gradients of [`conv3x3`] (`grad_kb` holds the
/// kernel followed by the bias).
fn conv_backward(
    input: &[f64],
    cin: usize,
    dout: &[f64],
    cout: usize,
    height: usize,
    width: usize,
    grad_kb: &mut [f64],
) {
    let (gk, gb) = grad_kb.split_at_mut(cout * K * K * cin);
    for h in 0..height {
        for w in 0..width {
            let go = &dout[(h * width + w) * cout..][..cout];
            if go.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (b, &x) in gb.iter_mut().zip(go) {
                *b += x;
            }
            for kh in 0..K {
                let y = h + kh;
                if y < 1 || y > height {
                    continue;
                }
                for kw in 0..K {
                    let x = w + kw;
                    if x < 1 || x > width {
                        continue;
                    }
                    let off = ((y - 1) * width + (x - 1)) * cin;
                    let px = &input[off..off + cin];
                    for (co, &gval) in go.iter().enumerate() {
                        if gval == 0.0 {
                            continue;
                        }
                        let kidx = ((co * K + kh) * K + kw) * cin;
                        for (g, p) in gk[kidx..kidx + cin].iter_mut().zip(px) {
                            *g += gval * p;
                        }
                    }
                }
            }
        }
    }
}
