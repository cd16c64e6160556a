//! Frame-level shadow detection metrics and flow-warped temporal stability.

use std::fmt;

use crate::error::{invalid, shape, Result};
use crate::tensor::{check_same_grid, BinaryMask, FlowField, ProbMask};

/// Probability at or above which a prediction counts as shadow.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Weight of precision in the F-measure.
pub const DEFAULT_BETA2: f64 = 0.3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    check_same_grid(pred, gt, "prediction vs ground truth")?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let union = c.tp + c.fp + c.fn_;
    Ok(if union == 0 { 1.0 } else { c.tp as f64 / union as f64 })
}

/// Mean absolute error between a probability map and the ground truth.
pub fn mae(pred: &ProbMask, gt: &BinaryMask) -> Result<f64> {
    check_same_grid(pred, gt, "prediction vs ground truth")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p - f64::from(g)).abs())
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// `(1 + b2) P R / (b2 P + R)`; 0 when the denominator vanishes and 1 when
/// both masks are empty.
pub fn f_measure(pred: &BinaryMask, gt: &BinaryMask, beta2: f64) -> Result<f64> {
    if !(beta2 >= 0.0) {
        return Err(invalid(format!("beta^2 must be non-negative, got {beta2}")));
    }
    let c = confusion(pred, gt)?;
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok(1.0);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let den = beta2 * precision + recall;
    Ok(if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    })
}

/// Balance error rate in percent, as `(ber, s_ber, n_ber)`. A class missing
/// from the ground truth contributes no error.
pub fn ber(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64, f64)> {
    let c = confusion(pred, gt)?;
    let err = |hit: usize, miss: usize| {
        if hit + miss == 0 {
            0.0
        } else {
            100.0 * (1.0 - hit as f64 / (hit + miss) as f64)
        }
    };
    let s_ber = err(c.tp, c.fn_);
    let n_ber = err(c.tn, c.fp);
    Ok(((s_ber + n_ber) / 2.0, s_ber, n_ber))
}

/// Backward warp: `out(h, w)` is `src` sampled bilinearly at
/// `(h + dy, w + dx)`. Samples off the grid read 0.
pub fn warp_backward(src: &ProbMask, flow: &FlowField) -> Result<ProbMask> {
    check_same_grid(src, flow, "mask vs flow")?;
    let (height, width) = (src.height(), src.width());
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= height as i64 || x >= width as i64 {
            0.0
        } else {
            src.get(y as usize, x as usize)
        }
    };
    let mut out = Vec::with_capacity(height * width);
    for h in 0..height {
        for w in 0..width {
            let [dx, dy] = flow.get(h, w);
            let y = h as f64 + f64::from(dy);
            let x = w as f64 + f64::from(dx);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as i64, x0 as i64);
            let mut v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
            if fx != 0.0 {
                v += (1.0 - fy) * fx * at(y0, x0 + 1);
            }
            if fy != 0.0 {
                v += fy * (1.0 - fx) * at(y0 + 1, x0);
                if fx != 0.0 {
                    v += fy * fx * at(y0 + 1, x0 + 1);
                }
            }
            out.push(v.clamp(0.0, 1.0));
        }
    }
    ProbMask::new(height, width, out)
}

/// Mean IoU between each prediction and the next prediction warped back by
/// the flow between them, binarized at `threshold`. In `[0, 1]`.
pub fn temporal_stability(preds: &[ProbMask], flows: &[FlowField], threshold: f64) -> Result<f64> {
    if preds.len() < 2 {
        return Err(invalid("temporal stability needs at least two frames"));
    }
    if flows.len() + 1 != preds.len() {
        return Err(shape(format!(
            "{} predictions need {} flows, got {}",
            preds.len(),
            preds.len() - 1,
            flows.len()
        )));
    }
    let mut sum = 0.0;
    for (pair, flow) in preds.windows(2).zip(flows) {
        let warped = warp_backward(&pair[1], flow)?;
        sum += iou(
            &BinaryMask::threshold(&pair[0], threshold),
            &BinaryMask::threshold(&warped, threshold),
        )?;
    }
    Ok(sum / flows.len() as f64)
}

/// Per-tile integer displacement minimizing the sum of absolute differences
/// between `mask_a` and the displaced `mask_b`.
///
/// Ties prefer the smallest `|dy|`, then the smallest `|dx|`, then the
/// smaller `dy`, then the smaller `dx`.
pub fn block_matching_flow(mask_a: &BinaryMask, mask_b: &BinaryMask, block: usize, radius: usize) -> Result<FlowField> {
    check_same_grid(mask_a, mask_b, "block matching masks")?;
    if block == 0 {
        return Err(invalid("block size must be positive"));
    }
    let (height, width) = (mask_a.height(), mask_a.width());
    let r = radius as i64;
    let b_at = |y: i64, x: i64| -> i64 {
        if y < 0 || x < 0 || y >= height as i64 || x >= width as i64 {
            0
        } else {
            i64::from(mask_b.get(y as usize, x as usize))
        }
    };
    let mut data = vec![[0.0f32; 2]; height * width];
    for ty in (0..height).step_by(block) {
        for tx in (0..width).step_by(block) {
            let (ey, ex) = ((ty + block).min(height), (tx + block).min(width));
            let mut best: Option<((i64, i64, i64, i64, i64), (i64, i64))> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0;
                    for h in ty..ey {
                        for w in tx..ex {
                            let a = i64::from(mask_a.get(h, w));
                            sad += (a - b_at(h as i64 + dy, w as i64 + dx)).abs();
                        }
                    }
                    let key = (sad, dy.abs(), dx.abs(), dy, dx);
                    if best.is_none_or(|(k, _)| key < k) {
                        best = Some((key, (dx, dy)));
                    }
                }
            }
            let (dx, dy) = best.expect("search window is nonempty").1;
            for h in ty..ey {
                for w in tx..ex {
                    data[h * width + w] = [dx as f32, dy as f32];
                }
            }
        }
    }
    FlowField::new(height, width, data)
}

/// Predictions, ground truth and flows of one video.
#[derive(Debug, Clone)]
pub struct VideoEval {
    pub name: String,
    pub preds: Vec<ProbMask>,
    pub gts: Vec<BinaryMask>,
    pub flows: Vec<FlowField>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub beta2: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            beta2: DEFAULT_BETA2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub f_beta: f64,
    pub ber: f64,
    pub s_ber: f64,
    pub n_ber: f64,
    pub iou_pct: f64,
    pub ts_pct: f64,
    pub avg_pct: f64,
}

impl MetricsReport {
    const FIELDS: [&'static str; 8] = ["mae", "f_beta", "ber", "s_ber", "n_ber", "iou", "ts", "avg"];

    fn values(&self) -> [f64; 8] {
        [
            self.mae,
            self.f_beta,
            self.ber,
            self.s_ber,
            self.n_ber,
            self.iou_pct,
            self.ts_pct,
            self.avg_pct,
        ]
    }

    /// Single-line `key=value` record.
    pub fn to_kv_line(&self) -> String {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Two-row aligned text table.
    pub fn to_table(&self) -> String {
        let header: Vec<String> = Self::FIELDS.iter().map(|k| format!("{k:>8}")).collect();
        let row: Vec<String> = self.values().iter().map(|v| format!("{v:>8.3}")).collect();
        format!("{}\n{}\n", header.join(" "), row.join(" "))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv_line())
    }
}

/// Per-frame metrics of one video, summed, plus its frame count and TS.
#[derive(Debug, Clone, Copy, Default)]
struct VideoTotals {
    frames: usize,
    mae: f64,
    f_beta: f64,
    ber: f64,
    s_ber: f64,
    n_ber: f64,
    iou: f64,
    ts: f64,
}

fn video_totals(v: &VideoEval, opts: &EvalOptions) -> Result<VideoTotals> {
    if v.preds.len() != v.gts.len() {
        return Err(shape(format!(
            "video {}: {} predictions vs {} masks",
            v.name,
            v.preds.len(),
            v.gts.len()
        )));
    }
    let mut t = VideoTotals {
        frames: v.preds.len(),
        ts: temporal_stability(&v.preds, &v.flows, opts.threshold)?,
        ..VideoTotals::default()
    };
    for (p, g) in v.preds.iter().zip(&v.gts) {
        let bin = BinaryMask::threshold(p, opts.threshold);
        t.mae += mae(p, g)?;
        t.f_beta += f_measure(&bin, g, opts.beta2)?;
        let (b, s, n) = ber(&bin, g)?;
        t.ber += b;
        t.s_ber += s;
        t.n_ber += n;
        t.iou += iou(&bin, g)?;
    }
    Ok(t)
}

/// Frame metrics averaged over all frames of all videos; TS averaged per
/// video first and then over videos with equal weight.
pub fn dataset_report(videos: &[VideoEval], opts: &EvalOptions) -> Result<MetricsReport> {
    let totals = videos
        .iter()
        .map(|v| video_totals(v, opts))
        .collect::<Result<Vec<_>>>()?;
    report_from_totals(&totals)
}

/// [`dataset_report`] evaluating up to `threads` videos concurrently. The
/// reduction runs in input order, so the result does not depend on
/// `threads`.
pub fn dataset_report_parallel(videos: &[VideoEval], opts: &EvalOptions, threads: usize) -> Result<MetricsReport> {
    let threads = threads.max(1).min(videos.len().max(1));
    if threads == 1 {
        return dataset_report(videos, opts);
    }
    let chunk = videos.len().div_ceil(threads);
    let totals = std::thread::scope(|s| {
        let handles: Vec<_> = videos
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|v| video_totals(v, opts)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("metric worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    report_from_totals(&totals)
}

fn report_from_totals(totals: &[VideoTotals]) -> Result<MetricsReport> {
    if totals.is_empty() {
        return Err(invalid("no videos to evaluate"));
    }
    let frames: usize = totals.iter().map(|t| t.frames).sum();
    let per_frame = |f: fn(&VideoTotals) -> f64| totals.iter().map(f).sum::<f64>() / frames as f64;
    let iou_pct = 100.0 * per_frame(|t| t.iou);
    let ts_pct = 100.0 * totals.iter().map(|t| t.ts).sum::<f64>() / totals.len() as f64;
    Ok(MetricsReport {
        mae: per_frame(|t| t.mae),
        f_beta: per_frame(|t| t.f_beta),
        ber: per_frame(|t| t.ber),
        s_ber: per_frame(|t| t.s_ber),
        n_ber: per_frame(|t| t.n_ber),
        iou_pct,
        ts_pct,
        avg_pct: (iou_pct + ts_pct) / 2.0,
    })
}
