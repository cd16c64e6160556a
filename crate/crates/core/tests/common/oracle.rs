//! Naive reference implementations, written without reusing any library
//! helper, and a driver comparing them against the library on random
//! instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sccor::correspondence::{cosine_similarity_map, find_correspondences};
use sccor::loss::sc_cor_loss;
use sccor::metrics::{ber, f_measure, iou, mae};
use sccor::{BinaryMask, FeatureMap, ProbMask};

pub const SIM_TOL: f64 = 1e-12;

pub struct Instance {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub f_a: Vec<f64>,
    pub f_b: Vec<f64>,
    pub y_a: Vec<u8>,
    pub y_b: Vec<u8>,
}

impl Instance {
    /// Grid up to 4x4, up to 3 channels. Some cells are copies or zero
    /// vectors so that ties and the norm floor get exercised.
    pub fn random(rng: &mut impl Rng) -> Self {
        let height = rng.gen_range(1..=4);
        let width = rng.gen_range(1..=4);
        let dim = rng.gen_range(1..=3);
        let cells = height * width;
        let map = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let mut v: Vec<f64> = (0..cells * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for c in 0..cells {
                match rng.gen_range(0..8) {
                    0 => v[c * dim..(c + 1) * dim].fill(0.0),
                    1 if c > 0 => {
                        let src = rng.gen_range(0..c);
                        v.copy_within(src * dim..(src + 1) * dim, c * dim);
                    }
                    _ => {}
                }
            }
            v
        };
        let f_a = map(rng);
        let f_b = map(rng);
        let y_a = (0..cells).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let y_b = (0..cells).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        Self {
            height,
            width,
            dim,
            f_a,
            f_b,
            y_a,
            y_b,
        }
    }

    pub fn features(&self) -> (FeatureMap, FeatureMap) {
        let make = |v: &Vec<f64>| FeatureMap::new(self.height, self.width, self.dim, v.clone()).unwrap();
        (make(&self.f_a), make(&self.f_b))
    }

    pub fn masks(&self) -> (BinaryMask, BinaryMask) {
        let make = |v: &Vec<u8>| BinaryMask::new(self.height, self.width, v.clone()).unwrap();
        (make(&self.y_a), make(&self.y_b))
    }
}

pub fn sim(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    let na = if aa.sqrt() < 1e-8 { 1e-8 } else { aa.sqrt() };
    let nb = if bb.sqrt() < 1e-8 { 1e-8 } else { bb.sqrt() };
    ab / (na * nb)
}

/// `(anchor, p, q, qhat)` with each match as `(index, value)`.
pub type OracleMatch = (usize, (usize, f64), Option<(usize, f64)>, Option<(usize, f64)>);

pub fn matches(f_src: &[f64], f_tgt: &[f64], y_src: &[u8], y_tgt: &[u8], dim: usize) -> Vec<OracleMatch> {
    let mut out = Vec::new();
    for a in 0..y_src.len() {
        if y_src[a] != 1 {
            continue;
        }
        let va = &f_src[a * dim..(a + 1) * dim];
        let mut p: Option<(usize, f64)> = None;
        let mut q: Option<(usize, f64)> = None;
        let mut qhat: Option<(usize, f64)> = None;
        for m in 0..y_tgt.len() {
            let s = sim(va, &f_tgt[m * dim..(m + 1) * dim]);
            let better = |cur: &Option<(usize, f64)>| match cur {
                None => true,
                Some((_, v)) => s > *v,
            };
            if better(&p) {
                p = Some((m, s));
            }
            if y_tgt[m] == 1 && better(&q) {
                q = Some((m, s));
            }
            if y_tgt[m] == 0 && better(&qhat) {
                qhat = Some((m, s));
            }
        }
        out.push((a, p.unwrap(), q, qhat));
    }
    out
}

/// `(shadow, nshadow)` of one direction.
pub fn direction_losses(ms: &[OracleMatch], beta: f64) -> (f64, f64) {
    if ms.is_empty() {
        return (0.0, 0.0);
    }
    let n = ms.len() as f64;
    let mut shadow = 0.0;
    let mut nshadow = 0.0;
    for (_, p, q, qhat) in ms {
        if let Some(q) = q {
            shadow += (p.1 - q.1) * (p.1 - q.1);
        }
        if let Some(qh) = qhat {
            let gap = (p.1 - qh.1).abs();
            if beta - gap > 0.0 {
                nshadow += beta - gap;
            }
        }
    }
    (shadow / n, nshadow / n)
}

pub struct FrameMetrics {
    pub iou: f64,
    pub f_beta: f64,
    pub ber: (f64, f64, f64),
    pub mae: f64,
}

pub fn frame_metrics(pred: &[f64], gt: &[u8], beta2: f64) -> FrameMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    let mut abs = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        let b = p >= 0.5;
        let g1 = g == 1;
        abs += (p - if g1 { 1.0 } else { 0.0 }).abs();
        match (b, g1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let iou = if tp + fp + fn_ == 0.0 {
        1.0
    } else {
        tp / (tp + fp + fn_)
    };
    let f_beta = if tp + fp + fn_ == 0.0 {
        1.0
    } else {
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if beta2 * prec + rec == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * prec * rec / (beta2 * prec + rec)
        }
    };
    let s = if tp + fn_ > 0.0 { 100.0 * fn_ / (tp + fn_) } else { 0.0 };
    let n = if tn + fp > 0.0 { 100.0 * fp / (tn + fp) } else { 0.0 };
    FrameMetrics {
        iou,
        f_beta,
        ber: ((s + n) / 2.0, s, n),
        mae: abs / pred.len() as f64,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= SIM_TOL
}

/// Compares every quantity of one instance; returns a description of the
/// first disagreement.
pub fn compare(inst: &Instance, beta: f64, pred: &[f64]) -> Result<(), String> {
    let (fa, fb) = inst.features();
    let (ya, yb) = inst.masks();
    let d = inst.dim;

    let map = cosine_similarity_map(fa.rows(), fb.rows()).map_err(|e| e.to_string())?;
    for n in 0..map.rows() {
        for m in 0..map.cols() {
            let want = sim(fa.cell(n), fb.cell(m));
            if !close(map.get(n, m), want) {
                return Err(format!("similarity ({n},{m}): {} vs {want}", map.get(n, m)));
            }
        }
    }

    let fwd = matches(&inst.f_a, &inst.f_b, &inst.y_a, &inst.y_b, d);
    let bwd = matches(&inst.f_b, &inst.f_a, &inst.y_b, &inst.y_a, d);
    for (lib, want) in [
        (find_correspondences(&fa, &fb, &ya, &yb), &fwd),
        (find_correspondences(&fb, &fa, &yb, &ya), &bwd),
    ] {
        let lib = lib.map_err(|e| e.to_string())?;
        if lib.matches().len() != want.len() {
            return Err(format!("{} anchors vs {}", lib.matches().len(), want.len()));
        }
        for (m, w) in lib.matches().iter().zip(want.iter()) {
            let got = (
                m.anchor,
                (m.p.index, m.p.value),
                m.q.map(|q| (q.index, q.value)),
                m.qhat.map(|q| (q.index, q.value)),
            );
            let same_idx = got.0 == w.0
                && got.1 .0 == w.1 .0
                && got.2.map(|x| x.0) == w.2.map(|x| x.0)
                && got.3.map(|x| x.0) == w.3.map(|x| x.0);
            let same_val = close(got.1 .1, w.1 .1)
                && got.2.zip(w.2).is_none_or(|(a, b)| close(a.1, b.1))
                && got.3.zip(w.3).is_none_or(|(a, b)| close(a.1, b.1));
            if !same_idx || !same_val {
                return Err(format!("match {got:?} vs oracle {w:?}"));
            }
        }
    }

    let lb = sc_cor_loss(&fa, &fb, &ya, &yb, beta).map_err(|e| e.to_string())?;
    let (sf, nf) = direction_losses(&fwd, beta);
    let (sb, nb) = direction_losses(&bwd, beta);
    for (name, got, want) in [
        ("shadow_fwd", lb.shadow_fwd, sf),
        ("nshadow_fwd", lb.nshadow_fwd, nf),
        ("shadow_bwd", lb.shadow_bwd, sb),
        ("nshadow_bwd", lb.nshadow_bwd, nb),
    ] {
        if !close(got, want) {
            return Err(format!("{name}: {got} vs {want}"));
        }
    }

    let prob = ProbMask::new(inst.height, inst.width, pred.to_vec()).map_err(|e| e.to_string())?;
    let bin = BinaryMask::threshold(&prob, 0.5);
    let want = frame_metrics(pred, &inst.y_b, 0.3);
    let got_ber = ber(&bin, &yb).map_err(|e| e.to_string())?;
    let pairs = [
        ("iou", iou(&bin, &yb).unwrap(), want.iou),
        ("f_beta", f_measure(&bin, &yb, 0.3).unwrap(), want.f_beta),
        ("mae", mae(&prob, &yb).unwrap(), want.mae),
        ("ber", got_ber.0, want.ber.0),
        ("s_ber", got_ber.1, want.ber.1),
        ("n_ber", got_ber.2, want.ber.2),
    ];
    for (name, got, want) in pairs {
        if !close(got, want) {
            return Err(format!("{name}: {got} vs {want}"));
        }
    }
    Ok(())
}

/// Runs `count` random instances from `seed`. Predictions mix values on and
/// around the 0.5 threshold.
pub fn run(seed: u64, count: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let inst = Instance::random(&mut rng);
        let beta = [0.0, 0.5, 2.0][i % 3];
        let pred: Vec<f64> = (0..inst.height * inst.width)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.5,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        compare(&inst, beta, &pred).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(())
}
