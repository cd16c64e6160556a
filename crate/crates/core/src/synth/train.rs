//! Desk-scale training of the toy extractor with and without the
//! correspondence objective, and held-out evaluation of the result.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brightness::{apply_shift, ShiftConfig, ShiftSampler};
use crate::config::{parse_flag, KeyValues};
use crate::correspondence::{find_correspondences, ratio_counts};
use crate::error::{invalid, Error, Result};
use crate::gradcheck::{LossEvaluator, Probe};
use crate::loss::{
    bce_grad, bce_segmentation_loss, bidirectional_correspondences, margin_activity, sc_cor_loss_grad, LossBreakdown,
    DEFAULT_BETA, DEFAULT_LAMBDA,
};
use crate::metrics::{dataset_report, EvalOptions, MetricsReport, VideoEval};
use crate::synth::data::{generate_clip, ClipVariation, SynthConfig, TextureSpec};
use crate::synth::extractor::{extract_features, extractor_backward, ToyExtractorParams};
use crate::tensor::{downsample_mask_majority, BinaryMask, FeatureMap, RgbFrame, VideoClip};

/// Which clips to synthesize.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub train_clips: usize,
    pub eval_clips: usize,
    /// Template for every clip; shape, velocity, texture and drift sign are
    /// randomized per clip.
    pub clip: SynthConfig,
    pub variation: ClipVariation,
}

/// The bundled benchmark: large, strongly attenuated shadows over coloured
/// texture, with dark patches that are lighter than shadow.
impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_clips: 10,
            eval_clips: 4,
            clip: SynthConfig {
                illumination_drift: 0.05,
                shadow_attenuation: 0.5,
                background_texture: TextureSpec {
                    tint: 0.3,
                    dark_albedo: 0.75,
                    ..TextureSpec::default()
                },
                ..SynthConfig::default()
            },
            variation: ClipVariation {
                max_speed: 3,
                radius: (0.2, 0.3),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub lambda: f64,
    pub beta: f64,
    /// Frame interval between paired frames.
    pub delta_frames: usize,
    pub lr: f64,
    pub iters: usize,
    /// Iterations before brightness shifting starts.
    pub bs_warmup: usize,
    /// Brightness shift range.
    pub bs_delta: f64,
    pub seed: u64,
    /// Frames sampled per iteration, spaced `delta_frames` apart.
    pub frames_per_iter: usize,
    pub hflip: bool,
    pub hidden: usize,
    pub feature_dim: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            delta_frames: 5,
            lr: 0.05,
            iters: 400,
            bs_warmup: 100,
            bs_delta: 0.3,
            seed: 0,
            frames_per_iter: 2,
            hflip: false,
            hidden: 8,
            feature_dim: 8,
        }
    }
}

/// Everything a toy training run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyConfig {
    pub bench: BenchmarkConfig,
    pub hyper: TrainHyper,
    pub use_sc_cor: bool,
    pub use_bs: bool,
}

/// Keys accepted in a toy training config file.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "train_clips",
    "eval_clips",
    "frames",
    "image_size",
    "grid",
    "drift",
    "attenuation",
    "max_speed",
    "radius_min",
    "radius_max",
    "dark_patches",
    "dark_albedo",
    "texture_contrast",
    "texture_base",
    "texture_tint",
    "hidden",
    "feature_dim",
    "lambda",
    "beta",
    "delta_frames",
    "lr",
    "iters",
    "bs_warmup",
    "bs_delta",
    "use_sc_cor",
    "use_bs",
    "frames_per_iter",
    "hflip",
];

impl ToyConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(CONFIG_KEYS)?;
        let mut c = Self {
            use_sc_cor: true,
            ..Self::default()
        };
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $field = v;
                }
            };
        }
        set!("seed", c.hyper.seed);
        set!("train_clips", c.bench.train_clips);
        set!("eval_clips", c.bench.eval_clips);
        set!("frames", c.bench.clip.frames_per_clip);
        set!("image_size", c.bench.clip.image_size);
        set!("grid", c.bench.clip.grid);
        set!("drift", c.bench.clip.illumination_drift);
        set!("attenuation", c.bench.clip.shadow_attenuation);
        set!("max_speed", c.bench.variation.max_speed);
        set!("radius_min", c.bench.variation.radius.0);
        set!("radius_max", c.bench.variation.radius.1);
        set!("dark_patches", c.bench.clip.background_texture.dark_patches);
        set!("dark_albedo", c.bench.clip.background_texture.dark_albedo);
        set!("texture_contrast", c.bench.clip.background_texture.contrast);
        set!("texture_base", c.bench.clip.background_texture.base);
        set!("texture_tint", c.bench.clip.background_texture.tint);
        set!("hidden", c.hyper.hidden);
        set!("feature_dim", c.hyper.feature_dim);
        set!("lambda", c.hyper.lambda);
        set!("beta", c.hyper.beta);
        set!("delta_frames", c.hyper.delta_frames);
        set!("lr", c.hyper.lr);
        set!("iters", c.hyper.iters);
        set!("bs_warmup", c.hyper.bs_warmup);
        set!("bs_delta", c.hyper.bs_delta);
        set!("frames_per_iter", c.hyper.frames_per_iter);
        for (key, slot) in [
            ("use_sc_cor", &mut c.use_sc_cor),
            ("use_bs", &mut c.use_bs),
            ("hflip", &mut c.hyper.hflip),
        ] {
            if let Some(v) = kv.get(key) {
                *slot = parse_flag(v).ok_or_else(|| Error::Config(format!("`{v}` is not a flag for key `{key}`")))?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let b = &self.bench;
        let h = &self.hyper;
        let pairs: Vec<(&str, String)> = vec![
            ("seed", h.seed.to_string()),
            ("train_clips", b.train_clips.to_string()),
            ("eval_clips", b.eval_clips.to_string()),
            ("frames", b.clip.frames_per_clip.to_string()),
            ("image_size", b.clip.image_size.to_string()),
            ("grid", b.clip.grid.to_string()),
            ("drift", b.clip.illumination_drift.to_string()),
            ("attenuation", b.clip.shadow_attenuation.to_string()),
            ("max_speed", b.variation.max_speed.to_string()),
            ("radius_min", b.variation.radius.0.to_string()),
            ("radius_max", b.variation.radius.1.to_string()),
            ("dark_patches", b.clip.background_texture.dark_patches.to_string()),
            ("dark_albedo", b.clip.background_texture.dark_albedo.to_string()),
            ("texture_contrast", b.clip.background_texture.contrast.to_string()),
            ("texture_base", b.clip.background_texture.base.to_string()),
            ("texture_tint", b.clip.background_texture.tint.to_string()),
            ("hidden", h.hidden.to_string()),
            ("feature_dim", h.feature_dim.to_string()),
            ("lambda", h.lambda.to_string()),
            ("beta", h.beta.to_string()),
            ("delta_frames", h.delta_frames.to_string()),
            ("lr", h.lr.to_string()),
            ("iters", h.iters.to_string()),
            ("bs_warmup", h.bs_warmup.to_string()),
            ("bs_delta", h.bs_delta.to_string()),
            ("use_sc_cor", self.use_sc_cor.to_string()),
            ("use_bs", self.use_bs.to_string()),
            ("frames_per_iter", h.frames_per_iter.to_string()),
            ("hflip", h.hflip.to_string()),
        ];
        for (k, v) in pairs {
            kv.set_assignment(&format!("{k}={v}")).expect("valid keys");
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let t = self.bench.clip.frames_per_clip;
        if h.frames_per_iter < 2 {
            return Err(invalid("frames_per_iter must be at least 2"));
        }
        if h.delta_frames == 0 || (h.frames_per_iter - 1) * h.delta_frames >= t {
            return Err(invalid(format!(
                "{} frames spaced {} apart do not fit in {t}-frame clips",
                h.frames_per_iter, h.delta_frames
            )));
        }
        if !(h.lambda >= 0.0) || !(h.beta >= 0.0) || !(h.lr > 0.0) {
            return Err(invalid("lambda and beta must be non-negative and lr positive"));
        }
        if self.bench.train_clips == 0 || self.bench.eval_clips == 0 {
            return Err(invalid("need at least one training and one evaluation clip"));
        }
        ShiftConfig {
            delta: h.bs_delta,
            warmup_iters: h.bs_warmup,
            seed: 0,
        }
        .validate()?;
        let clip = &self.bench.clip;
        self.bench.variation.validate(clip)?;
        // Shape and velocity of the template are replaced per clip.
        SynthConfig {
            shadow_shape: vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)],
            velocity: (0, 0),
            ..clip.clone()
        }
        .validate()
    }

    /// True when the correspondence objective has no effect on training.
    pub fn is_baseline(&self) -> bool {
        !self.use_sc_cor || self.hyper.lambda == 0.0
    }
}

/// Generated clips with their masks pooled to the feature grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<VideoClip>,
    pub grid_masks: Vec<Vec<BinaryMask>>,
}

impl Dataset {
    fn generate<R: Rng>(bench: &BenchmarkConfig, count: usize, rng: &mut R) -> Result<Self> {
        let g = bench.clip.grid;
        let mut clips = Vec::with_capacity(count);
        let mut grid_masks = Vec::with_capacity(count);
        for _ in 0..count {
            let cfg = SynthConfig::random(rng, &bench.clip, &bench.variation);
            let clip = generate_clip(&cfg)?;
            grid_masks.push(
                clip.gt_masks()
                    .iter()
                    .map(|m| downsample_mask_majority(m, g, g))
                    .collect::<Result<Vec<_>>>()?,
            );
            clips.push(clip);
        }
        Ok(Self { clips, grid_masks })
    }
}

/// Training and held-out clips for one seed.
pub fn benchmark_data(bench: &BenchmarkConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = Dataset::generate(bench, bench.train_clips, &mut rng)?;
    let eval = Dataset::generate(bench, bench.eval_clips, &mut rng)?;
    Ok((train, eval))
}

/// Held-out quality of a set of parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Anchors matched into the target shadow region, pooled over all
    /// `(t, t + delta)` pairs of all clips.
    pub correspondence_ratio: f64,
    pub metrics: MetricsReport,
}

pub fn evaluate(params: &ToyExtractorParams, data: &Dataset, delta_frames: usize) -> Result<Evaluation> {
    let (mut hits, mut anchors) = (0, 0);
    let mut videos = Vec::with_capacity(data.clips.len());
    for (i, (clip, masks)) in data.clips.iter().zip(&data.grid_masks).enumerate() {
        let outs = clip
            .frames()
            .iter()
            .map(|f| extract_features(f, params))
            .collect::<Result<Vec<_>>>()?;
        for t in 0..clip.len().saturating_sub(delta_frames) {
            let c = find_correspondences(
                &outs[t].features,
                &outs[t + delta_frames].features,
                &masks[t],
                &masks[t + delta_frames],
            )?;
            let (h, n) = ratio_counts(&c, &masks[t + delta_frames]);
            hits += h;
            anchors += n;
        }
        let factor = clip.frames()[0].height() / params.grid;
        videos.push(VideoEval {
            name: format!("clip{i:03}"),
            preds: outs
                .iter()
                .map(|o| o.preds.upsample(factor))
                .collect::<Result<Vec<_>>>()?,
            gts: clip.gt_masks().to_vec(),
            flows: clip.flows().map(<[_]>::to_vec).unwrap_or_default(),
        });
    }
    Ok(Evaluation {
        correspondence_ratio: if anchors == 0 {
            1.0
        } else {
            hits as f64 / anchors as f64
        },
        metrics: dataset_report(&videos, &EvalOptions::default())?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub losses: Vec<LossBreakdown>,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub config: ToyConfig,
    pub wall_clock: Duration,
    pub params: ToyExtractorParams,
}

impl TrainingReport {
    pub fn is_baseline(&self) -> bool {
        self.config.is_baseline()
    }

    /// Line-oriented `key=value` report. Wall-clock time is left out so that
    /// reruns produce identical bytes.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mode = if self.is_baseline() { "baseline" } else { "sc_cor" };
        let _ = writeln!(s, "mode={mode}");
        let _ = writeln!(s, "iterations={}", self.losses.len());
        if let Some(last) = self.losses.last() {
            let _ = writeln!(s, "final_total_loss={}", last.total);
        }
        for (prefix, e) in [("initial", &self.initial), ("final", &self.final_eval)] {
            let m = &e.metrics;
            let _ = writeln!(s, "{prefix}_ratio_pct={:.4}", 100.0 * e.correspondence_ratio);
            for (k, v) in [
                ("mae", m.mae),
                ("f_beta", m.f_beta),
                ("ber", m.ber),
                ("s_ber", m.s_ber),
                ("n_ber", m.n_ber),
                ("iou_pct", m.iou_pct),
                ("ts_pct", m.ts_pct),
                ("avg_pct", m.avg_pct),
            ] {
                let _ = writeln!(s, "{prefix}_{k}={v:.4}");
            }
        }
        for (k, v) in self.config.to_kv().iter() {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    /// Per-iteration losses as CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,l_seg,l_sc,shadow_fwd,nshadow_fwd,shadow_bwd,nshadow_bwd,total\n");
        for (i, b) in self.losses.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{},{}",
                b.l_seg, b.l_sc, b.shadow_fwd, b.nshadow_fwd, b.shadow_bwd, b.nshadow_bwd, b.total
            );
        }
        s
    }

    pub fn summary_line(&self) -> String {
        let e = &self.final_eval;
        format!(
            "ratio={:.2}% ts={:.2}% iou={:.2}%",
            100.0 * e.correspondence_ratio,
            e.metrics.ts_pct,
            e.metrics.iou_pct
        )
    }
}

fn add_terms(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.shadow_fwd += b.shadow_fwd;
    acc.nshadow_fwd += b.nshadow_fwd;
    acc.shadow_bwd += b.shadow_bwd;
    acc.nshadow_bwd += b.nshadow_bwd;
    acc.l_sc += b.l_sc;
    acc.beta = b.beta;
}

/// Loss and parameter gradient for one group of frames spaced
/// `delta_frames` apart: BCE over every frame plus, when enabled, the
/// correspondence loss over each adjacent pair.
pub fn step_objective(
    params: &ToyExtractorParams,
    frames: &[RgbFrame],
    masks: &[BinaryMask],
    lambda: f64,
    beta: f64,
    use_sc_cor: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let caches = frames
        .iter()
        .map(|f| extract_features(f, params))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<_> = caches.iter().map(|c| c.preds.clone()).collect();
    let l_seg = bce_segmentation_loss(&preds, masks)?;
    let grad_preds = bce_grad(&preds, masks)?;
    let mut grad_feats: Vec<Vec<f64>> = caches.iter().map(|c| vec![0.0; c.features.data().len()]).collect();

    let breakdown = if use_sc_cor && lambda != 0.0 {
        let mut acc = LossBreakdown::default();
        for j in 0..frames.len() - 1 {
            let (b, g) = sc_cor_loss_grad(
                &caches[j].features,
                &caches[j + 1].features,
                &masks[j],
                &masks[j + 1],
                beta,
            )?;
            add_terms(&mut acc, &b);
            add_scaled(&mut grad_feats[j], &g.grad_src, lambda);
            add_scaled(&mut grad_feats[j + 1], &g.grad_tgt, lambda);
        }
        acc.with_segmentation(l_seg, lambda)
    } else {
        LossBreakdown::segmentation_only(l_seg)
    };

    let mut grad = vec![0.0; params.values.len()];
    for (((frame, cache), gf), gp) in frames.iter().zip(&caches).zip(&grad_feats).zip(&grad_preds) {
        let g = extractor_backward(frame, params, cache, gf, gp)?;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((breakdown, grad))
}

/// One group of frames with their grid-resolution masks.
#[derive(Debug, Clone)]
pub struct FrameGroup {
    pub frames: Vec<RgbFrame>,
    pub masks: Vec<BinaryMask>,
}

/// The summed training objective over a batch of frame groups, as a function
/// of the flat extractor parameters. The probe signature holds every
/// rectifier pattern, every selected match and every hinge branch, so finite
/// differences that cross a kink or change a match are skipped.
pub struct ChainObjective<'a> {
    pub hidden: usize,
    pub dim: usize,
    pub grid: usize,
    pub groups: &'a [FrameGroup],
    pub lambda: f64,
    pub beta: f64,
}

impl ChainObjective<'_> {
    fn params(&self, x: &[f64]) -> Result<ToyExtractorParams> {
        let p = ToyExtractorParams {
            hidden: self.hidden,
            dim: self.dim,
            grid: self.grid,
            values: x.to_vec(),
        };
        if x.len() != ToyExtractorParams::param_count(self.hidden, self.dim) {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                ToyExtractorParams::param_count(self.hidden, self.dim),
                x.len()
            )));
        }
        Ok(p)
    }
}

impl LossEvaluator for ChainObjective<'_> {
    fn probe(&self, x: &[f64]) -> Result<Probe> {
        let params = self.params(x)?;
        let mut value = 0.0;
        let mut signature = Vec::new();
        for group in self.groups {
            let (b, _) = step_objective(&params, &group.frames, &group.masks, self.lambda, self.beta, true)?;
            value += b.total;
            let caches = group
                .frames
                .iter()
                .map(|f| extract_features(f, &params))
                .collect::<Result<Vec<_>>>()?;
            for c in &caches {
                signature.extend(c.activation_pattern());
            }
            for j in 0..caches.len() - 1 {
                let (fwd, bwd) = bidirectional_correspondences(
                    &caches[j].features,
                    &caches[j + 1].features,
                    &group.masks[j],
                    &group.masks[j + 1],
                )?;
                signature.extend(fwd.selection_signature());
                signature.extend(bwd.selection_signature());
                signature.extend(margin_activity(&fwd, self.beta));
                signature.extend(margin_activity(&bwd, self.beta));
            }
        }
        Ok(Probe { value, signature })
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let params = self.params(x)?;
        let mut grad = vec![0.0; x.len()];
        for group in self.groups {
            let (_, g) = step_objective(&params, &group.frames, &group.masks, self.lambda, self.beta, true)?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok(grad)
    }
}

/// A tiny two-clip batch for checking the full chain: one `(t, t + delta)`
/// pair from each of two random clips, with random parameters.
pub fn chain_check_fixture(seed: u64) -> Result<(Vec<FrameGroup>, ToyExtractorParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bench = BenchmarkConfig {
        train_clips: 2,
        eval_clips: 1,
        clip: SynthConfig {
            frames_per_clip: 3,
            image_size: 12,
            grid: 3,
            illumination_drift: 0.05,
            ..SynthConfig::default()
        },
        variation: ClipVariation {
            max_speed: 1,
            ..ClipVariation::default()
        },
    };
    let data = Dataset::generate(&bench, 2, &mut rng)?;
    let groups = data
        .clips
        .iter()
        .zip(&data.grid_masks)
        .map(|(clip, masks)| FrameGroup {
            frames: vec![clip.frames()[0].clone(), clip.frames()[2].clone()],
            masks: vec![masks[0].clone(), masks[2].clone()],
        })
        .collect();
    let params = ToyExtractorParams::random(3, 2, 3, &mut rng)?;
    Ok((groups, params))
}

fn add_scaled(dst: &mut [f64], src: &FeatureMap, scale: f64) {
    for (d, s) in dst.iter_mut().zip(src.data()) {
        *d += scale * s;
    }
}

/// Seeds derived from the run seed, one per independent stream.
struct Streams {
    data: u64,
    init: u64,
    sampling: u64,
    shift: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut m = ChaCha8Rng::seed_from_u64(seed);
        Self {
            data: m.gen(),
            init: m.gen(),
            sampling: m.gen(),
            shift: m.gen(),
        }
    }
}

/// The training and held-out clips [`train_toy`] uses for `cfg`.
pub fn run_data(cfg: &ToyConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    benchmark_data(&cfg.bench, Streams::new(cfg.hyper.seed).data)
}

/// Plain gradient descent on the segmentation loss, optionally plus the
/// weighted correspondence loss, over random frame groups of the training
/// clips. Runs sharing a seed see the same data, initialization and frame
/// groups.
pub fn train_toy(cfg: &ToyConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    let start = Instant::now();
    let h = &cfg.hyper;
    let streams = Streams::new(h.seed);
    let (train, eval) = benchmark_data(&cfg.bench, streams.data)?;
    let mut params = ToyExtractorParams::random(
        h.hidden,
        h.feature_dim,
        cfg.bench.clip.grid,
        &mut ChaCha8Rng::seed_from_u64(streams.init),
    )?;
    let reference: Vec<RgbFrame> = train.clips.iter().map(|c| c.frames()[0].clone()).collect();
    params.center_biases(&reference)?;
    let initial = evaluate(&params, &eval, h.delta_frames)?;

    let mut rng = ChaCha8Rng::seed_from_u64(streams.sampling);
    let mut shift = ShiftSampler::new(ShiftConfig {
        delta: h.bs_delta,
        warmup_iters: h.bs_warmup,
        seed: streams.shift,
    })?;
    let span = (h.frames_per_iter - 1) * h.delta_frames;
    let mut losses = Vec::with_capacity(h.iters);
    for iter in 0..h.iters {
        let ci = rng.gen_range(0..train.clips.len());
        let clip = &train.clips[ci];
        let t0 = rng.gen_range(0..clip.len() - span);
        let flip = h.hflip && rng.gen_bool(0.5);
        let shifting = cfg.use_bs && shift.config().active_at(iter);
        let mut frames = Vec::with_capacity(h.frames_per_iter);
        let mut masks = Vec::with_capacity(h.frames_per_iter);
        for j in 0..h.frames_per_iter {
            let t = t0 + j * h.delta_frames;
            let mut f = clip.frames()[t].clone();
            let mut m = train.grid_masks[ci][t].clone();
            if flip {
                f = f.flipped_horizontal();
                m = m.flipped_horizontal();
            }
            if shifting && j > 0 {
                f = apply_shift(&f, shift.sample());
            }
            frames.push(f);
            masks.push(m);
        }
        let (breakdown, grad) =
            step_objective(&params, &frames, &masks, h.lambda, h.beta, cfg.use_sc_cor).map_err(|e| match e {
                Error::InvalidArgument(_) => Error::Diverged { iter },
                other => other,
            })?;
        if !breakdown.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iter });
        }
        for (p, g) in params.values.iter_mut().zip(&grad) {
            *p -= h.lr * g;
        }
        losses.push(breakdown);
    }

    let final_eval = if h.iters == 0 {
        initial
    } else {
        evaluate(&params, &eval, h.delta_frames)?
    };
    Ok(TrainingReport {
        losses,
        initial,
        final_eval,
        config: cfg.clone(),
        wall_clock: start.elapsed(),
        params,
    })
}
