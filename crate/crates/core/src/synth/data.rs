//! Synthetic shadow clips: a textured background with dark distractor
//! patches, a polygonal shadow translating at an integer velocity, and a
//! global brightness drift. Masks and flows are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tensor::{BinaryMask, FlowField, RgbFrame, VideoClip};

/// Background texture recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSpec {
    pub seed: u64,
    /// Spacing in pixels of the coarse value-noise lattice.
    pub cell: usize,
    /// Mean albedo of the background.
    pub base: f64,
    /// Peak-to-peak amplitude of the coarse noise.
    pub contrast: f64,
    /// Amplitude of per-channel colour variation on the coarse lattice.
    pub tint: f64,
    /// Amplitude of per-pixel grain.
    pub grain: f64,
    /// Number of dark, non-shadow rectangles painted onto the background.
    pub dark_patches: usize,
    /// Albedo multiplier inside dark patches.
    pub dark_albedo: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            cell: 8,
            base: 0.6,
            contrast: 0.3,
            tint: 0.1,
            grain: 0.05,
            dark_patches: 2,
            dark_albedo: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames_per_clip: usize,
    pub image_size: usize,
    pub grid: usize,
    /// Shadow polygon vertices `(x, y)` in pixels at frame 0.
    pub shadow_shape: Vec<(f64, f64)>,
    /// Integer shadow displacement `(vx, vy)` per frame.
    pub velocity: (i32, i32),
    pub background_texture: TextureSpec,
    /// Relative illumination change per frame: frame `t` is scaled by
    /// `1 + drift * (t - (T - 1) / 2)`.
    pub illumination_drift: f64,
    /// Albedo multiplier under the shadow.
    pub shadow_attenuation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames_per_clip: 8,
            image_size: 68,
            grid: 17,
            shadow_shape: vec![(20.0, 20.0), (44.0, 22.0), (40.0, 46.0), (22.0, 40.0)],
            velocity: (1, 0),
            background_texture: TextureSpec::default(),
            illumination_drift: 0.0,
            shadow_attenuation: 0.45,
            seed: 0,
        }
    }
}

/// Ranges for [`SynthConfig::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipVariation {
    /// Largest per-axis speed in pixels per frame.
    pub max_speed: i32,
    /// Shadow radius range as a fraction of the image size.
    pub radius: (f64, f64),
}

impl Default for ClipVariation {
    fn default() -> Self {
        Self {
            max_speed: 2,
            radius: (0.14, 0.22),
        }
    }
}

impl ClipVariation {
    /// Checks that every clip drawn with these ranges keeps its shadow inside
    /// the frame.
    pub fn validate(&self, base: &SynthConfig) -> Result<()> {
        let (rlo, rhi) = self.radius;
        if !(rlo > 0.0 && rhi >= rlo) || self.max_speed < 0 {
            return Err(invalid(
                "shadow radius range must be positive and ordered, speed non-negative",
            ));
        }
        let n = base.image_size as f64;
        let travel = f64::from(self.max_speed) * base.frames_per_clip.saturating_sub(1) as f64;
        if 2.0 * (rhi * n + 1.0) + travel > n {
            return Err(invalid(format!(
                "a shadow of radius {rhi} moving {} px per frame does not stay inside {}-pixel frames",
                self.max_speed, base.image_size
            )));
        }
        Ok(())
    }
}

/// Even-odd test of the point `(x, y)` against a closed polygon.
fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip == 0 {
            return Err(invalid("clip needs at least one frame"));
        }
        if self.grid == 0 || self.image_size == 0 || self.image_size % self.grid != 0 {
            return Err(invalid(format!(
                "image size {} is not a multiple of grid {}",
                self.image_size, self.grid
            )));
        }
        if self.shadow_shape.len() < 3 {
            return Err(invalid("shadow polygon needs at least three vertices"));
        }
        if !(self.illumination_drift.abs() * (self.frames_per_clip - 1) as f64 / 2.0 < 1.0) {
            return Err(invalid("illumination drift would make some frame's gain non-positive"));
        }
        if !(0.0..=1.0).contains(&self.shadow_attenuation) {
            return Err(invalid("shadow attenuation must lie in [0, 1]"));
        }
        let last = (self.frames_per_clip - 1) as f64;
        let size = self.image_size as f64;
        for &(x, y) in &self.shadow_shape {
            for t in [0.0, last] {
                let (px, py) = (x + f64::from(self.velocity.0) * t, y + f64::from(self.velocity.1) * t);
                if !(0.0..=size).contains(&px) || !(0.0..=size).contains(&py) {
                    return Err(invalid(format!("shadow leaves the frame by frame {last}")));
                }
            }
        }
        Ok(())
    }

    /// Shadow mask of frame `t`, sampled at pixel centres.
    pub fn mask_at(&self, t: usize) -> BinaryMask {
        let ox = f64::from(self.velocity.0) * t as f64;
        let oy = f64::from(self.velocity.1) * t as f64;
        let n = self.image_size;
        BinaryMask::from_fn(n, n, |h, w| {
            inside(&self.shadow_shape, w as f64 + 0.5 - ox, h as f64 + 0.5 - oy)
        })
        .expect("positive size")
    }

    /// Random clip configuration: polygon, velocity, texture and drift sign
    /// all drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, base: &SynthConfig, variation: &ClipVariation) -> Self {
        let n = base.image_size as f64;
        let t_last = base.frames_per_clip.saturating_sub(1) as f64;
        let max_speed = variation.max_speed;
        let vx = rng.gen_range(-max_speed..=max_speed);
        let vy = rng.gen_range(-max_speed..=max_speed);
        let (rlo, rhi) = variation.radius;
        let radius = if rhi > rlo { rng.gen_range(rlo..rhi) } else { rlo } * n;
        let margin = radius + 1.0;
        let span = |v: i32| {
            let travel = f64::from(v) * t_last;
            let lo = margin - travel.min(0.0);
            let hi = n - margin - travel.max(0.0);
            (lo, hi.max(lo))
        };
        let (xlo, xhi) = span(vx);
        let (ylo, yhi) = span(vy);
        let cx = if xhi > xlo { rng.gen_range(xlo..xhi) } else { xlo };
        let cy = if yhi > ylo { rng.gen_range(ylo..yhi) } else { ylo };
        let sides = rng.gen_range(5..=7);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let shape = (0..sides)
            .map(|k| {
                let a = phase + std::f64::consts::TAU * k as f64 / sides as f64;
                let r = radius * rng.gen_range(0.7..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let drift_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Self {
            shadow_shape: shape,
            velocity: (vx, vy),
            background_texture: TextureSpec {
                seed: rng.gen(),
                ..base.background_texture.clone()
            },
            illumination_drift: drift_sign * base.illumination_drift.abs(),
            seed: rng.gen(),
            ..base.clone()
        }
    }
}

/// Per-pixel RGB albedo of the background.
fn albedo(cfg: &SynthConfig) -> Vec<f64> {
    let tex = &cfg.background_texture;
    let n = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(tex.seed);
    let cell = tex.cell.max(1);
    let lattice = n / cell + 2;
    let coarse: Vec<[f64; 3]> = (0..lattice * lattice)
        .map(|_| {
            let v = rng.gen_range(-0.5..0.5);
            let mut tint = [0.0; 3];
            if tex.tint > 0.0 {
                tint.iter_mut().for_each(|t| *t = rng.gen_range(-tex.tint..tex.tint));
            }
            [v + tint[0], v + tint[1], v + tint[2]]
        })
        .collect();
    let patches: Vec<(usize, usize, usize, usize)> = (0..tex.dark_patches)
        .map(|_| {
            let w = rng.gen_range(n / 8..=n / 4);
            let h = rng.gen_range(n / 8..=n / 4);
            (rng.gen_range(0..n - h), rng.gen_range(0..n - w), h, w)
        })
        .collect();
    let mut out = Vec::with_capacity(n * n * 3);
    for h in 0..n {
        for w in 0..n {
            let gy = h as f64 / cell as f64;
            let gx = w as f64 / cell as f64;
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let dark = patches
                .iter()
                .any(|&(py, px, ph, pw)| (py..py + ph).contains(&h) && (px..px + pw).contains(&w));
            for c in 0..3 {
                let at = |y: usize, x: usize| coarse[y * lattice + x][c];
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                let mut a = tex.base + tex.contrast * v + tex.grain * rng.gen_range(-1.0..1.0);
                if dark {
                    a *= tex.dark_albedo;
                }
                out.push(a.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Renders a clip with exact masks and exact flows between consecutive masks.
pub fn generate_clip(cfg: &SynthConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let n = cfg.image_size;
    let base = albedo(cfg);
    let mid = (cfg.frames_per_clip - 1) as f64 / 2.0;
    let mut frames = Vec::with_capacity(cfg.frames_per_clip);
    let mut masks = Vec::with_capacity(cfg.frames_per_clip);
    for t in 0..cfg.frames_per_clip {
        let mask = cfg.mask_at(t);
        let gain = 1.0 + cfg.illumination_drift * (t as f64 - mid);
        let mut data = Vec::with_capacity(n * n * 3);
        for (i, px) in base.chunks_exact(3).enumerate() {
            let shade = if mask.data()[i] == 1 {
                cfg.shadow_attenuation
            } else {
                1.0
            };
            data.extend(px.iter().map(|&a| (a * shade * gain).clamp(0.0, 1.0)));
        }
        frames.push(RgbFrame::new(n, n, data)?);
        masks.push(mask);
    }
    let (vx, vy) = cfg.velocity;
    let flows = (1..cfg.frames_per_clip)
        .map(|_| FlowField::uniform(n, n, vx as f32, vy as f32))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, masks, Some(flows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::warp_backward;

    #[test]
    fn static_clip_is_constant() {
        let cfg = SynthConfig {
            velocity: (0, 0),
            illumination_drift: 0.0,
            ..SynthConfig::default()
        };
        let clip = generate_clip(&cfg).unwrap();
        assert!(clip.frames().windows(2).all(|w| w[0] == w[1]));
        assert!(clip.gt_masks().windows(2).all(|w| w[0] == w[1]));
        assert!(clip
            .flows()
            .unwrap()
            .iter()
            .flat_map(|f| f.data())
            .all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn moving_shadow_shifts_mask() {
        let cfg = SynthConfig::default();
        let clip = generate_clip(&cfg).unwrap();
        let m = clip.gt_masks();
        let n = cfg.image_size;
        for t in 0..m.len() - 1 {
            assert!(m[t].count() > 0);
            for h in 0..n {
                for w in 1..n {
                    assert_eq!(m[t + 1].get(h, w), m[t].get(h, w - 1));
                }
            }
            // Warping mask t+1 back by the flow reproduces mask t.
            let flow = &clip.flows().unwrap()[t];
            for h in 0..n {
                for w in 0..n {
                    if m[t].get(h, w) {
                        assert_eq!(flow.get(h, w), [1.0, 0.0]);
                    }
                }
            }
            let back = warp_backward(&m[t + 1].to_prob(), flow).unwrap();
            assert_eq!(BinaryMask::threshold(&back, 0.5), m[t]);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let base = SynthConfig {
            illumination_drift: 0.05,
            ..SynthConfig::default()
        };
        let a = SynthConfig::random(&mut r1, &base, &ClipVariation::default());
        let b = SynthConfig::random(&mut r2, &base, &ClipVariation::default());
        assert_eq!(a, b);
        assert_eq!(generate_clip(&a).unwrap(), generate_clip(&b).unwrap());
    }

    #[test]
    fn random_configs_stay_in_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cfg = SynthConfig::random(&mut rng, &SynthConfig::default(), &ClipVariation::default());
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn leaving_frame_is_an_error() {
        let cfg = SynthConfig {
            velocity: (10, 0),
            ..SynthConfig::default()
        };
        assert!(generate_clip(&cfg).is_err());
    }

    #[test]
    fn drift_brightens_frames() {
        let cfg = SynthConfig {
            velocity: (0, 0),
            illumination_drift: 0.05,
            ..SynthConfig::default()
        };
        let clip = generate_clip(&cfg).unwrap();
        let mean = |f: &RgbFrame| f.data().iter().sum::<f64>() / f.data().len() as f64;
        assert!(mean(&clip.frames()[7]) > 1.25 * mean(&clip.frames()[0]));
    }
}
