//! Central-difference gradient verification.
//!
//! Losses with argmax selections and hinges are only piecewise smooth. An
//! evaluator reports a signature of its discrete choices with every probe; a
//! coordinate whose `±step` perturbation changes the signature sits next to
//! a tie or a kink and is skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::loss::{
    bce_grad, bce_segmentation_loss, bidirectional_correspondences, margin_activity, sc_cor_loss, sc_cor_loss_grad,
};
use crate::tensor::{BinaryMask, FeatureMap, ProbMask};

/// Loss value at a point plus the discrete choices made while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub signature: Vec<usize>,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Self {
            value,
            signature: Vec::new(),
        }
    }
}

/// A scalar function of a flat parameter vector with an analytical gradient.
pub trait LossEvaluator {
    fn probe(&self, x: &[f64]) -> Result<Probe>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|numeric|, 1e-8)` over the
    /// checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` was attained.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation changed a selection.
    pub skipped: Vec<usize>,
}

impl GradCheckReport {
    pub fn merge(mut self, other: &Self) -> Self {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index;
        }
        self.checked += other.checked;
        self.skipped.extend_from_slice(&other.skipped);
        self
    }

    pub fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            skipped: Vec::new(),
        }
    }
}

/// Compares `eval.gradient` against central differences on every coordinate.
pub fn check_gradient<E: LossEvaluator + ?Sized>(eval: &E, x: &[f64], step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let base = eval.probe(x)?;
    let analytic = eval.gradient(x)?;
    if analytic.len() != x.len() {
        return Err(invalid(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    let mut report = GradCheckReport::empty();
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let plus = eval.probe(&xp)?;
        xp[i] = x[i] - step;
        let minus = eval.probe(&xp)?;
        xp[i] = x[i];
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped.push(i);
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// [`check_gradient`] over the entries of a feature map.
pub fn finite_difference_check<E: LossEvaluator + ?Sized>(
    eval: &E,
    features: &FeatureMap,
    step: f64,
) -> Result<GradCheckReport> {
    check_gradient(eval, features.data(), step)
}

/// `l_sc` as a function of both feature maps, flattened as `[F_t, F_t+δ]`.
pub struct ScCorObjective<'a> {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub y_t: &'a BinaryMask,
    pub y_td: &'a BinaryMask,
    pub beta: f64,
}

impl ScCorObjective<'_> {
    fn split(&self, x: &[f64]) -> Result<(FeatureMap, FeatureMap)> {
        let n = self.height * self.width * self.dim;
        if x.len() != 2 * n {
            return Err(invalid(format!("expected {} parameters, got {}", 2 * n, x.len())));
        }
        Ok((
            FeatureMap::new(self.height, self.width, self.dim, x[..n].to_vec())?,
            FeatureMap::new(self.height, self.width, self.dim, x[n..].to_vec())?,
        ))
    }

    pub fn flatten(f_t: &FeatureMap, f_td: &FeatureMap) -> Vec<f64> {
        let mut x = f_t.data().to_vec();
        x.extend_from_slice(f_td.data());
        x
    }
}

impl LossEvaluator for ScCorObjective<'_> {
    fn probe(&self, x: &[f64]) -> Result<Probe> {
        let (f_t, f_td) = self.split(x)?;
        let (fwd, bwd) = bidirectional_correspondences(&f_t, &f_td, self.y_t, self.y_td)?;
        let value = sc_cor_loss(&f_t, &f_td, self.y_t, self.y_td, self.beta)?.l_sc;
        let mut signature = fwd.selection_signature();
        signature.extend(bwd.selection_signature());
        signature.extend(margin_activity(&fwd, self.beta));
        signature.extend(margin_activity(&bwd, self.beta));
        Ok(Probe { value, signature })
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (f_t, f_td) = self.split(x)?;
        let (_, g) = sc_cor_loss_grad(&f_t, &f_td, self.y_t, self.y_td, self.beta)?;
        Ok(Self::flatten(&g.grad_src, &g.grad_tgt))
    }
}

/// BCE as a function of the concatenated predictions.
pub struct BceObjective<'a> {
    pub gts: &'a [BinaryMask],
}

impl BceObjective<'_> {
    fn preds(&self, x: &[f64]) -> Result<Vec<ProbMask>> {
        let mut out = Vec::with_capacity(self.gts.len());
        let mut offset = 0;
        for g in self.gts {
            let n = g.height() * g.width();
            let chunk = x
                .get(offset..offset + n)
                .ok_or_else(|| invalid("too few prediction values"))?;
            out.push(ProbMask::new(g.height(), g.width(), chunk.to_vec())?);
            offset += n;
        }
        if offset != x.len() {
            return Err(invalid("too many prediction values"));
        }
        Ok(out)
    }
}

impl LossEvaluator for BceObjective<'_> {
    fn probe(&self, x: &[f64]) -> Result<Probe> {
        Ok(Probe::smooth(bce_segmentation_loss(&self.preds(x)?, self.gts)?))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(bce_grad(&self.preds(x)?, self.gts)?.concat())
    }
}

/// Feature maps and masks for one correspondence-loss check.
#[derive(Debug, Clone)]
pub struct ScCorCase {
    pub f_t: FeatureMap,
    pub f_td: FeatureMap,
    pub y_t: BinaryMask,
    pub y_td: BinaryMask,
}

impl ScCorCase {
    /// Standard-normal features and fair-coin masks on a `size x size x dim`
    /// grid, seeded.
    pub fn random(seed: u64, size: usize, dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = size * size * dim;
        let f_t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f_td: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut coin = |_: usize| u8::from(rng.gen_bool(0.5));
        let y_t = BinaryMask::new(size, size, (0..size * size).map(&mut coin).collect())?;
        let y_td = BinaryMask::new(size, size, (0..size * size).map(&mut coin).collect())?;
        Ok(Self {
            f_t: FeatureMap::new(size, size, dim, f_t)?,
            f_td: FeatureMap::new(size, size, dim, f_td)?,
            y_t,
            y_td,
        })
    }

    /// A `3 x 3 x 2` pair where the only source anchor has two equally
    /// similar target cells, one shadow and one not.
    pub fn exact_tie() -> Self {
        let mut f_t = Vec::new();
        for cell in 0..9 {
            f_t.extend_from_slice(&if cell == 0 {
                [1.0, 0.0]
            } else {
                [-0.5, 1.0 + cell as f64 * 0.1]
            });
        }
        let mut f_td = Vec::new();
        for cell in 0..9 {
            f_td.extend_from_slice(&match cell {
                1 => [1.0, 1.0],
                2 => [2.0, 2.0],
                _ => [-1.0, 0.2 * cell as f64],
            });
        }
        let y_t = BinaryMask::from_fn(3, 3, |h, w| h == 0 && w == 0).expect("3x3");
        let y_td = BinaryMask::from_fn(3, 3, |h, w| h == 0 && w == 1).expect("3x3");
        Self {
            f_t: FeatureMap::new(3, 3, 2, f_t).expect("finite"),
            f_td: FeatureMap::new(3, 3, 2, f_td).expect("finite"),
            y_t,
            y_td,
        }
    }

    pub fn objective(&self, beta: f64) -> ScCorObjective<'_> {
        ScCorObjective {
            height: self.f_t.height(),
            width: self.f_t.width(),
            dim: self.f_t.dim(),
            y_t: &self.y_t,
            y_td: &self.y_td,
            beta,
        }
    }

    pub fn check(&self, beta: f64, step: f64) -> Result<GradCheckReport> {
        check_gradient(
            &self.objective(beta),
            &ScCorObjective::flatten(&self.f_t, &self.f_td),
            step,
        )
    }
}

/// Random predictions in `[0.1, 0.9]` and fair-coin ground truth for
/// `frames` maps of `size x size`; returns the flattened predictions and the
/// masks.
pub fn random_bce_case(seed: u64, frames: usize, size: usize) -> Result<(Vec<f64>, Vec<BinaryMask>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = (0..frames * size * size).map(|_| rng.gen_range(0.1..0.9)).collect();
    let gts = (0..frames)
        .map(|_| {
            BinaryMask::new(
                size,
                size,
                (0..size * size).map(|_| u8::from(rng.gen_bool(0.5))).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((preds, gts))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(Vec<f64>);

    impl LossEvaluator for Quadratic {
        fn probe(&self, x: &[f64]) -> Result<Probe> {
            Ok(Probe::smooth(self.0.iter().zip(x).map(|(c, v)| c * v * v).sum()))
        }

        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.iter().zip(x).map(|(c, v)| 2.0 * c * v).collect())
        }
    }

    #[test]
    fn quadratic_passes() {
        let q = Quadratic(vec![1.0, 3.0, 0.5, 2.0]);
        let f = FeatureMap::new(2, 2, 1, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = finite_difference_check(&q, &f, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
        assert_eq!(r.checked, 4);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Bad;
        impl LossEvaluator for Bad {
            fn probe(&self, x: &[f64]) -> Result<Probe> {
                Ok(Probe::smooth(x[0] * x[0]))
            }
            fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![x[0]])
            }
        }
        let r = check_gradient(&Bad, &[1.0], 1e-5).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn signature_change_skips_coordinate() {
        struct Kink;
        impl LossEvaluator for Kink {
            fn probe(&self, x: &[f64]) -> Result<Probe> {
                Ok(Probe {
                    value: x[0].abs() + x[1] * x[1],
                    signature: vec![usize::from(x[0] > 0.0)],
                })
            }
            fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![x[0].signum(), 2.0 * x[1]])
            }
        }
        let r = check_gradient(&Kink, &[1e-7, 0.5], 1e-5).unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn random_sc_cases_pass() {
        for seed in 0..20 {
            let r = ScCorCase::random(seed, 3, 2).unwrap().check(0.5, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn coordinates_straddling_the_margin_kink_are_skipped() {
        // One forward anchor here sits 1.4e-5 past the margin.
        let r = ScCorCase::random(49, 3, 2).unwrap().check(0.5, 1e-5).unwrap();
        assert!(!r.skipped.is_empty());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn exact_tie_is_skipped() {
        let case = ScCorCase::exact_tie();
        let r = case.check(0.5, 1e-5).unwrap();
        assert!(!r.skipped.is_empty());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn coarse_step_is_less_accurate() {
        let case = ScCorCase::random(3, 3, 2).unwrap();
        let fine = case.check(0.5, 1e-5).unwrap();
        let coarse = case.check(0.5, 1e-2).unwrap();
        assert!(coarse.max_rel_error > fine.max_rel_error);
    }

    #[test]
    fn bce_case_passes() {
        let (preds, gts) = random_bce_case(1, 2, 3).unwrap();
        let r = check_gradient(&BceObjective { gts: &gts }, &preds, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let q = Quadratic(vec![1.0]);
        assert!(check_gradient(&q, &[1.0], 0.0).is_err());
        assert!(check_gradient(&q, &[1.0], f64::NAN).is_err());
    }
}
