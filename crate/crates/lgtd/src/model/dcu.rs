//! Difference compensation: correct a guide feature by a residual computed
//! from its disagreement with a companion feature.

use ndarray::ArrayD;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::ops::{relu, relu_backward};
use crate::nn::{Grads, ParamStore};

/// `out = guide + c2(relu(c1(guide - companion)))`. The closing conv starts
/// at zero, so a fresh unit returns the guide untouched no matter what the
/// companion carries.
pub struct Dcu {
    c1: Conv2d,
    c2: Conv2d,
}

pub struct DcuCtx {
    c1: ConvCtx,
    c2: ConvCtx,
    pre: ArrayD<f64>,
}

impl Dcu {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize) -> Self {
        Dcu {
            c1: Conv2d::new(ps, rng, &format!("{name}.c1"), c, c, 3, PadMode::Zero),
            c2: Conv2d::new_zero(ps, &format!("{name}.c2"), c, c, 3, PadMode::Zero),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        guide: &ArrayD<f64>,
        companion: &ArrayD<f64>,
    ) -> Result<(ArrayD<f64>, DcuCtx)> {
        if guide.shape() != companion.shape() {
            return Err(Error::shape(
                "dcu",
                format!(
                    "guide {:?} vs companion {:?}",
                    guide.shape(),
                    companion.shape()
                ),
            ));
        }
        let diff = guide - companion;
        let (pre, c1) = self.c1.forward(ps, &diff);
        let act = relu(&pre);
        let (corr, c2) = self.c2.forward(ps, &act);
        Ok((guide + &corr, DcuCtx { c1, c2, pre }))
    }

    /// Correction term alone, for compositional tests.
    pub fn correction(&self, ps: &ParamStore, diff: &ArrayD<f64>) -> ArrayD<f64> {
        let (pre, _) = self.c1.forward(ps, diff);
        let (corr, _) = self.c2.forward(ps, &relu(&pre));
        corr
    }

    /// Returns `(d_guide, d_companion)`.
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &DcuCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> (ArrayD<f64>, ArrayD<f64>) {
        let d_act = self.c2.backward(ps, &ctx.c2, dy, grads);
        let d_pre = relu_backward(&ctx.pre, &d_act);
        let d_diff = self.c1.backward(ps, &ctx.c1, &d_pre, grads);
        let d_guide = dy + &d_diff;
        let d_companion = d_diff.mapv(|v| -v);
        (d_guide, d_companion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{assert_close, rand_arr, sample_indices};
    use rand::{Rng, SeedableRng};

    fn perturb(ps: &mut ParamStore, rng: &mut ChaCha12Rng) {
        for v in ps.values_mut() {
            v.map_inplace(|x| *x += 0.2 * (rng.gen::<f64>() - 0.5));
        }
    }

    #[test]
    fn fresh_unit_returns_the_guide_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 4);
        let guide = rand_arr(&mut rng, &[2, 4, 5, 5]);
        let companion = rand_arr(&mut rng, &[2, 4, 5, 5]);
        let (out, _) = dcu.forward(&ps, &guide, &companion).unwrap();
        assert_eq!(out, guide);
    }

    #[test]
    fn equal_inputs_add_only_the_zero_point_response() {
        // With guide == companion the difference vanishes, so the correction
        // is the unit's bias-driven response to an all-zero difference.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 3);
        perturb(&mut ps, &mut rng);
        let x = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let (out, _) = dcu.forward(&ps, &x, &x).unwrap();
        let zero = ArrayD::<f64>::zeros(vec![1, 3, 4, 4]);
        let resp = dcu.correction(&ps, &zero);
        for ((o, g), r) in out.iter().zip(x.iter()).zip(resp.iter()) {
            assert!((o - (g + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 3);
        let a = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let b = rand_arr(&mut rng, &[1, 3, 4, 6]);
        assert!(dcu.forward(&ps, &a, &b).is_err());
    }

    #[test]
    fn correction_matches_explicit_composition() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 3);
        perturb(&mut ps, &mut rng);
        let guide = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let companion = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let (out, _) = dcu.forward(&ps, &guide, &companion).unwrap();
        let want = &guide + &dcu.correction(&ps, &(&guide - &companion));
        assert_eq!(out, want);
    }

    #[test]
    fn swapping_inputs_changes_only_the_difference_sign() {
        // The correction depends on the pair only through guide - companion.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 3);
        perturb(&mut ps, &mut rng);
        let a = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let b = rand_arr(&mut rng, &[1, 3, 4, 4]);
        let (ab, _) = dcu.forward(&ps, &a, &b).unwrap();
        let (ba, _) = dcu.forward(&ps, &b, &a).unwrap();
        let corr_ab = &ab - &a;
        let corr_ba = &ba - &b;
        let flipped = dcu.correction(&ps, &(&b - &a));
        for (x, y) in corr_ba.iter().zip(flipped.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // And the two corrections genuinely differ (the unit is nonlinear).
        let diff: f64 = (&corr_ab - &corr_ba).iter().map(|v| v.abs()).sum();
        assert!(diff > 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut ps = ParamStore::new();
        let dcu = Dcu::new(&mut ps, &mut rng, "dcu", 2);
        perturb(&mut ps, &mut rng);
        let guide = rand_arr(&mut rng, &[1, 2, 4, 4]);
        let companion = rand_arr(&mut rng, &[1, 2, 4, 4]);
        let proj = rand_arr(&mut rng, &[1, 2, 4, 4]);
        let loss = |ps: &ParamStore, g: &ArrayD<f64>, c: &ArrayD<f64>| -> f64 {
            let (y, _) = dcu.forward(ps, g, c).unwrap();
            (&y * &proj).sum()
        };
        let (_, ctx) = dcu.forward(&ps, &guide, &companion).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        let (d_guide, d_companion) = dcu.backward(&ps, &ctx, &proj, &mut grads);

        let h = 1e-5;
        for idx in sample_indices(&mut rng, guide.len(), 12) {
            let mut gp = guide.clone();
            gp.as_slice_mut().unwrap()[idx] += h;
            let mut gm = guide.clone();
            gm.as_slice_mut().unwrap()[idx] -= h;
            let num = (loss(&ps, &gp, &companion) - loss(&ps, &gm, &companion)) / (2.0 * h);
            assert_close(d_guide.as_slice().unwrap()[idx], num, 1e-4);
        }
        for idx in sample_indices(&mut rng, companion.len(), 12) {
            let mut cp = companion.clone();
            cp.as_slice_mut().unwrap()[idx] += h;
            let mut cm = companion.clone();
            cm.as_slice_mut().unwrap()[idx] -= h;
            let num = (loss(&ps, &guide, &cp) - loss(&ps, &guide, &cm)) / (2.0 * h);
            assert_close(d_companion.as_slice().unwrap()[idx], num, 1e-4);
        }
        for pi in 0..ps.len() {
            let n = ps.values()[pi].len();
            for idx in sample_indices(&mut rng, n, 8) {
                let mut psp = ps.clone();
                psp.values_mut()[pi].as_slice_mut().unwrap()[idx] += h;
                let mut psm = ps.clone();
                psm.values_mut()[pi].as_slice_mut().unwrap()[idx] -= h;
                let num =
                    (loss(&psp, &guide, &companion) - loss(&psm, &guide, &companion)) / (2.0 * h);
                assert_close(grads.values()[pi].as_slice().unwrap()[idx], num, 1e-4);
            }
        }
    }
}
