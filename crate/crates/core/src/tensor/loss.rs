use super::tape::{Accumulator, Op};
use super::{Real, Tape, Tensor5, Var};
use crate::error::{shape_err, Result};

/// Additive smoothing in the soft-dice numerator and denominator.
pub const DICE_SMOOTHING: f64 = 1e-5;

/// Per-(n, c) sums `(Σp·g, Σp, Σg)`.
fn plane_sums<T: Real>(p: &Tensor5<T>, g: &Tensor5<T>) -> Vec<(T, T, T)> {
    let s = p.shape();
    let plane = s.plane();
    (0..s.n * s.c)
        .map(|pi| {
            let pp = &p.data()[pi * plane..][..plane];
            let gg = &g.data()[pi * plane..][..plane];
            (super::dot(pp, gg), super::sum(pp), super::sum(gg))
        })
        .collect()
}

impl<T: Real> Tape<T> {
    /// Soft dice loss averaged over `(n, c)` pairs; `pred` should already be
    /// a probability map.
    pub fn dice_loss(&mut self, pred: Var, target: Var, eps: f64) -> Result<Var> {
        let (ps, ts) = (self.shape(pred), self.shape(target));
        if ps != ts {
            return Err(shape_err!("dice_loss of mismatched shapes {ps} and {ts}"));
        }
        let e = T::lit(eps);
        let sums = plane_sums(self.value(pred), self.value(target));
        let two = T::lit(2.0);
        let total: T = sums
            .iter()
            .map(|&(i, p, g)| T::one() - (two * i + e) / (p + g + e))
            .fold(T::zero(), |a, v| a + v);
        let loss = total / T::lit(sums.len() as f64);
        Ok(self.push(
            Tensor5::scalar(loss),
            &[pred, target],
            Op::Dice { pred, target, eps: e },
        ))
    }
}

pub(super) fn dice_backward<T: Real>(
    acc: &mut Accumulator<'_, T>,
    g0: T,
    pred: Var,
    target: Var,
    eps: T,
) {
    let p = acc.value(pred);
    let t = acc.value(target);
    let plane = p.shape().plane();
    let sums = plane_sums(p, t);
    let scale = g0 / T::lit(sums.len() as f64);
    let two = T::lit(2.0);
    let td = t.data();
    acc.add(pred, |gp| {
        for (pi, &(i, ps, gs)) in sums.iter().enumerate() {
            let den = ps + gs + eps;
            let num = two * i + eps;
            let inv2 = T::one() / (den * den);
            for k in pi * plane..(pi + 1) * plane {
                // d/dp [1 - num/den] = -(2g·den - num) / den²
                gp[k] -= scale * (two * td[k] * den - num) * inv2;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::super::Shape5;
    use super::*;

    fn dice(p: Vec<f64>, g: Vec<f64>, eps: f64) -> f64 {
        let s = Shape5::new(1, 1, 1, 1, p.len());
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor5::new(s, p).unwrap());
        let gv = tape.constant(Tensor5::new(s, g).unwrap());
        let l = tape.dice_loss(pv, gv, eps).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let m = vec![1.0, 0.0, 1.0, 1.0];
        assert!(dice(m.clone(), m, DICE_SMOOTHING).abs() < 1e-12);
    }

    #[test]
    fn disjoint_prediction_is_nearly_one() {
        let l = dice(vec![0.0; 4], vec![1.0, 1.0, 0.0, 1.0], DICE_SMOOTHING);
        let want = 1.0 - DICE_SMOOTHING / (3.0 + DICE_SMOOTHING);
        assert!((l - want).abs() < 1e-12);
        assert!(l < 1.0);
    }

    #[test]
    fn half_probability_case() {
        assert!((dice(vec![0.5, 0.5], vec![1.0, 0.0], 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_target_and_empty_pred_is_finite() {
        let l = dice(vec![0.0; 3], vec![0.0; 3], DICE_SMOOTHING);
        assert!(l.abs() < 1e-12);
    }
}
