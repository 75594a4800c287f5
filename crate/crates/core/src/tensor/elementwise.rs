use super::active::ActivationKind;
use super::tape::{Accumulator, Op};
use super::{Real, Shape5, Tape, Tensor5, Var};
use crate::error::{shape_err, Result};
use crate::par;

const CHUNK: usize = 1 << 14;

impl<T: Real> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Var {
        let mut out = self.value(x).clone();
        par::for_each_chunk(out.data_mut(), CHUNK, |_, c| {
            for v in c {
                *v = kind.apply(*v);
            }
        });
        self.push(out, &[x], Op::Activation { x, kind })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!("add of mismatched shapes {sa} and {sb}"));
        }
        let mut out = self.value(a).clone();
        super::axpy(T::one(), self.value(b).data(), out.data_mut());
        Ok(self.push(out, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!("mul of mismatched shapes {sa} and {sb}"));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        Ok(self.push(out, &[a, b], Op::Mul { a, b }))
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.spatial() != sb.spatial() {
            return Err(shape_err!("concat of incompatible shapes {sa} and {sb}"));
        }
        let os = sa.with_channels(sa.c + sb.c);
        let plane = sa.plane();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..sa.n {
            out.extend_from_slice(&da[n * sa.c * plane..(n + 1) * sa.c * plane]);
            out.extend_from_slice(&db[n * sb.c * plane..(n + 1) * sb.c * plane]);
        }
        let value = Tensor5::new(os, out)?;
        Ok(self.push(value, &[a, b], Op::Concat { a, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        par::for_each_chunk(out.data_mut(), CHUNK, |_, c| {
            for v in c {
                *v = sigmoid(*v);
            }
        });
        self.push(out, &[x], Op::Sigmoid { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = super::sum(self.value(x).data());
        self.push(Tensor5::scalar(s), &[x], Op::Sum { x })
    }

    /// `Σ wᵢ·xᵢ` against fixed weights; the usual scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(shape_err!(
                "weighted_sum needs {} weights, got {}",
                self.value(x).numel(),
                weights.len()
            ));
        }
        let s = super::dot(self.value(x).data(), &weights);
        Ok(self.push(Tensor5::scalar(s), &[x], Op::WeightedSum { x, weights }))
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(super) fn activation_backward<T: Real>(
    acc: &mut Accumulator<'_, T>,
    g: &[T],
    x: Var,
    y: &Tensor5<T>,
    kind: ActivationKind,
) {
    let xv = acc.value(x).data();
    let yv = y.data();
    acc.add(x, |gx| {
        for i in 0..gx.len() {
            gx[i] += g[i] * kind.derivative(xv[i], yv[i]);
        }
    });
}

pub(super) fn sigmoid_backward<T: Real>(acc: &mut Accumulator<'_, T>, g: &[T], x: Var, y: &Tensor5<T>) {
    let yv = y.data();
    acc.add(x, |gx| {
        for i in 0..gx.len() {
            gx[i] += g[i] * yv[i] * (T::one() - yv[i]);
        }
    });
}

pub(super) fn mul_backward<T: Real>(acc: &mut Accumulator<'_, T>, g: &[T], a: Var, b: Var) {
    let (av, bv) = (acc.value(a).data(), acc.value(b).data());
    acc.add(a, |ga| {
        for i in 0..ga.len() {
            ga[i] += g[i] * bv[i];
        }
    });
    acc.add(b, |gb| {
        for i in 0..gb.len() {
            gb[i] += g[i] * av[i];
        }
    });
}

pub(super) fn concat_backward<T: Real>(acc: &mut Accumulator<'_, T>, g: &[T], a: Var, b: Var) {
    let (sa, sb): (Shape5, Shape5) = (acc.value(a).shape(), acc.value(b).shape());
    let plane = sa.plane();
    let (la, lb) = (sa.c * plane, sb.c * plane);
    acc.add(a, |ga| {
        for n in 0..sa.n {
            super::axpy(T::one(), &g[n * (la + lb)..][..la], &mut ga[n * la..][..la]);
        }
    });
    acc.add(b, |gb| {
        for n in 0..sa.n {
            super::axpy(T::one(), &g[n * (la + lb) + la..][..lb], &mut gb[n * lb..][..lb]);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_zero_and_concat_order() {
        let s = Shape5::new(2, 2, 1, 2, 2);
        let x = Tensor5::from_fn(s, |i| i as f64);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let z = tape.constant(Tensor5::zeros(s));
        let y = tape.add(xv, z).unwrap();
        assert_eq!(tape.value(y), &x);

        let b = tape.constant(Tensor5::from_fn(Shape5::new(2, 3, 1, 2, 2), |i| 100.0 + i as f64));
        let c = tape.concat_channels(xv, b).unwrap();
        let cv = tape.value(c);
        assert_eq!(cv.shape().c, 5);
        assert_eq!(cv.at(1, 0, 0, 0, 0), x.at(1, 0, 0, 0, 0));
        assert_eq!(cv.at(1, 2, 0, 0, 1), 100.0 + 13.0);
        assert!(tape.add(xv, b).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64).is_finite());
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor5::filled(Shape5::new(1, 1, 1, 1, 3), 3.0f64));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor5::scalar(3.0f64));
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor5::filled(Shape5::new(1, 1, 1, 1, 2), 1.0f64));
        assert!(tape.backward(x).is_err());
    }
}
