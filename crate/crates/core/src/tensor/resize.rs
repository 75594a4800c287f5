use super::tape::{Accumulator, Op};
use super::{Real, Shape5, Tape, Tensor5, Var};
use crate::error::{shape_err, Result};
use crate::par;

/// Sampling taps `(i0, i1, w0, w1)` for one axis under the align-corners
/// convention. An input extent of 1 replicates.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..output)
        .map(|o| {
            if input == 1 {
                return (0, 0, 1.0, 0.0);
            }
            if input == output {
                return (o, o, 1.0, 0.0);
            }
            let src = if output == 1 {
                0.0
            } else {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            };
            let i0 = (src.floor() as usize).min(input - 2);
            let frac = src - i0 as f64;
            (i0, i0 + 1, 1.0 - frac, frac)
        })
        .collect()
}

struct Plan<T> {
    d: Vec<(usize, usize, T, T)>,
    h: Vec<(usize, usize, T, T)>,
    w: Vec<(usize, usize, T, T)>,
}

impl<T: Real> Plan<T> {
    fn new(from: [usize; 3], to: [usize; 3]) -> Self {
        let conv = |v: Vec<(usize, usize, f64, f64)>| {
            v.into_iter()
                .map(|(a, b, wa, wb)| (a, b, T::lit(wa), T::lit(wb)))
                .collect()
        };
        Plan {
            d: conv(axis_taps(from[0], to[0])),
            h: conv(axis_taps(from[1], to[1])),
            w: conv(axis_taps(from[2], to[2])),
        }
    }
}

fn check(xs: Shape5, target: [usize; 3]) -> Result<()> {
    if target.contains(&0) || xs.spatial().contains(&0) {
        return Err(shape_err!("resize from {xs} to {target:?} needs positive extents"));
    }
    Ok(())
}

/// Trilinear resize without recording, used by inference-only paths.
pub fn resize_tensor<T: Real>(x: &Tensor5<T>, target: [usize; 3]) -> Result<Tensor5<T>> {
    check(x.shape(), target)?;
    Ok(forward(x, target))
}

fn forward<T: Real>(x: &Tensor5<T>, target: [usize; 3]) -> Tensor5<T> {
    let xs = x.shape();
    if xs.spatial() == target {
        return x.clone();
    }
    let os = xs.with_spatial(target);
    let plan = Plan::<T>::new(xs.spatial(), target);
    let (ip, op) = (xs.plane(), os.plane());
    let src_all = x.data();
    let mut out = vec![T::zero(); os.numel()];
    par::for_each_chunk(&mut out, op, |pi, dst| {
        let src = &src_all[pi * ip..][..ip];
        let at = |d: usize, h: usize, w: usize| src[(d * xs.h + h) * xs.w + w];
        let mut o = 0;
        for &(d0, d1, wd0, wd1) in &plan.d {
            for &(h0, h1, wh0, wh1) in &plan.h {
                for &(w0, w1, ww0, ww1) in &plan.w {
                    let c00 = at(d0, h0, w0) * ww0 + at(d0, h0, w1) * ww1;
                    let c01 = at(d0, h1, w0) * ww0 + at(d0, h1, w1) * ww1;
                    let c10 = at(d1, h0, w0) * ww0 + at(d1, h0, w1) * ww1;
                    let c11 = at(d1, h1, w0) * ww0 + at(d1, h1, w1) * ww1;
                    dst[o] = (c00 * wh0 + c01 * wh1) * wd0 + (c10 * wh0 + c11 * wh1) * wd1;
                    o += 1;
                }
            }
        }
    });
    Tensor5::new(os, out).expect("resize output shape")
}

impl<T: Real> Tape<T> {
    /// Align-corners trilinear resize of the spatial axes to `target`.
    pub fn resize_trilinear(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        check(self.shape(x), target)?;
        let out = forward(self.value(x), target);
        Ok(self.push(out, &[x], Op::Resize { x }))
    }
}

pub(super) fn backward<T: Real>(acc: &mut Accumulator<'_, T>, g: &[T], os: Shape5, x: Var) {
    let xs = acc.value(x).shape();
    if xs.spatial() == os.spatial() {
        acc.add(x, |gx| super::axpy(T::one(), g, gx));
        return;
    }
    let plan = Plan::<T>::new(xs.spatial(), os.spatial());
    let (ip, op) = (xs.plane(), os.plane());
    acc.add(x, |gx| {
        par::for_each_chunk(gx, ip, |pi, dst| {
            let go = &g[pi * op..][..op];
            let idx = |d: usize, h: usize, w: usize| (d * xs.h + h) * xs.w + w;
            let mut o = 0;
            for &(d0, d1, wd0, wd1) in &plan.d {
                for &(h0, h1, wh0, wh1) in &plan.h {
                    for &(w0, w1, ww0, ww1) in &plan.w {
                        let v = go[o];
                        o += 1;
                        for (dd, wd) in [(d0, wd0), (d1, wd1)] {
                            for (hh, wh) in [(h0, wh0), (h1, wh1)] {
                                let s = v * wd * wh;
                                dst[idx(dd, hh, w0)] += s * ww0;
                                dst[idx(dd, hh, w1)] += s * ww1;
                            }
                        }
                    }
                }
            }
        });
    });
}
