use serde::{Deserialize, Serialize};

use super::tape::{Accumulator, Op};
use super::{Real, Shape5, Tape, Tensor5, Var};
use crate::error::{shape_err, Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }
}

impl<T: Real> Tape<T> {
    /// Non-overlapping pooling with window equal to `stride` on each axis.
    pub fn pool3d(&mut self, x: Var, kind: PoolKind, stride: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x);
        if stride.contains(&0) {
            return Err(Error::Argument("pool3d stride must be >= 1".into()));
        }
        let sp = xs.spatial();
        if (0..3).any(|a| sp[a] < stride[a]) {
            return Err(shape_err!("pool3d stride {stride:?} exceeds input extent {xs}"));
        }
        if stride == [1, 1, 1] {
            let value = self.value(x).clone();
            return Ok(self.push(value, &[x], Op::Resize { x }));
        }
        let os = xs.with_spatial(std::array::from_fn(|a| sp[a] / stride[a]));
        let (out, argmax) = forward(self.value(x), os, kind, stride);
        Ok(self.push(
            out,
            &[x],
            Op::Pool {
                x,
                kind,
                stride,
                argmax,
            },
        ))
    }
}

fn forward<T: Real>(
    x: &Tensor5<T>,
    os: Shape5,
    kind: PoolKind,
    stride: [usize; 3],
) -> (Tensor5<T>, Vec<u32>) {
    let xs = x.shape();
    let (ip, op) = (xs.plane(), os.plane());
    let inv = T::lit(1.0 / (stride[0] * stride[1] * stride[2]) as f64);
    let src_all = x.data();

    let mut cells: Vec<(T, u32)> = vec![(T::zero(), 0); os.numel()];
    par::for_each_chunk(&mut cells, op, |pi, dst| {
        let src = &src_all[pi * ip..][..ip];
        for od in 0..os.d {
            for oh in 0..os.h {
                for ow in 0..os.w {
                    let first = ((od * stride[0]) * xs.h + oh * stride[1]) * xs.w + ow * stride[2];
                    let (mut best, mut best_i) = (src[first], first);
                    let mut acc = T::zero();
                    // Row-major scan; strict `>` keeps the first maximum on ties.
                    for zd in 0..stride[0] {
                        for zh in 0..stride[1] {
                            let row = ((od * stride[0] + zd) * xs.h + oh * stride[1] + zh) * xs.w
                                + ow * stride[2];
                            for i in row..row + stride[2] {
                                let v = src[i];
                                acc += v;
                                if v > best {
                                    best = v;
                                    best_i = i;
                                }
                            }
                        }
                    }
                    dst[(od * os.h + oh) * os.w + ow] = match kind {
                        PoolKind::Max => (best, best_i as u32),
                        PoolKind::Avg => (acc * inv, 0),
                    };
                }
            }
        }
    });
    let out: Vec<T> = cells.iter().map(|c| c.0).collect();
    let argmax = match kind {
        PoolKind::Max => cells.iter().map(|c| c.1).collect(),
        PoolKind::Avg => Vec::new(),
    };
    (Tensor5::new(os, out).expect("pool output shape"), argmax)
}

pub(super) fn backward<T: Real>(
    acc: &mut Accumulator<'_, T>,
    g: &[T],
    os: Shape5,
    x: Var,
    kind: PoolKind,
    stride: [usize; 3],
    argmax: &[u32],
) {
    let xs = acc.value(x).shape();
    let (ip, op) = (xs.plane(), os.plane());
    let inv = T::lit(1.0 / (stride[0] * stride[1] * stride[2]) as f64);
    acc.add(x, |gx| {
        par::for_each_chunk(gx, ip, |pi, dst| {
            let go = &g[pi * op..][..op];
            match kind {
                PoolKind::Max => {
                    let am = &argmax[pi * op..][..op];
                    for (o, &i) in am.iter().enumerate() {
                        dst[i as usize] += go[o];
                    }
                }
                PoolKind::Avg => {
                    for od in 0..os.d {
                        for oh in 0..os.h {
                            for ow in 0..os.w {
                                let v = go[(od * os.h + oh) * os.w + ow] * inv;
                                for zd in 0..stride[0] {
                                    for zh in 0..stride[1] {
                                        let row = ((od * stride[0] + zd) * xs.h + oh * stride[1] + zh) * xs.w
                                            + ow * stride[2];
                                        for zw in 0..stride[2] {
                                            dst[row + zw] += v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    });
}
