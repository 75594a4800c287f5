use super::tape::{Accumulator, Op};
use super::{axpy, dot, Real, Shape5, Tape, Tensor5, Var};
use crate::error::{shape_err, Error, Result};
use crate::par;

/// Per-axis tap offsets and the output range each tap can reach.
struct Taps {
    /// (offset, lo, hi) per tap along one axis.
    axis: [Vec<(isize, usize, usize)>; 3],
}

impl Taps {
    fn new(kernel: [usize; 3], dilation: [usize; 3], extent: [usize; 3]) -> Self {
        let axis = std::array::from_fn(|a| {
            let half = (kernel[a] / 2) as isize;
            (0..kernel[a])
                .map(|t| {
                    let off = (t as isize - half) * dilation[a] as isize;
                    let e = extent[a] as isize;
                    let lo = (-off).clamp(0, e) as usize;
                    let hi = (e - off).clamp(0, e) as usize;
                    (off, lo, hi.max(lo))
                })
                .collect()
        });
        Taps { axis }
    }
}

fn check(xs: Shape5, ks: Shape5, bias_len: Option<usize>, dilation: [usize; 3]) -> Result<()> {
    if ks.c != xs.c {
        return Err(shape_err!(
            "conv3d kernel expects {} input channels, input {} has {}",
            ks.c,
            xs,
            xs.c
        ));
    }
    for (k, name) in [(ks.d, "depth"), (ks.h, "height"), (ks.w, "width")] {
        if k != 1 && k != 3 {
            return Err(shape_err!("conv3d kernel {name} must be 1 or 3, got {k}"));
        }
    }
    if let Some(b) = bias_len {
        if b != ks.n {
            return Err(shape_err!("conv3d bias has {b} entries for {} output channels", ks.n));
        }
    }
    for &d in &dilation {
        if d == 0 {
            return Err(Error::Argument("conv3d dilation must be >= 1".into()));
        }
        // The tap offset (k-1)/2 * dilation must stay far from the isize edge
        // so that offset + extent arithmetic cannot overflow.
        if d > (isize::MAX as usize) / 8 {
            return Err(Error::Argument(format!(
                "conv3d dilation {d} exceeds the representable index range"
            )));
        }
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// Stride-1 3D convolution with "same" zero padding.
    ///
    /// `kernel` is laid out `(c_out, c_in, kd, kh, kw)`; each spatial kernel
    /// extent is 1 or 3.
    pub fn conv3d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: [usize; 3],
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        check(xs, ks, bias.map(|b| self.shape(b).numel()), dilation)?;
        let out = forward(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b).data()),
            dilation,
        );
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            &inputs,
            Op::Conv {
                x,
                kernel,
                bias,
                dilation,
            },
        ))
    }
}

fn forward<T: Real>(
    x: &Tensor5<T>,
    kernel: &Tensor5<T>,
    bias: Option<&[T]>,
    dilation: [usize; 3],
) -> Tensor5<T> {
    let xs = x.shape();
    let ks = kernel.shape();
    let (c_out, c_in) = (ks.n, ks.c);
    let kvol = ks.plane();
    let os = xs.with_channels(c_out);
    let plane = xs.plane();
    let (hh, ww) = (xs.h, xs.w);
    let taps = Taps::new(ks.spatial(), dilation, xs.spatial());
    let xd = x.data();
    let kd = kernel.data();

    let mut out = vec![T::zero(); os.numel()];
    par::for_each_chunk(&mut out, plane, |idx, dst| {
        let (n, co) = (idx / c_out, idx % c_out);
        if let Some(b) = bias {
            dst.fill(b[co]);
        }
        for ci in 0..c_in {
            let src = &xd[(n * c_in + ci) * plane..][..plane];
            let wk = &kd[(co * c_in + ci) * kvol..][..kvol];
            let mut t = 0;
            for &(oz, dlo, dhi) in &taps.axis[0] {
                for &(oy, hlo, hhi) in &taps.axis[1] {
                    for &(ox, wlo, whi) in &taps.axis[2] {
                        let wv = wk[t];
                        t += 1;
                        if wlo >= whi {
                            continue;
                        }
                        for od in dlo..dhi {
                            let id = (od as isize + oz) as usize;
                            for oh in hlo..hhi {
                                let ih = (oh as isize + oy) as usize;
                                let o0 = (od * hh + oh) * ww;
                                let i0 = (((id * hh + ih) * ww + wlo) as isize + ox) as usize;
                                axpy(wv, &src[i0..i0 + whi - wlo], &mut dst[o0 + wlo..o0 + whi]);
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor5::new(os, out).expect("conv output shape")
}

pub(super) fn backward<T: Real>(
    acc: &mut Accumulator<'_, T>,
    g: &[T],
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    dilation: [usize; 3],
) {
    let xs = acc.value(x).shape();
    let ks = acc.value(kernel).shape();
    let (c_out, c_in) = (ks.n, ks.c);
    let kvol = ks.plane();
    let plane = xs.plane();
    let (hh, ww) = (xs.h, xs.w);
    let taps = Taps::new(ks.spatial(), dilation, xs.spatial());

    if acc.wants(x) {
        let kd = acc.value(kernel).data();
        let mut gx = vec![T::zero(); xs.numel()];
        par::for_each_chunk(&mut gx, plane, |idx, dst| {
            let (n, ci) = (idx / c_in, idx % c_in);
            for co in 0..c_out {
                let go = &g[(n * c_out + co) * plane..][..plane];
                let wk = &kd[(co * c_in + ci) * kvol..][..kvol];
                let mut t = 0;
                for &(oz, dlo, dhi) in &taps.axis[0] {
                    for &(oy, hlo, hhi) in &taps.axis[1] {
                        for &(ox, wlo, whi) in &taps.axis[2] {
                            let wv = wk[t];
                            t += 1;
                            if wlo >= whi {
                                continue;
                            }
                            for od in dlo..dhi {
                                let id = (od as isize + oz) as usize;
                                for oh in hlo..hhi {
                                    let ih = (oh as isize + oy) as usize;
                                    let o0 = (od * hh + oh) * ww;
                                    let i0 = (((id * hh + ih) * ww + wlo) as isize + ox) as usize;
                                    axpy(wv, &go[o0 + wlo..o0 + whi], &mut dst[i0..i0 + whi - wlo]);
                                }
                            }
                        }
                    }
                }
            }
        });
        acc.add(x, |dx| axpy(T::one(), &gx, dx));
    }

    if acc.wants(kernel) {
        let n_batch = xs.n;
        let xd = acc.value(x).data();
        let mut gk = vec![T::zero(); ks.numel()];
        par::for_each_chunk(&mut gk, kvol, |idx, dst| {
            let (co, ci) = (idx / c_in, idx % c_in);
            let mut t = 0;
            for &(oz, dlo, dhi) in &taps.axis[0] {
                for &(oy, hlo, hhi) in &taps.axis[1] {
                    for &(ox, wlo, whi) in &taps.axis[2] {
                        let mut s = T::zero();
                        if wlo < whi {
                            for n in 0..n_batch {
                                let go = &g[(n * c_out + co) * plane..][..plane];
                                let src = &xd[(n * c_in + ci) * plane..][..plane];
                                for od in dlo..dhi {
                                    let id = (od as isize + oz) as usize;
                                    for oh in hlo..hhi {
                                        let ih = (oh as isize + oy) as usize;
                                        let o0 = (od * hh + oh) * ww;
                                        let i0 = (((id * hh + ih) * ww + wlo) as isize + ox) as usize;
                                        s += dot(&go[o0 + wlo..o0 + whi], &src[i0..i0 + whi - wlo]);
                                    }
                                }
                            }
                        }
                        dst[t] = s;
                        t += 1;
                    }
                }
            }
        });
        acc.add(kernel, |dk| axpy(T::one(), &gk, dk));
    }

    if let Some(b) = bias {
        if acc.wants(b) {
            let gb: Vec<T> = (0..c_out)
                .map(|co| {
                    (0..xs.n)
                        .map(|n| super::sum(&g[(n * c_out + co) * plane..][..plane]))
                        .fold(T::zero(), |a, v| a + v)
                })
                .collect();
            acc.add(b, |db| axpy(T::one(), &gb, db));
        }
    }
}
