use super::tape::{Accumulator, Op};
use super::{Real, Tape, Tensor5, Var};
use crate::error::{shape_err, Result};
use crate::par;

impl<T: Real> Tape<T> {
    /// Per-(sample, channel) normalization over the spatial volume, followed
    /// by a per-channel affine map.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        let (gl, bl) = (self.shape(gamma).numel(), self.shape(beta).numel());
        if gl != xs.c || bl != xs.c {
            return Err(shape_err!(
                "instance_norm affine params ({gl}, {bl}) do not match {} channels",
                xs.c
            ));
        }
        let plane = xs.plane();
        let c = xs.c;
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();

        // Normalized values and 1/std come out of one pass per plane.
        let mut xhat = vec![T::zero(); xs.numel()];
        let mut inv_std = vec![T::zero(); xs.n * c];
        let nplanes = xs.n * c;
        let stats: Vec<(f64, f64)> = par::map_indices(nplanes, |pi| {
            let p = &src[pi * plane..][..plane];
            let mean = p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
            let var = p.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / plane as f64;
            (mean, 1.0 / (var + eps).sqrt())
        });
        par::for_each_chunk(&mut xhat, plane, |pi, dst| {
            let p = &src[pi * plane..][..plane];
            let (m, s) = stats[pi];
            for (o, v) in dst.iter_mut().zip(p) {
                *o = T::lit((v.as_f64() - m) * s);
            }
        });
        for (o, s) in inv_std.iter_mut().zip(&stats) {
            *o = T::lit(s.1);
        }
        let mut out = xhat.clone();
        par::for_each_chunk(&mut out, plane, |pi, dst| {
            let ch = pi % c;
            let (gc, bc) = (g[ch], b[ch]);
            for v in dst.iter_mut() {
                *v = gc * *v + bc;
            }
        });
        let value = Tensor5::new(xs, out)?;
        Ok(self.push(
            value,
            &[x, gamma, beta],
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }
}

pub(super) fn backward<T: Real>(
    acc: &mut Accumulator<'_, T>,
    g: &[T],
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
) {
    let xs = acc.value(x).shape();
    let (c, plane) = (xs.c, xs.plane());
    let gam = acc.value(gamma).data();

    // Per-plane Σdy and Σdy·x̂, reused by all three gradients.
    let sums: Vec<(T, T)> = par::map_indices(xs.n * c, |pi| {
        let go = &g[pi * plane..][..plane];
        let xh = &xhat[pi * plane..][..plane];
        (super::sum(go), super::dot(go, xh))
    });

    if acc.wants(x) {
        let np = T::lit(plane as f64);
        let inv_n = T::lit(1.0 / plane as f64);
        let mut gx = vec![T::zero(); xs.numel()];
        par::for_each_chunk(&mut gx, plane, |pi, dst| {
            let go = &g[pi * plane..][..plane];
            let xh = &xhat[pi * plane..][..plane];
            let (sg, sgx) = sums[pi];
            let k = gam[pi % c] * inv_std[pi] * inv_n;
            for i in 0..plane {
                dst[i] = k * (np * go[i] - sg - xh[i] * sgx);
            }
        });
        acc.add(x, |dx| super::axpy(T::one(), &gx, dx));
    }
    acc.add(gamma, |dg| {
        for (pi, s) in sums.iter().enumerate() {
            dg[pi % c] += s.1;
        }
    });
    acc.add(beta, |db| {
        for (pi, s) in sums.iter().enumerate() {
            db[pi % c] += s.0;
        }
    });
}
