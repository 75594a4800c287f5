//! Finite-difference gradient suite over every differentiable op the
//! supernet uses, run in `f64` on small random tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::searchspace::{build_schema, slot, TaskStats};
use crate::supernet::{matching_op, ArchRealization, BoundParams, SupernetConfig, SupernetWeights};
use crate::tensor::{
    grad_check, ActivationKind, GradCheckOptions, GradCheckReport, PoolKind, Shape5, Tape, Tensor5, Var,
    DICE_SMOOTHING,
};

/// Largest tensor shape the suite draws.
pub const SUITE_SHAPE: Shape5 = Shape5 {
    n: 1,
    c: 2,
    d: 4,
    h: 6,
    w: 6,
};

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

struct Suite {
    rng: ChaCha8Rng,
    entries: Vec<SuiteEntry>,
    opts: GradCheckOptions,
}

impl Suite {
    fn random(&mut self, shape: Shape5) -> Tensor5<f64> {
        let rng = &mut self.rng;
        Tensor5::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Random values bounded away from zero, for ops with a kink there.
    fn off_zero(&mut self, shape: Shape5) -> Tensor5<f64> {
        let rng = &mut self.rng;
        Tensor5::from_fn(shape, |_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
    }

    /// Checks `Σ w ⊙ f(inputs)` for a fixed random weighting `w`.
    fn check<F>(&mut self, name: impl Into<String>, inputs: Vec<Tensor5<f64>>, out_len: usize, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let weights: Vec<f64> = (0..out_len).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        let report = grad_check(
            &inputs,
            |tape, vars| {
                let y = f(tape, vars)?;
                tape.weighted_sum(y, weights.clone())
            },
            self.opts,
        )?;
        self.entries.push(SuiteEntry {
            name: name.into(),
            report,
        });
        Ok(())
    }
}

pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: Vec::new(),
        opts: GradCheckOptions::default(),
    };
    let xs = SUITE_SHAPE;
    let n = xs.numel();

    for k in [1, 3] {
        for dil in 1..=3 {
            if k == 1 && dil > 1 {
                continue;
            }
            let inputs = vec![s.random(xs), s.random(Shape5::new(3, 2, k, k, k)), s.random(Shape5::new(3, 1, 1, 1, 1))];
            s.check(format!("conv3d/k{k}/dilation{dil}"), inputs, xs.with_channels(3).numel(), move |t, v| {
                t.conv3d(v[0], v[1], Some(v[2]), [dil; 3])
            })?;
        }
    }
    let inputs = vec![s.random(xs), s.random(Shape5::new(2, 2, 3, 3, 3))];
    s.check("conv3d/k3/dilation(1,2,3)", inputs, n, |t, v| {
        t.conv3d(v[0], v[1], None, [1, 2, 3])
    })?;

    for kind in [PoolKind::Max, PoolKind::Avg] {
        for stride in [[2, 2, 2], [1, 2, 2]] {
            let x = s.random(xs);
            let out = Shape5::new(1, 2, 4 / stride[0], 3, 3).numel();
            s.check(format!("pool3d/{}/{stride:?}", kind.name()), vec![x], out, move |t, v| t.pool3d(v[0], kind, stride))?;
        }
    }

    let inputs = vec![s.random(xs), s.random(Shape5::new(2, 1, 1, 1, 1)), s.random(Shape5::new(2, 1, 1, 1, 1))];
    s.check("instance_norm", inputs, n, |t, v| t.instance_norm(v[0], v[1], v[2], 1e-5))?;

    for kind in ActivationKind::ALL {
        let x = s.off_zero(xs);
        s.check(format!("activation/{}", kind.name()), vec![x], n, move |t, v| Ok(t.activation(v[0], kind)))?;
    }

    for target in [[2, 3, 3], [7, 9, 5], [4, 6, 6]] {
        let x = s.random(xs);
        let out = xs.with_spatial(target).numel();
        s.check(format!("resize_trilinear/{target:?}"), vec![x], out, move |t, v| t.resize_trilinear(v[0], target))?;
    }

    let inputs = vec![s.random(xs), s.random(Shape5::new(3, 2, 1, 1, 1)), s.random(Shape5::new(3, 1, 1, 1, 1))];
    s.check("matching_op", inputs, Shape5::new(1, 3, 2, 3, 3).numel(), |t, v| {
        matching_op(t, v[0], v[1], Some(v[2]), [2, 3, 3])
    })?;

    let logits = s.random(xs);
    let target = {
        let rng = &mut s.rng;
        Tensor5::from_fn(xs, |_| rng.gen_bool(0.4) as u8 as f64)
    };
    let report = grad_check(
        &[logits],
        |t, v| {
            let p = t.sigmoid(v[0]);
            let y = t.constant(target.clone());
            t.dice_loss(p, y, DICE_SMOOTHING)
        },
        s.opts,
    )?;
    s.entries.push(SuiteEntry {
        name: "dice_loss".into(),
        report,
    });

    supernet_check(&mut s)?;
    Ok(s.entries)
}

fn supernet_check(s: &mut Suite) -> Result<()> {
    let stats = TaskStats::uniform(4, 6, 6, 2, 1);
    let schema = build_schema(&stats)?;
    let cfg = SupernetConfig {
        base_channels: 2,
        in_channels: 2,
        out_channels: 1,
    };
    let weights = SupernetWeights::<f64>::build(cfg, &schema, s.rng.gen())?;
    for (label, pool, act) in [("max/leaky_relu", 0, 1), ("avg/elu", 1, 2)] {
        let mut choice = schema.max_architecture();
        choice.indices[slot::POOLING] = pool;
        choice.indices[slot::ACTIVATION] = act;
        for (k, &d) in slot::DILATION.iter().enumerate() {
            choice.indices[d] = k % 3;
        }
        let arch = ArchRealization::from_choice(&schema, &choice)?;
        let x = s.random(SUITE_SHAPE);
        let mut inputs = vec![x];
        inputs.extend(weights.params().iter().map(|p| p.value.clone()));
        let out = SUITE_SHAPE.with_channels(1).numel();
        let opts = s.opts;
        s.opts.max_entries = Some(8);
        s.opts.kink_refinements = 2;
        let w = &weights;
        s.check(format!("supernet/{label}"), inputs, out, move |t, v| {
            let p = BoundParams::from_vars(v[1..].to_vec());
            Ok(w.forward(t, &p, &arch, v[0])?.logits)
        })?;
        s.opts = opts;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_op_and_passes() {
        let entries = gradient_suite(0).unwrap();
        for prefix in ["conv3d/k1", "conv3d/k3/dilation3", "pool3d/max", "pool3d/avg", "instance_norm", "resize_trilinear", "matching_op", "dice_loss", "supernet/"] {
            assert!(entries.iter().any(|e| e.name.starts_with(prefix)), "{prefix}");
        }
        for e in &entries {
            assert!(e.report.passes(1e-4), "{} worst {}", e.name, e.report.worst());
        }
    }
}
