//! Central finite-difference checks for analytic gradients (`f64` only).

use super::{Tape, Tensor5, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor in `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Probe at most this many entries per input, evenly strided.
    pub max_entries: Option<usize>,
    /// For piecewise-smooth graphs: a probe above `1e-6` is retried with the
    /// step shrunk tenfold up to this many times, keeping the smallest error.
    /// A difference straddling a kink shrinks away; a wrong gradient does not.
    pub kink_refinements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            floor: 1e-3,
            max_entries: None,
            kink_refinements: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error per input.
    pub max_rel_error: Vec<f64>,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Compares the tape's gradients of `build(inputs)` against central
/// differences for every input tensor.
pub fn grad_check<F>(inputs: &[Tensor5<f64>], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor5<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: Vec::with_capacity(inputs.len()),
        probes: 0,
    };
    let mut work: Vec<Tensor5<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let len = inputs[i].numel();
        let zeros = vec![0.0; len];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        let stride = match opts.max_entries {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        for j in (0..len).step_by(stride) {
            let a = analytic[j];
            let mut h = opts.step;
            let mut err = f64::INFINITY;
            for attempt in 0..=opts.kink_refinements {
                let orig = work[i].data()[j];
                work[i].data_mut()[j] = orig + h;
                let up = eval(&work)?;
                work[i].data_mut()[j] = orig - h;
                let down = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                err = err.min((a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor));
                if err <= 1e-6 || attempt == opts.kink_refinements {
                    break;
                }
                h /= 10.0;
            }
            worst = worst.max(err);
            report.probes += 1;
        }
        report.max_rel_error.push(worst);
    }
    Ok(report)
}
