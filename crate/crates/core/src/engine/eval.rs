use crate::data::{extract, Case};
use crate::error::Result;
use crate::par;
use crate::supernet::{ArchRealization, SupernetWeights};
use crate::tensor::{sigmoid, Tensor5};

/// Hard dice of two binary masks; two empty masks score 1.
pub fn hard_dice(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Mean over channels of hard dice after thresholding `sigmoid(logits)` at 0.5.
pub fn case_dice(logits: &Tensor5<f32>, label: &Tensor5<f32>) -> f64 {
    let plane = logits.shape().plane();
    let channels = logits.shape().c;
    let mut total = 0.0;
    for c in 0..channels {
        let pred: Vec<bool> = logits.data()[c * plane..][..plane].iter().map(|&z| sigmoid(z) >= 0.5).collect();
        let truth: Vec<bool> = label.data()[c * plane..][..plane].iter().map(|&v| v > 0.5).collect();
        total += hard_dice(&pred, &truth);
    }
    total / channels as f64
}

/// Whole-volume forward pass. Each axis is zero-padded symmetrically up to
/// the next multiple of the cumulative stride and the logits are cropped back.
pub fn one_shot_infer(
    weights: &SupernetWeights<f32>,
    arch: &ArchRealization,
    image: &Tensor5<f32>,
) -> Result<Tensor5<f32>> {
    let sp = image.shape().spatial();
    let div = arch.divisor();
    let padded: [usize; 3] = std::array::from_fn(|a| sp[a].div_ceil(div[a]) * div[a]);
    let before: [isize; 3] = std::array::from_fn(|a| ((padded[a] - sp[a]) / 2) as isize);
    let input = if padded == sp {
        image.clone()
    } else {
        extract(image, before.map(|b| -b), padded)
    };
    let logits = weights.infer(arch, input)?;
    if padded == sp {
        return Ok(logits);
    }
    Ok(extract(&logits, before, sp))
}

/// Patient-wise mean dice over `cases`.
pub fn evaluate_dice(weights: &SupernetWeights<f32>, arch: &ArchRealization, cases: &[Case]) -> Result<f64> {
    if cases.is_empty() {
        return Ok(0.0);
    }
    let scores = par::map_indices(cases.len(), |i| {
        one_shot_infer(weights, arch, &cases[i].image).map(|l| case_dice(&l, &cases[i].label))
    });
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / cases.len() as f64)
}
