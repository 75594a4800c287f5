use rand::Rng;

use super::{extract, Case};
use crate::tensor::Tensor5;

/// How a patch origin was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchDraw {
    /// Origin anchored on a random foreground voxel.
    Foreground,
    Uniform,
}

/// Draws a training patch. Axes shorter than the patch are zero-padded
/// symmetrically first. Half of the draws are anchored on foreground when
/// the case has any.
pub fn sample_patch<R: Rng + ?Sized>(
    case: &Case,
    patch: [usize; 3],
    rng: &mut R,
) -> (Tensor5<f32>, Tensor5<f32>) {
    let draw = if rng.gen_bool(0.5) {
        PatchDraw::Foreground
    } else {
        PatchDraw::Uniform
    };
    sample_patch_with(case, patch, draw, rng)
}

pub fn sample_patch_with<R: Rng + ?Sized>(
    case: &Case,
    patch: [usize; 3],
    draw: PatchDraw,
    rng: &mut R,
) -> (Tensor5<f32>, Tensor5<f32>) {
    let sp = case.spatial();
    // Padded extent and the padding placed before the data.
    let ext: [usize; 3] = std::array::from_fn(|a| sp[a].max(patch[a]));
    let pad: [usize; 3] = std::array::from_fn(|a| (ext[a] - sp[a]) / 2);

    let anchor = match draw {
        PatchDraw::Foreground => pick_foreground(case, rng),
        PatchDraw::Uniform => None,
    };
    let origin: [usize; 3] = std::array::from_fn(|a| {
        let top = ext[a] - patch[a];
        match anchor {
            Some(v) => {
                let v = v[a] + pad[a];
                let lo = (v + 1).saturating_sub(patch[a]);
                let hi = v.min(top);
                rng.gen_range(lo..=hi)
            }
            None => rng.gen_range(0..=top),
        }
    });
    let o: [isize; 3] = std::array::from_fn(|a| origin[a] as isize - pad[a] as isize);
    (extract(&case.image, o, patch), extract(&case.label, o, patch))
}

fn pick_foreground<R: Rng + ?Sized>(case: &Case, rng: &mut R) -> Option<[usize; 3]> {
    let s = case.label.shape();
    let plane = s.plane();
    let fg: Vec<usize> = (0..plane)
        .filter(|&v| (0..s.c).any(|c| case.label.data()[c * plane + v] > 0.5))
        .collect();
    if fg.is_empty() {
        return None;
    }
    let v = fg[rng.gen_range(0..fg.len())];
    Some([v / (s.h * s.w), (v / s.w) % s.h, v % s.w])
}

/// Reverses the w axis in place.
pub fn flip_w<T: crate::tensor::Real>(t: &mut Tensor5<T>) {
    let w = t.shape().w;
    for row in t.data_mut().chunks_mut(w) {
        row.reverse();
    }
}

/// Flips both tensors along w with probability 0.5. Returns whether it did.
pub fn axial_hflip<R: Rng + ?Sized>(image: &mut Tensor5<f32>, label: &mut Tensor5<f32>, rng: &mut R) -> bool {
    let flip = rng.gen_bool(0.5);
    if flip {
        flip_w(image);
        flip_w(label);
    }
    flip
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_voxel(at: [usize; 3]) -> Case {
        let s = Shape5::new(1, 1, 6, 10, 10);
        let idx = s.index(0, 0, at[0], at[1], at[2]);
        let image = Tensor5::from_fn(s, |i| i as f32);
        let label = Tensor5::from_fn(s, |i| (i == idx) as u8 as f32);
        Case::new("v", image, label).unwrap()
    }

    #[test]
    fn full_extent_patch_is_the_case() {
        let c = single_voxel([1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (img, lab) = sample_patch(&c, [6, 10, 10], &mut rng);
        assert_eq!(img, c.image);
        assert_eq!(lab, c.label);
    }

    #[test]
    fn forced_foreground_patch_contains_the_voxel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for at in [[0, 0, 0], [5, 9, 9], [3, 4, 7]] {
            let c = single_voxel(at);
            for _ in 0..50 {
                let (_, lab) = sample_patch_with(&c, [2, 3, 4], PatchDraw::Foreground, &mut rng);
                assert_eq!(lab.data().iter().sum::<f32>(), 1.0);
            }
        }
    }

    #[test]
    fn small_cases_are_padded_symmetrically() {
        let c = single_voxel([0, 0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (img, lab) = sample_patch(&c, [8, 10, 10], &mut rng);
        assert_eq!(img.shape().spatial(), [8, 10, 10]);
        // one zero slice on each side in depth
        assert!(img.data()[..100].iter().all(|&v| v == 0.0));
        assert!(img.data()[700..].iter().all(|&v| v == 0.0));
        assert_eq!(img.data()[100 + 1], 1.0);
        assert_eq!(lab.data()[100], 1.0);
    }

    #[test]
    fn patches_are_seed_deterministic() {
        let c = single_voxel([2, 5, 5]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_patch(&c, [3, 4, 4], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn flip_properties() {
        let s = Shape5::new(1, 2, 2, 3, 5);
        let orig = Tensor5::from_fn(s, |i| i as f32);
        let mut t = orig.clone();
        flip_w(&mut t);
        assert_ne!(t, orig);
        assert_eq!(t.at(0, 1, 1, 2, 0), orig.at(0, 1, 1, 2, 4));
        flip_w(&mut t);
        assert_eq!(t, orig);

        let sym = Tensor5::from_fn(s, |i| [1.0, 2.0, 3.0, 2.0, 1.0][i % 5]);
        let mut f = sym.clone();
        flip_w(&mut f);
        assert_eq!(f, sym);
    }

    #[test]
    fn hflip_moves_image_and_label_together() {
        let c = single_voxel([1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut flips = 0;
        for _ in 0..40 {
            let (mut img, mut lab) = (c.image.clone(), c.label.clone());
            let fg = lab.data().iter().sum::<f32>();
            let flipped = axial_hflip(&mut img, &mut lab, &mut rng);
            flips += flipped as usize;
            assert_eq!(lab.data().iter().sum::<f32>(), fg);
            let w = if flipped { 8 } else { 1 };
            assert_eq!(lab.at(0, 0, 1, 1, w), 1.0);
            assert_eq!(img.at(0, 0, 1, 1, w), c.image.at(0, 0, 1, 1, 1));
        }
        assert!(flips > 5 && flips < 35);
    }
}
