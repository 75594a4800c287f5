//! Volume ingestion, preprocessing, patch sampling and synthetic tasks.

mod augment;
mod io;
mod manifest;
mod preprocess;
mod synth;

pub use augment::{axial_hflip, flip_w, sample_patch, sample_patch_with, PatchDraw};
pub use io::{load_case, read_meta, save_case, CaseMeta, DTYPE_F32LE};
pub use manifest::{lower_median, task_stats, DatasetManifest, ManifestEntry, MANIFEST_FILE};
pub use preprocess::{nonzero_crop, zscore_normalize, Cropped, ZSCORE_EPS};
pub use synth::{synth_generate, SynthSpec};

use crate::error::{shape_err, Result};
use crate::tensor::{Shape5, Tensor5};

/// One subject: a multi-channel image and a multi-label binary mask on the
/// same `(d, h, w)` grid. Both tensors have batch size 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub channel_names: Option<Vec<String>>,
    pub image: Tensor5<f32>,
    pub label: Tensor5<f32>,
}

impl Case {
    pub fn new(id: impl Into<String>, image: Tensor5<f32>, label: Tensor5<f32>) -> Result<Self> {
        let (is, ls) = (image.shape(), label.shape());
        if is.n != 1 || ls.n != 1 || is.spatial() != ls.spatial() {
            return Err(shape_err!("case image {is} and label {ls} do not align"));
        }
        if label.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(crate::Error::Argument("label values must be 0 or 1".into()));
        }
        Ok(Case {
            id: id.into(),
            channel_names: None,
            image,
            label,
        })
    }

    pub fn spatial(&self) -> [usize; 3] {
        self.image.shape().spatial()
    }

    /// `[c, d, h, w]` of the image.
    pub fn header_shape(&self) -> [usize; 4] {
        let s = self.image.shape();
        [s.c, s.d, s.h, s.w]
    }

    pub fn foreground_voxels(&self) -> usize {
        self.label.data().iter().filter(|&&v| v > 0.5).count()
    }
}

/// Copies the box `origin..origin+size` out of `t`, reading zeros outside.
pub(crate) fn extract<T: crate::tensor::Real>(t: &Tensor5<T>, origin: [isize; 3], size: [usize; 3]) -> Tensor5<T> {
    let s = t.shape();
    let out_shape = Shape5::new(s.n, s.c, size[0], size[1], size[2]);
    let mut out = Tensor5::zeros(out_shape);
    let src = s.spatial();
    let data = t.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        let (n, c) = (nc / s.c, nc % s.c);
        for d in 0..size[0] {
            let sd = origin[0] + d as isize;
            if sd < 0 || sd >= src[0] as isize {
                continue;
            }
            for h in 0..size[1] {
                let sh = origin[1] + h as isize;
                if sh < 0 || sh >= src[1] as isize {
                    continue;
                }
                let w_lo = (-origin[2]).max(0) as usize;
                let w_hi = ((src[2] as isize - origin[2]).min(size[2] as isize)).max(w_lo as isize) as usize;
                if w_lo >= w_hi {
                    continue;
                }
                let o = out_shape.index(n, c, d, h, w_lo);
                let i = s.index(n, c, sd as usize, sh as usize, (origin[2] + w_lo as isize) as usize);
                dst[o..o + w_hi - w_lo].copy_from_slice(&data[i..i + w_hi - w_lo]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_pads_with_zeros() {
        let t = Tensor5::from_fn(Shape5::new(1, 1, 1, 2, 2), |i| i as f32 + 1.0);
        let e = extract(&t, [0, -1, -1], [1, 3, 3]);
        assert_eq!(e.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
        let full = extract(&t, [0, 0, 0], [1, 2, 2]);
        assert_eq!(full, t);
    }

    #[test]
    fn misaligned_or_non_binary_cases_are_rejected() {
        let img = Tensor5::zeros(Shape5::new(1, 1, 2, 2, 2));
        assert!(Case::new("a", img.clone(), Tensor5::zeros(Shape5::new(1, 1, 2, 2, 3))).is_err());
        assert!(Case::new("a", img, Tensor5::filled(Shape5::new(1, 1, 2, 2, 2), 0.5)).is_err());
    }
}
