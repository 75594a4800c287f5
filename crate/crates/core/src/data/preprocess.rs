use super::{extract, Case};
use crate::tensor::Tensor5;

/// Channels whose population std falls below this map to zeros.
pub const ZSCORE_EPS: f64 = 1e-8;

/// Per-channel standardization to mean 0 and population std 1.
pub fn zscore_normalize(image: &Tensor5<f32>) -> Tensor5<f32> {
    let s = image.shape();
    let plane = s.plane();
    let mut out = image.clone();
    for chunk in out.data_mut().chunks_mut(plane) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < ZSCORE_EPS {
            chunk.fill(0.0);
        } else {
            for v in chunk.iter_mut() {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cropped {
    pub case: Case,
    /// Half-open `[lo, hi)` box per spatial axis in the input grid.
    pub bbox: [[usize; 2]; 3],
    /// Set when the image has no nonzero voxel; the case is then unchanged.
    pub all_zero: bool,
}

/// Crops image and label to the tightest box holding every voxel where any
/// image channel is nonzero.
pub fn nonzero_crop(case: &Case) -> Cropped {
    let s = case.image.shape();
    let sp = s.spatial();
    let mut lo = sp;
    let mut hi = [0usize; 3];
    let data = case.image.data();
    for c in 0..s.c {
        for d in 0..s.d {
            for h in 0..s.h {
                for w in 0..s.w {
                    if data[s.index(0, c, d, h, w)] != 0.0 {
                        for (a, v) in [d, h, w].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v + 1);
                        }
                    }
                }
            }
        }
    }
    if hi[0] == 0 {
        log::warn!("case {} has an all-zero image; skipping crop", case.id);
        return Cropped {
            case: case.clone(),
            bbox: [[0, sp[0]], [0, sp[1]], [0, sp[2]]],
            all_zero: true,
        };
    }
    let origin = [lo[0] as isize, lo[1] as isize, lo[2] as isize];
    let size = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let cropped = Case {
        id: case.id.clone(),
        channel_names: case.channel_names.clone(),
        image: extract(&case.image, origin, size),
        label: extract(&case.label, origin, size),
    };
    Cropped {
        case: cropped,
        bbox: [[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]],
        all_zero: false,
    }
}
