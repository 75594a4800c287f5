use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_case, Case, DatasetManifest};
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

/// Parameters of a synthetic anisotropic segmentation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub cases: usize,
    pub channels: usize,
    pub classes: usize,
    /// Inclusive depth range.
    pub depth: [usize; 2],
    /// Inclusive in-plane range; each case has h = w.
    pub hw: [usize; 2],
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            cases: 16,
            channels: 1,
            classes: 1,
            depth: [12, 16],
            hw: [40, 40],
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = self.cases == 0
            || self.channels == 0
            || self.classes == 0
            || self.depth[0] == 0
            || self.hw[0] == 0
            || self.depth[0] > self.depth[1]
            || self.hw[0] > self.hw[1]
            || !(self.noise >= 0.0);
        if bad {
            return Err(Error::Config(format!("invalid synth spec {self:?}")));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn random(rng: &mut ChaCha8Rng, ext: [usize; 3]) -> Self {
        let radii: [f64; 3] = std::array::from_fn(|a| {
            let e = ext[a] as f64;
            let (lo, hi) = if a == 0 { (0.2, 0.35) } else { (0.1, 0.22) };
            (e * rng.gen_range(lo..hi)).max(1.0)
        });
        let center = std::array::from_fn(|a| {
            let e = ext[a] as f64;
            let margin = radii[a].min(e / 2.0 - 0.5);
            rng.gen_range(margin..=(e - 1.0 - margin).max(margin))
        });
        Ellipsoid { center, radii }
    }

    fn contains(&self, p: [usize; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn generate_case(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> Case {
    let d = rng.gen_range(spec.depth[0]..=spec.depth[1]);
    let hw = rng.gen_range(spec.hw[0]..=spec.hw[1]);
    let ext = [d, hw, hw];
    let plane = d * hw * hw;
    let mut label = Tensor5::zeros(Shape5::new(1, spec.classes, d, hw, hw));
    for k in 0..spec.classes {
        let blobs: Vec<Ellipsoid> = (0..rng.gen_range(1..=2)).map(|_| Ellipsoid::random(rng, ext)).collect();
        let dst = &mut label.data_mut()[k * plane..][..plane];
        for (v, out) in dst.iter_mut().enumerate() {
            let p = [v / (hw * hw), (v / hw) % hw, v % hw];
            if blobs.iter().any(|b| b.contains(p)) {
                *out = 1.0;
            }
        }
    }
    // Per (channel, class) contrast, fixed by channel and class index.
    let noise = Normal::new(0.0, spec.noise).expect("noise std is validated");
    let mut image = Tensor5::zeros(Shape5::new(1, spec.channels, d, hw, hw));
    let lab = label.data().to_vec();
    for c in 0..spec.channels {
        let dst = &mut image.data_mut()[c * plane..][..plane];
        for (v, out) in dst.iter_mut().enumerate() {
            let mut s = 1.0;
            for k in 0..spec.classes {
                if lab[k * plane + v] > 0.5 {
                    s += 1.0 + 0.5 * ((c + k) % 2) as f64 + 0.5 * k as f64;
                }
            }
            *out = (s + noise.sample(rng)) as f32;
        }
    }
    let mut case = Case::new(format!("case_{index:03}"), image, label).expect("synthetic case is aligned");
    case.channel_names = Some((0..spec.channels).map(|c| format!("ch{c}")).collect());
    case
}

/// Writes `spec.cases` cases plus `manifest.json` under `out`.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dirs = Vec::with_capacity(spec.cases);
    for i in 0..spec.cases {
        let case = generate_case(spec, i, &mut rng);
        let rel = PathBuf::from(&case.id);
        save_case(&case, &out.join(&rel))?;
        dirs.push(rel);
    }
    let manifest = DatasetManifest::from_dirs(out, &dirs)?;
    manifest.save()?;
    Ok(manifest)
}
