use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::read_meta;
use crate::error::{Error, Result};
use crate::searchspace::TaskStats;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Case directory relative to the dataset root.
    pub path: PathBuf,
    /// `[c, d, h, w]` of the image.
    pub shape: [usize; 4],
    pub label_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub cases: Vec<ManifestEntry>,
    pub stats: TaskStats,
}

/// Middle element for odd counts, the lower of the two for even counts.
pub fn lower_median(values: &[usize]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Computes dataset statistics from header shapes alone.
pub fn task_stats(entries: &[ManifestEntry]) -> Result<TaskStats> {
    let first = entries
        .first()
        .ok_or_else(|| Error::DatasetTooSmall("dataset lists no cases".into()))?;
    for e in entries {
        if e.shape[0] != first.shape[0] || e.label_channels != first.label_channels {
            return Err(Error::Config(format!(
                "case {} channel layout differs from case {}",
                e.id, first.id
            )));
        }
    }
    let axis = |a: usize| entries.iter().map(|e| e.shape[a + 1]).collect::<Vec<_>>();
    let (d, h, w) = (axis(0), axis(1), axis(2));
    let stats = TaskStats {
        median_d: lower_median(&d),
        median_h: lower_median(&h),
        median_w: lower_median(&w),
        min_d: *d.iter().min().unwrap(),
        min_h: *h.iter().min().unwrap(),
        min_w: *w.iter().min().unwrap(),
        in_channels: first.shape[0],
        out_channels: first.label_channels,
    };
    stats.validate()?;
    Ok(stats)
}

impl DatasetManifest {
    /// Builds a manifest from case directories under `root` by reading
    /// their headers.
    pub fn from_dirs(root: &Path, dirs: &[PathBuf]) -> Result<Self> {
        let cases = dirs
            .iter()
            .map(|rel| {
                let meta = read_meta(&root.join(rel))?;
                Ok(ManifestEntry {
                    id: meta.id,
                    path: rel.clone(),
                    shape: meta.shape,
                    label_channels: meta.label_channels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = task_stats(&cases)?;
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            cases,
            stats,
        })
    }

    /// Reads `manifest.json` from `root` and checks it against the stored stats.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        m.root = root.to_path_buf();
        let recomputed = task_stats(&m.cases)?;
        if recomputed != m.stats {
            return Err(Error::format(&path, "stored stats disagree with listed shapes"));
        }
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn case_dir(&self, i: usize) -> PathBuf {
        self.root.join(&self.cases[i].path)
    }

    /// Stats over a subset of cases (e.g. a training fold).
    pub fn subset_stats(&self, indices: &[usize]) -> Result<TaskStats> {
        let entries: Vec<ManifestEntry> = indices.iter().map(|&i| self.cases[i].clone()).collect();
        task_stats(&entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(d: usize, h: usize) -> ManifestEntry {
        ManifestEntry {
            id: format!("{d}_{h}"),
            path: PathBuf::from("x"),
            shape: [1, d, h, h],
            label_channels: 1,
        }
    }

    #[test]
    fn even_counts_take_the_lower_median() {
        assert_eq!(lower_median(&[4, 1, 3, 2]), 2);
        assert_eq!(lower_median(&[5, 1, 3]), 3);
        assert_eq!(lower_median(&[7]), 7);
    }

    #[test]
    fn stats_from_shapes() {
        let s = task_stats(&[entry(12, 40), entry(16, 36), entry(14, 44), entry(11, 40)]).unwrap();
        assert_eq!((s.median_d, s.median_h, s.min_d, s.min_h), (12, 40, 11, 36));
        assert!(task_stats(&[]).is_err());
    }

    #[test]
    fn mixed_channel_counts_error() {
        let mut b = entry(4, 4);
        b.shape[0] = 2;
        assert!(task_stats(&[entry(4, 4), b]).is_err());
    }
}
