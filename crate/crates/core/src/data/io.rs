use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Case;
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

pub const DTYPE_F32LE: &str = "f32le";
const META: &str = "meta.json";
const IMAGE: &str = "image.raw";
const LABEL: &str = "label.raw";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub id: String,
    /// `[c, d, h, w]` of the image.
    pub shape: [usize; 4],
    pub label_channels: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
}

pub fn read_meta(dir: &Path) -> Result<CaseMeta> {
    let path = dir.join(META);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CaseMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if meta.dtype != DTYPE_F32LE {
        return Err(Error::format(&path, format!("unsupported dtype `{}`", meta.dtype)));
    }
    if meta.shape.contains(&0) || meta.label_channels == 0 {
        return Err(Error::format(&path, format!("degenerate shape {:?}", meta.shape)));
    }
    Ok(meta)
}

fn read_raw(path: &Path, shape: Shape5) -> Result<Tensor5<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = shape.numel();
    if bytes.len() != want * 4 {
        return Err(Error::format(
            path,
            format!(
                "header shape {shape} expects {want} floats, file holds {} bytes ({} floats)",
                bytes.len(),
                bytes.len() / 4
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor5::new(shape, data)
}

fn write_raw(path: &Path, t: &Tensor5<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_case(dir: &Path) -> Result<Case> {
    let meta = read_meta(dir)?;
    let [c, d, h, w] = meta.shape;
    let image = read_raw(&dir.join(IMAGE), Shape5::new(1, c, d, h, w))?;
    let label_path = dir.join(LABEL);
    let label = read_raw(&label_path, Shape5::new(1, meta.label_channels, d, h, w))?;
    if let Some(v) = label.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(&label_path, format!("label value {v} is not 0 or 1")));
    }
    if !image.is_finite() {
        return Err(Error::format(dir.join(IMAGE), "image holds non-finite values"));
    }
    let mut case = Case::new(meta.id, image, label)?;
    case.channel_names = meta.channel_names;
    Ok(case)
}

pub fn save_case(case: &Case, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = case.image.shape();
    let meta = CaseMeta {
        id: case.id.clone(),
        shape: [s.c, s.d, s.h, s.w],
        label_channels: case.label.shape().c,
        dtype: DTYPE_F32LE.into(),
        channel_names: case.channel_names.clone(),
    };
    let path = dir.join(META);
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_raw(&dir.join(IMAGE), &case.image)?;
    write_raw(&dir.join(LABEL), &case.label)
}
