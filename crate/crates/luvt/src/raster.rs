//! Sequence raster files and dataset manifests.
//!
//! Raster layout: magic `LUVT`, format version u16, u32 little-endian K, h,
//! w, then K*h*w float32 little-endian values, frame-major then row-major.
//! The manifest is a UTF-8 JSON array of per-sequence records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LUVT";
const VERSION: u16 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Defective,
    DefectFree,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Defective => "defective",
            Label::DefectFree => "defect-free",
        }
    }
}

/// One inspection unit: K grayscale frames in [0,1] plus ground truth.
#[derive(Clone, Debug)]
pub struct ImageSequence {
    pub id: String,
    pub h: usize,
    pub w: usize,
    /// K frames, each h*w row-major.
    pub frames: Vec<Vec<f32>>,
    pub label: Label,
    pub defect_center_px: Option<(f64, f64)>,
    pub defect_radius_px: Option<f64>,
    pub seed: u64,
}

impl ImageSequence {
    pub fn k(&self) -> usize {
        self.frames.len()
    }

    /// Checks the type invariants: pixel range, label/defect consistency,
    /// uniform frame dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::config(format!("sequence {}: no frames", self.id)));
        }
        for (k, f) in self.frames.iter().enumerate() {
            if f.len() != self.h * self.w {
                return Err(Error::config(format!(
                    "sequence {}: frame {k} has {} pixels, expected {}",
                    self.id,
                    f.len(),
                    self.h * self.w
                )));
            }
            if f.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::config(format!(
                    "sequence {}: frame {k} has pixels outside [0,1]",
                    self.id
                )));
            }
        }
        let has_defect = self.defect_center_px.is_some();
        if (self.label == Label::Defective) != has_defect {
            return Err(Error::config(format!(
                "sequence {}: label/defect metadata mismatch",
                self.id
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.k() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.h as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.w as u32).to_le_bytes()).map_err(io)?;
        for frame in &self.frames {
            for v in frame {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    /// Loads frame data; label and defect metadata come from the manifest,
    /// so the returned sequence is labeled defect-free until paired with
    /// its manifest record (see [`load_dataset`]).
    pub fn load_frames(path: &Path) -> Result<(usize, usize, Vec<Vec<f32>>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        let fmt = |what: &str| Error::Format { path: path.to_path_buf(), what: what.into() };
        if buf.len() < 18 || &buf[..4] != MAGIC {
            return Err(fmt("missing LUVT magic"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(fmt(&format!("unsupported raster version {version}")));
        }
        let rd = |o: usize| u32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]) as usize;
        let (k, h, w) = (rd(6), rd(10), rd(14));
        let need = 18 + 4 * k * h * w;
        if buf.len() != need {
            return Err(fmt(&format!("expected {need} bytes, found {}", buf.len())));
        }
        let mut frames = Vec::with_capacity(k);
        let mut pos = 18;
        for _ in 0..k {
            let frame: Vec<f32> = buf[pos..pos + 4 * h * w]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos += 4 * h * w;
            frames.push(frame);
        }
        Ok((h, w, frames))
    }
}

/// Manifest record for one sequence file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub file: String,
    pub label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect_center_px: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect_radius_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect_center_mm: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect_diameter_mm: Option<f64>,
    pub seed: u64,
}

pub fn save_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(records)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every sequence referenced by a manifest. File paths are resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<ImageSequence>> {
    let records = load_manifest(manifest_path)?;
    let base = manifest_path.parent().map(PathBuf::from).unwrap_or_default();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let path = base.join(&rec.file);
        let (h, w, frames) = ImageSequence::load_frames(&path)?;
        let seq = ImageSequence {
            id: rec.id,
            h,
            w,
            frames,
            label: rec.label,
            defect_center_px: rec.defect_center_px,
            defect_radius_px: rec.defect_radius_px,
            seed: rec.seed,
        };
        seq.validate()?;
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip() {
        let dir = std::env::temp_dir().join(format!("luvt-raster-{}", std::process::id()));
        let seq = ImageSequence {
            id: "s0".into(),
            h: 2,
            w: 3,
            frames: vec![vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125]; 4],
            label: Label::DefectFree,
            defect_center_px: None,
            defect_radius_px: None,
            seed: 3,
        };
        seq.validate().unwrap();
        let path = dir.join("s0.luvt");
        seq.save(&path).unwrap();
        let (h, w, frames) = ImageSequence::load_frames(&path).unwrap();
        assert_eq!((h, w, frames.len()), (2, 3, 4));
        assert_eq!(frames[0], seq.frames[0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn validate_rejects_label_mismatch() {
        let seq = ImageSequence {
            id: "bad".into(),
            h: 1,
            w: 1,
            frames: vec![vec![0.5]],
            label: Label::Defective,
            defect_center_px: None,
            defect_radius_px: None,
            seed: 0,
        };
        assert!(seq.validate().is_err());
    }

    #[test]
    fn validate_rejects_out_of_range_pixels() {
        let seq = ImageSequence {
            id: "hot".into(),
            h: 1,
            w: 2,
            frames: vec![vec![0.5, 1.5]],
            label: Label::DefectFree,
            defect_center_px: None,
            defect_radius_px: None,
            seed: 0,
        };
        assert!(seq.validate().is_err());
    }
}
