//! Dataset JSON format:
//!
//! ```json
//! {
//!   "num_classes": C,
//!   "sequences": [
//!     {"label": 0, "valid_frames": 3, "frames": [[[x, y], ...54], ...T]}
//!   ]
//! }
//! ```

use super::{LabeledDataset, SkeletalSequence, KEYPOINTS};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    num_classes: usize,
    sequences: Vec<SequenceFile>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    label: Option<usize>,
    valid_frames: usize,
    frames: Vec<Vec<[f64; 2]>>,
}

/// Reads and validates a dataset. Sequence order follows the file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let mut sequences = Vec::with_capacity(file.sequences.len());
    for (i, s) in file.sequences.into_iter().enumerate() {
        let frames = s.frames.len();
        let mut coords = Vec::with_capacity(frames * KEYPOINTS * 2);
        for (t, frame) in s.frames.iter().enumerate() {
            if frame.len() != KEYPOINTS {
                return Err(Error::Schema(format!(
                    "sequence {i} frame {t}: expected {KEYPOINTS} keypoints, got {}",
                    frame.len()
                )));
            }
            for &[x, y] in frame {
                coords.push(x);
                coords.push(y);
            }
        }
        sequences.push(SkeletalSequence::new(frames, coords, s.label, s.valid_frames)?);
    }
    LabeledDataset::new(sequences, file.num_classes)
}

/// Writes the dataset in the documented format with stable key order.
/// The file appears atomically (temp file + rename).
pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = DatasetFile {
        num_classes: ds.num_classes,
        sequences: ds
            .sequences
            .iter()
            .map(|s| SequenceFile {
                label: s.label,
                valid_frames: s.valid_frames,
                frames: (0..s.frames())
                    .map(|t| {
                        (0..KEYPOINTS)
                            .map(|k| {
                                let (x, y) = s.xy(t, k);
                                [x, y]
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    crate::data::io::write_atomic(path, text.as_bytes())
}

/// Temp-file + rename write used by every artifact producer.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default()
        )),
        None => std::path::PathBuf::from(format!(".{}.tmp", path.display())),
    };
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}
