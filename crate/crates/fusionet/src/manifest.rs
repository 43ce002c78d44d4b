//! JSON-lines meme manifests and image preprocessing.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use fusionet_core::data::{clean_caption, tokens_to_ids, DatasetStats, MemeSample, Split, Vocabulary, IMAGE_SIZE};
use fusionet_core::training::{Example, ImageData};
use fusionet_core::Tensor;
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordError, Result};
use crate::workers;

/// One manifest line. `image_path` is relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub image_path: String,
    pub caption: String,
    pub label: String,
    pub split: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub path: PathBuf,
    /// File order.
    pub samples: Vec<MemeSample>,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &MemeSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn vocabulary(&self, min_count: usize) -> Vocabulary {
        vocabulary(self.split(Split::Train), min_count)
    }
}

/// Vocabulary over the given samples' tokens.
pub fn vocabulary<'a>(samples: impl IntoIterator<Item = &'a MemeSample>, min_count: usize) -> Vocabulary {
    let samples: Vec<&MemeSample> = samples.into_iter().collect();
    Vocabulary::build(samples.iter().map(|s| s.tokens.as_slice()), min_count)
}

pub fn examples<'a>(
    samples: impl IntoIterator<Item = &'a MemeSample>,
    vocab: &Vocabulary,
    seq_len: usize,
) -> Vec<Example<f32>> {
    samples
        .into_iter()
        .map(|s| Example {
            image: ImageData::Pixels(s.image.clone()),
            tokens: tokens_to_ids(&s.tokens, vocab, seq_len),
            label: s.label,
        })
        .collect()
}

/// RGB, bilinear resize to `IMAGE_SIZE` square, values scaled to `[0, 1]`.
pub fn preprocess_image(img: &image::DynamicImage) -> Tensor<f32> {
    let rgb = img.to_rgb8();
    let resized = if rgb.dimensions() == (IMAGE_SIZE as u32, IMAGE_SIZE as u32) {
        rgb
    } else {
        image::imageops::resize(&rgb, IMAGE_SIZE as u32, IMAGE_SIZE as u32, FilterType::Triangle)
    };
    let data = resized.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("buffer matches shape")
}

/// Reads every record, reporting all bad ones together.
pub fn load_manifest(path: &Path, label_map: &BTreeMap<String, usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut pending = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |id: Option<&str>, message: String| RecordError {
            line: line_no,
            id: id.map(String::from),
            message,
        };
        let rec: Record = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(bad(None, format!("invalid record: {e}")));
                continue;
            }
        };
        let id = Some(rec.id.as_str());
        if !seen.insert(rec.id.clone()) {
            errors.push(bad(id, "duplicate id".into()));
            continue;
        }
        let Some(&label) = label_map.get(&rec.label) else {
            let known: Vec<&str> = label_map.keys().map(String::as_str).collect();
            errors.push(bad(
                id,
                format!("unknown label `{}` (known: {})", rec.label, known.join(", ")),
            ));
            continue;
        };
        let split: Split = match rec.split.parse() {
            Ok(s) => s,
            Err(e) => {
                errors.push(bad(id, e.to_string()));
                continue;
            }
        };
        pending.push((line_no, rec, label, split));
    }
    let images = workers::map_ordered(&pending, workers::thread_count(), |_, (_, rec, _, _)| {
        let image_path = base.join(&rec.image_path);
        if !image_path.is_file() {
            return Err(format!("image file {} not found", image_path.display()));
        }
        image::open(&image_path)
            .map(|img| preprocess_image(&img))
            .map_err(|e| format!("cannot decode image {}: {e}", image_path.display()))
    });
    let mut samples = Vec::with_capacity(pending.len());
    for ((line, rec, label, split), image) in pending.into_iter().zip(images) {
        match image {
            Ok(image) => samples.push(MemeSample {
                tokens: clean_caption(&rec.caption),
                id: rec.id,
                image,
                caption_raw: rec.caption,
                token_ids: Vec::new(),
                label,
                split,
            }),
            Err(message) => errors.push(RecordError {
                line,
                id: Some(rec.id),
                message,
            }),
        }
    }
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.line);
        return Err(Error::Manifest {
            path: path.into(),
            errors,
        });
    }
    let stats = DatasetStats::from_samples(samples.iter().map(|s| (s.split, s.label)));
    Ok(Dataset {
        path: path.into(),
        samples,
        stats,
    })
}
