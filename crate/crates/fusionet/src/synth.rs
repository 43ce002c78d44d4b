//! Writes the synthetic XOR dataset as PNG files plus a manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use fusionet_core::data::IMAGE_SIZE;
use fusionet_core::synthetic::generate_synthetic;

use crate::error::{Error, Result};
use crate::manifest::Record;

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Returns the manifest path.
pub fn write_synthetic(out: &Path, n: usize, seed: u64, triggers: [&str; 2]) -> Result<PathBuf> {
    let items = generate_synthetic(n, seed, triggers)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = out.join(MANIFEST_NAME);
    let mut lines = Vec::new();
    for item in &items {
        let rel = format!("images/{}.png", item.id);
        let path = out.join(&rel);
        let px = item.render_rgb8(IMAGE_SIZE);
        image::save_buffer(&path, &px, IMAGE_SIZE as u32, IMAGE_SIZE as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        let rec = Record {
            id: item.id.clone(),
            image_path: rel,
            caption: item.caption.clone(),
            label: if item.label == 1 { "hate" } else { "not_hate" }.into(),
            split: item.split.as_str().into(),
        };
        lines.push(serde_json::to_string(&rec).expect("record serialises"));
    }
    let mut f = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(manifest)
}
