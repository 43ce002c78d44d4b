//! Desk-scale stand-in dataset where the label is an XOR of an image cue and
//! a caption cue, so neither modality alone predicts it.
//!
//! Each image is a dark canvas with one bright square or bright circle; each
//! caption contains exactly one of two trigger words. The label is 1 iff
//! (square and first trigger) or (circle and second trigger).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Split;
use crate::error::{Error, Result};

pub const DEFAULT_TRIGGERS: [&str; 2] = ["alpha", "beta"];

const FILLERS: [&str; 16] = [
    "when", "the", "meme", "looks", "like", "this", "every", "time", "my", "friend", "says", "that", "nobody",
    "expects", "it", "today",
];
const NOISE: [&str; 5] = ["!!", "123", "#lol", "2024", ":)"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
}

/// Geometry and caption of one synthetic meme. Pixels are rendered on
/// demand with [`SyntheticItem::render_rgb8`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub id: String,
    pub shape: ShapeKind,
    /// Index into the trigger pair.
    pub trigger: usize,
    pub caption: String,
    pub label: usize,
    pub split: Split,
    center: (f64, f64),
    /// Half side (square) or radius (circle), in pixels of a 150-px canvas.
    extent: f64,
    foreground: [u8; 3],
    background: [u8; 3],
}

/// Cue combinations in a cycle that alternates labels, so any even `n`
/// is exactly balanced.
const COMBOS: [(ShapeKind, usize, usize); 4] = [
    (ShapeKind::Square, 0, 1),
    (ShapeKind::Square, 1, 0),
    (ShapeKind::Circle, 1, 1),
    (ShapeKind::Circle, 0, 0),
];

pub fn label_of(shape: ShapeKind, trigger: usize) -> usize {
    usize::from((shape == ShapeKind::Square) == (trigger == 0))
}

/// `n` items split 70/15/15 within every cue combination.
pub fn generate_synthetic(n: usize, seed: u64, triggers: [&str; 2]) -> Result<Vec<SyntheticItem>> {
    if n < 8 {
        return Err(Error::Config(alloc::format!("synthetic datasets need n ≥ 8, got {n}")));
    }
    if triggers[0] == triggers[1] || triggers.iter().any(|t| FILLERS.contains(t)) {
        return Err(Error::Config(
            "trigger words must be distinct and not filler words".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_combo = [0usize; 4];
    for i in 0..n {
        per_combo[i % 4] += 1;
    }
    let mut seen = [0usize; 4];
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        let (shape, trigger, label) = COMBOS[c];
        debug_assert_eq!(label, label_of(shape, trigger));
        let k = per_combo[c];
        let held_out = ((k as f64) * 0.15 + 0.5) as usize;
        let rank = seen[c];
        seen[c] += 1;
        let split = if rank < k - 2 * held_out {
            Split::Train
        } else if rank < k - held_out {
            Split::Validation
        } else {
            Split::Test
        };

        let extent = match shape {
            ShapeKind::Square => rng.random_range(22.0..32.0),
            ShapeKind::Circle => rng.random_range(14.0..20.0),
        };
        let margin = extent + 2.0;
        let center = (
            rng.random_range(margin..150.0 - margin),
            rng.random_range(margin..150.0 - margin),
        );
        let foreground = [0, 1, 2].map(|_| rng.random_range(190..=255u8));
        let background = [0, 1, 2].map(|_| rng.random_range(0..=40u8));
        let caption = make_caption(&mut rng, triggers[trigger]);
        items.push(SyntheticItem {
            id: alloc::format!("syn-{i:05}"),
            shape,
            trigger,
            caption,
            label,
            split,
            center,
            extent,
            foreground,
            background,
        });
    }
    Ok(items)
}

fn make_caption(rng: &mut impl Rng, trigger: &str) -> String {
    let fillers = rng.random_range(2..=6);
    let at = rng.random_range(0..=fillers);
    let mut words: Vec<String> = (0..fillers)
        .map(|_| FILLERS[rng.random_range(0..FILLERS.len())].to_string())
        .collect();
    words.insert(at, trigger.to_string());
    if rng.random_bool(0.3) {
        let pos = rng.random_range(0..=words.len());
        words.insert(pos, NOISE[rng.random_range(0..NOISE.len())].to_string());
    }
    words.join(" ")
}

impl SyntheticItem {
    /// Row-major `size×size×3` RGB bytes. Geometry scales with `size`.
    pub fn render_rgb8(&self, size: usize) -> Vec<u8> {
        let s = size as f64 / 150.0;
        let (cx, cy, r) = (self.center.0 * s, self.center.1 * s, self.extent * s);
        let mut out = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = match self.shape {
                    ShapeKind::Square => px.abs() <= r && py.abs() <= r,
                    ShapeKind::Circle => px * px + py * py <= r * r,
                };
                out.extend_from_slice(if inside { &self.foreground } else { &self.background });
            }
        }
        out
    }
}
