//! Caption cleaning, vocabulary, padding and batch ordering.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::encoders::{OOV_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length images are resized to.
pub const IMAGE_SIZE: usize = 150;
/// Padded caption length.
pub const SEQ_LEN: usize = 60;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(alloc::format!(
                "unknown split `{other}` (train | validation | test)"
            ))),
        }
    }
}

/// One preprocessed meme.
#[derive(Debug, Clone, PartialEq)]
pub struct MemeSample {
    pub id: String,
    /// `150×150×3`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub caption_raw: String,
    pub tokens: Vec<String>,
    /// Filled by [`MemeSample::encode`]; length [`SEQ_LEN`] once set.
    pub token_ids: Vec<usize>,
    /// 1 = hateful/offensive.
    pub label: usize,
    pub split: Split,
}

impl MemeSample {
    pub fn encode(&mut self, vocab: &Vocabulary, len: usize) {
        self.token_ids = tokens_to_ids(&self.tokens, vocab, len);
    }
}

fn is_url_scheme_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-')
}

/// Marks `scheme://non-space+` and `www.non-space+` spans.
fn url_spans(chars: &[char]) -> Vec<bool> {
    let mut drop = alloc::vec![false; chars.len()];
    let run_end = |from: usize| {
        let mut e = from;
        while e < chars.len() && !chars[e].is_whitespace() {
            e += 1;
        }
        e
    };
    let mut i = 0;
    while i < chars.len() {
        let scheme_sep = chars[i..].starts_with(&[':', '/', '/']);
        let www =
            i + 4 <= chars.len() && chars[i..i + 3].iter().all(|c| c.eq_ignore_ascii_case(&'w')) && chars[i + 3] == '.';
        if scheme_sep {
            let mut start = i;
            while start > 0 && is_url_scheme_char(chars[start - 1]) && !drop[start - 1] {
                start -= 1;
            }
            while start < i && !chars[start].is_ascii_alphabetic() {
                start += 1;
            }
            let end = run_end(i + 3);
            if start < i && end > i + 3 {
                drop[start..end].iter_mut().for_each(|d| *d = true);
                i = end;
                continue;
            }
        } else if www {
            let end = run_end(i + 4);
            if end > i + 4 {
                drop[i..end].iter_mut().for_each(|d| *d = true);
                i = end;
                continue;
            }
        }
        i += 1;
    }
    drop
}

fn is_latin(c: char) -> bool {
    matches!(c as u32, 0x41..=0x5A | 0x61..=0x7A | 0xC0..=0x24F | 0x1E00..=0x1EFF)
}

/// Caption cleaning:
/// 1. delete URLs (`scheme://…`, `www.…`);
/// 2. delete every character that is not a letter, a combining mark or
///    whitespace (digits, punctuation, symbols, emoji);
/// 3. lowercase Latin-script letters only;
/// 4. split on whitespace.
pub fn clean_caption(raw: &str) -> Vec<String> {
    let chars: Vec<char> = raw.chars().collect();
    let drop = url_spans(&chars);
    let mut kept = String::with_capacity(raw.len());
    for (&c, &d) in chars.iter().zip(&drop) {
        if d {
            continue;
        }
        if c.is_whitespace() {
            kept.push(' ');
            continue;
        }
        match c.general_category_group() {
            GeneralCategoryGroup::Letter | GeneralCategoryGroup::Mark => {
                if is_latin(c) {
                    kept.extend(c.to_lowercase());
                } else {
                    kept.push(c);
                }
            }
            _ => {}
        }
    }
    kept.split_whitespace().map(ToString::to_string).collect()
}

/// Token ↔ id map. Id 0 is padding, id 1 the out-of-vocabulary bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Ids follow first appearance; tokens seen fewer than `min_count` times
    /// map to OOV.
    pub fn build<'a, I, S>(captions: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut order: Vec<&str> = Vec::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for caption in captions {
            for tok in caption {
                let tok = tok.as_ref();
                let c = counts.entry(tok).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
        let mut tokens = alloc::vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(
            order
                .into_iter()
                .filter(|t| counts[t] >= min_count.max(1) && *t != PAD_TOKEN && *t != OOV_TOKEN)
                .map(ToString::to_string),
        );
        Self::from_tokens(tokens).expect("reserved tokens are in place")
    }

    /// Restores a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[OOV_ID] != OOV_TOKEN {
            return Err(Error::Config("vocabulary must start with <pad>, <oov>".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(alloc::format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) if id > OOV_ID => id,
            _ => OOV_ID,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps tokens to ids, keeps the first `len`, pads with 0 at the end.
pub fn tokens_to_ids<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().take(len).map(|t| vocab.id(t.as_ref())).collect();
    ids.resize(len, PAD_ID);
    ids
}

/// Per-split, per-class sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetStats {
    counts: [[usize; 2]; 3],
}

impl DatasetStats {
    pub fn from_samples(samples: impl IntoIterator<Item = (Split, usize)>) -> Self {
        let mut s = Self::default();
        for (split, label) in samples {
            s.counts[split.index()][label.min(1)] += 1;
        }
        s
    }

    pub fn count(&self, split: Split, label: usize) -> usize {
        self.counts[split.index()][label]
    }

    pub fn split_size(&self, split: Split) -> usize {
        self.counts[split.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// How [`make_batches`] orders indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchOrder {
    /// Index order; used for validation and test data.
    Sequential,
    /// Seeded permutation; `epoch` selects an independent stream.
    Shuffled { seed: u64, epoch: u64 },
}

/// Splits `0..len` into consecutive batches of `batch_size` (the last one
/// may be shorter).
pub fn make_batches(len: usize, batch_size: usize, order: BatchOrder) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut idx: Vec<usize> = (0..len).collect();
    if let BatchOrder::Shuffled { seed, epoch } = order {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
    }
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cleaning_examples() {
        assert_eq!(clean_caption("Check https://x.com NOW 123 !!"), vec!["check", "now"]);
        assert!(clean_caption("").is_empty());
        assert_eq!(clean_caption("see www.example.org/a?b=1 ok"), vec!["see", "ok"]);
        assert_eq!(clean_caption("ftp://a visit:http://b.c/x"), vec!["visit"]);
        assert_eq!(clean_caption("Ünïcode ÀB"), vec!["ünïcode", "àb"]);
    }

    #[test]
    fn bengali_letters_survive() {
        let caption = "আমি বাংলায় গান গাই";
        let expected: Vec<String> = caption.split_whitespace().map(String::from).collect();
        assert_eq!(clean_caption(caption), expected);
        // Mixed script: only the Latin part is lowercased; digits vanish.
        assert_eq!(clean_caption("ভাই LOL ১২৩"), vec!["ভাই", "lol"]);
    }

    #[test]
    fn vocabulary_reserves_pad_and_oov() {
        let caps = [vec!["a", "b", "a"], vec!["c"]];
        let v = Vocabulary::build(caps.iter().map(|c| c.as_slice()), 1);
        assert_eq!(v.tokens(), &["<pad>", "<oov>", "a", "b", "c"]);
        assert_eq!(v.id("zzz"), OOV_ID);
        assert_eq!(v.id("<pad>"), OOV_ID);
        let v2 = Vocabulary::build(caps.iter().map(|c| c.as_slice()), 2);
        assert_eq!(v2.tokens(), &["<pad>", "<oov>", "a"]);
    }

    #[test]
    fn padding_and_truncation() {
        let v = Vocabulary::build([["x", "y"].as_slice()], 1);
        assert_eq!(tokens_to_ids::<&str>(&[], &v, 60), vec![0; 60]);
        let ids = tokens_to_ids(&["x", "nope"], &v, 60);
        assert_eq!(&ids[..3], &[2, 1, 0]);
        assert_eq!(ids.len(), 60);
        let long: Vec<&str> = core::iter::repeat_n("y", 61).collect();
        let ids = tokens_to_ids(&long, &v, 60);
        assert_eq!(ids, vec![3; 60]);
    }

    #[test]
    fn batch_sizes_keep_partial_tail() {
        let b = make_batches(33, 16, BatchOrder::Shuffled { seed: 1, epoch: 1 });
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
        assert_eq!(
            make_batches(5, 2, BatchOrder::Sequential),
            vec![vec![0, 1], vec![2, 3], vec![4]]
        );
    }

    #[test]
    fn shuffling_is_seeded_per_epoch() {
        let a = make_batches(40, 8, BatchOrder::Shuffled { seed: 3, epoch: 1 });
        assert_eq!(a, make_batches(40, 8, BatchOrder::Shuffled { seed: 3, epoch: 1 }));
        assert_ne!(a, make_batches(40, 8, BatchOrder::Shuffled { seed: 3, epoch: 2 }));
        assert_ne!(a, make_batches(40, 8, BatchOrder::Shuffled { seed: 4, epoch: 1 }));
    }

    #[test]
    fn stats_count_per_split() {
        let s = DatasetStats::from_samples([
            (Split::Train, 0),
            (Split::Train, 1),
            (Split::Train, 1),
            (Split::Test, 0),
        ]);
        assert_eq!(s.count(Split::Train, 1), 2);
        assert_eq!(s.split_size(Split::Train), 3);
        assert_eq!(s.split_size(Split::Validation), 0);
        assert_eq!(s.total(), 4);
    }
}
