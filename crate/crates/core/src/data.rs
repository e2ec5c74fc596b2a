//! Domain types shared by every other module: token alphabets, items
//! (token sequences), sample pairs, datasets and their text format,
//! deterministic randomness, and log-space numeric helpers.
//!
//! An item is a non-empty sequence of token ids over an [`Alphabet`] of
//! size `V`. A single class label is a length-1 item, so classification
//! and sequence transduction share one data path. Probabilities are
//! carried as natural-log values everywhere; raw probabilities are never
//! stored.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A finite integer token alphabet of size `V` (payload ids `0..V`).
///
/// Two virtual ids live outside the payload range: BOS = `V` and
/// EOS = `V + 1`. They may appear as n-gram context padding or as a
/// predicted termination symbol, never inside a payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("alphabet size must be >= 2, got {size}")));
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Virtual begin-of-sequence id.
    pub fn bos(&self) -> usize {
        self.size
    }

    /// Virtual end-of-sequence id.
    pub fn eos(&self) -> usize {
        self.size + 1
    }

    pub fn contains(&self, token: usize) -> bool {
        token < self.size
    }
}

/// A non-empty token sequence over an alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Item {
    tokens: Vec<usize>,
    alphabet: Alphabet,
}

impl Item {
    pub fn new(tokens: Vec<usize>, alphabet: Alphabet) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::AlphabetMismatch("item must be non-empty".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| !alphabet.contains(t)) {
            return Err(Error::AlphabetMismatch(format!(
                "token {bad} out of range for alphabet of size {}",
                alphabet.size()
            )));
        }
        Ok(Item { tokens, alphabet })
    }

    /// Length-1 item holding a single class label.
    pub fn label(token: usize, alphabet: Alphabet) -> Result<Self> {
        Item::new(vec![token], alphabet)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: non-empty
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }
}

/// One (x, y) training pair, immutable after creation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePair {
    pub x: Item,
    pub y: Item,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// A list of pairs carrying its split tag.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<SamplePair>,
    pub split: Split,
}

impl Dataset {
    pub fn new(pairs: Vec<SamplePair>, split: Split) -> Self {
        Dataset { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// The three disjoint splits of one corpus.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Seeded, platform-stable pseudorandom generator (ChaCha8).
///
/// Identical seed gives an identical stream everywhere. An `Rng` is
/// single-owner; when independent streams are needed, derive one per
/// purpose with [`Rng::derive`] instead of sharing.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by (this seed, tag).
    pub fn derive(&self, tag: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index: empty range");
        self.inner.gen_range(0..n)
    }

    /// Gamma(shape, 1) draw.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        let dist = rand_distr::Gamma::new(shape, 1.0).expect("gamma shape must be positive");
        rand::prelude::Distribution::sample(&dist, &mut self.inner)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            xs.swap(i, j);
        }
    }
}

/// log Σ exp(v_i), computed with max-subtraction so large negative
/// inputs do not underflow to -inf.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let max = values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Largest-remainder apportionment of `n` into three parts proportional
/// to `fractions`; ties go to the earlier split.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    // sort by descending remainder, index ascending on ties
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for k in 0..(n - assigned) {
        sizes[order[k % 3]] += 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Shuffles `pairs` under `rng` and partitions them into train/valid/test
/// datasets with largest-remainder rounding of the requested fractions.
pub fn split_dataset(
    pairs: Vec<SamplePair>,
    fractions: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Dataset, Dataset, Dataset)> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| f <= 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(fr));
    }
    if pairs.len() < 3 {
        return Err(Error::DatasetTooSmall { n: pairs.len(), splits: 3 });
    }
    let sizes = apportion(pairs.len(), fr);
    let mut shuffled = pairs;
    rng.shuffle(&mut shuffled);
    let rest = shuffled.split_off(sizes[0]);
    let train = shuffled;
    let mut valid = rest;
    let test = valid.split_off(sizes[1]);
    Ok((
        Dataset::new(train, Split::Train),
        Dataset::new(valid, Split::Valid),
        Dataset::new(test, Split::Test),
    ))
}

/// Drops pairs where either side exceeds `max_len` tokens.
pub fn filter_max_len(pairs: Vec<SamplePair>, max_len: usize) -> Vec<SamplePair> {
    pairs
        .into_iter()
        .filter(|p| p.x.len() <= max_len && p.y.len() <= max_len)
        .collect()
}

/// Renders pairs in the dataset text format: one pair per line,
/// `x-tokens TAB y-tokens`, tokens space-separated decimal integers.
pub fn pairs_to_text(pairs: &[SamplePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let xs: Vec<String> = p.x.tokens().iter().map(|t| t.to_string()).collect();
        let ys: Vec<String> = p.y.tokens().iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "{}\t{}", xs.join(" "), ys.join(" "));
    }
    out
}

/// Parses the dataset text format. Lines beginning `#` are comments;
/// blank lines are skipped.
pub fn pairs_from_text(
    text: &str,
    alphabet_x: Alphabet,
    alphabet_y: Alphabet,
) -> Result<Vec<SamplePair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (xs, ys) = line.split_once('\t').ok_or_else(|| {
            Error::Parse(format!("line {}: expected 'x-tokens TAB y-tokens'", lineno + 1))
        })?;
        let parse_side = |s: &str, alphabet: Alphabet| -> Result<Item> {
            let tokens = s
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("line {}: bad token '{tok}'", lineno + 1)))
                })
                .collect::<Result<Vec<usize>>>()?;
            Item::new(tokens, alphabet)
        };
        pairs.push(SamplePair { x: parse_side(xs, alphabet_x)?, y: parse_side(ys, alphabet_y)? });
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[SamplePair]) -> Result<()> {
    std::fs::write(path, pairs_to_text(pairs))?;
    Ok(())
}

pub fn read_pairs(path: &Path, alphabet_x: Alphabet, alphabet_y: Alphabet) -> Result<Vec<SamplePair>> {
    let text = std::fs::read_to_string(path)?;
    pairs_from_text(&text, alphabet_x, alphabet_y)
}
