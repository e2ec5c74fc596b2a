//! Fixed marginal-distribution estimators P̂(x) and P̂(y).
//!
//! These supply the `log P̂(x)` and `log P̂(y)` factors of the duality
//! regularizer. They are fitted once, before joint training begins, and
//! are never updated by the trainer; [`Marginal::fingerprint`] lets tests
//! verify that.

use std::collections::BTreeMap;
use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use crate::data::{Alphabet, Item};
use crate::error::{Error, Result};

/// A frozen estimator of log P̂(item).
pub trait MarginalModel {
    fn alphabet(&self) -> Alphabet;

    /// Exact log probability of the item under the estimator; always <= 0.
    fn log_prob(&self, item: &Item) -> Result<f64>;
}

/// Add-k-smoothed n-gram language model over `alphabet ∪ {EOS}`.
///
/// Sequences are scored with BOS-padded contexts of length `order - 1`
/// and an explicit EOS termination event, so the induced distribution
/// normalizes over variable-length sequences.
#[derive(Clone, Debug)]
pub struct NGramLM {
    alphabet: Alphabet,
    order: usize,
    k: f64,
    /// context (length order-1, may contain BOS) -> next symbol -> count
    counts: BTreeMap<Vec<usize>, BTreeMap<usize, u64>>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    fn context_total(&self, ctx: &[usize]) -> u64 {
        self.counts
            .get(ctx)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    /// log P(symbol | ctx) over the support `alphabet ∪ {EOS}`.
    pub fn step_log_prob(&self, ctx: &[usize], symbol: usize) -> f64 {
        let support = (self.alphabet.size() + 1) as f64;
        let count = self
            .counts
            .get(ctx)
            .and_then(|m| m.get(&symbol))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.context_total(ctx) as f64;
        ((count + self.k) / (total + self.k * support)).ln()
    }

    /// The symbol events of an item: each payload token plus final EOS,
    /// each with its BOS-padded context of length `order - 1`.
    fn events<'a>(&self, item: &'a Item) -> Vec<(Vec<usize>, usize)> {
        let bos = self.alphabet.bos();
        let eos = self.alphabet.eos();
        let mut padded = vec![bos; self.order - 1];
        padded.extend_from_slice(item.tokens());
        padded.push(eos);
        let n = self.order - 1;
        (0..item.len() + 1)
            .map(|t| (padded[t..t + n].to_vec(), padded[t + n]))
            .collect()
    }

    /// Serializes to text: a header plus one line per (context, token, count).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dsl-ngram v1");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "alphabet {}", self.alphabet.size());
        for (ctx, nexts) in &self.counts {
            for (&tok, &count) in nexts {
                let ctx_str: Vec<String> = ctx.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(out, "{} {tok} {count}", ctx_str.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<NGramLM> {
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::Parse("empty n-gram file".into()))?;
        if magic.trim() != "dsl-ngram v1" {
            return Err(Error::Parse(format!("bad n-gram header '{magic}'")));
        }
        let mut order = None;
        let mut k = None;
        let mut alphabet = None;
        for _ in 0..3 {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated n-gram header".into()))?;
            let (key, val) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad header line '{line}'")))?;
            match key {
                "order" => order = Some(val.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                "k" => k = Some(val.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?),
                "alphabet" => {
                    alphabet = Some(Alphabet::new(
                        val.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?,
                    )?)
                }
                other => return Err(Error::Parse(format!("unknown n-gram header key '{other}'"))),
            }
        }
        let order = order.ok_or_else(|| Error::Parse("missing order".into()))?;
        let k = k.ok_or_else(|| Error::Parse("missing k".into()))?;
        let alphabet = alphabet.ok_or_else(|| Error::Parse("missing alphabet".into()))?;
        let mut counts: BTreeMap<Vec<usize>, BTreeMap<usize, u64>> = BTreeMap::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != order + 1 {
                return Err(Error::Parse(format!("bad count line '{line}'")));
            }
            let nums = fields
                .iter()
                .map(|f| f.parse::<u64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<u64>>>()?;
            let ctx: Vec<usize> = nums[..order - 1].iter().map(|&v| v as usize).collect();
            let tok = nums[order - 1] as usize;
            *counts.entry(ctx).or_default().entry(tok).or_insert(0) += nums[order];
        }
        Ok(NGramLM { alphabet, order, k, counts })
    }
}

impl MarginalModel for NGramLM {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn log_prob(&self, item: &Item) -> Result<f64> {
        if item.alphabet() != self.alphabet {
            return Err(Error::AlphabetMismatch(format!(
                "item alphabet size {} vs model {}",
                item.alphabet().size(),
                self.alphabet.size()
            )));
        }
        Ok(self
            .events(item)
            .iter()
            .map(|(ctx, sym)| self.step_log_prob(ctx, *sym))
            .sum())
    }
}

/// Builds the count tables from BOS-padded, EOS-terminated sequences.
pub fn fit_ngram(corpus: &[Item], order: usize, k: f64) -> Result<NGramLM> {
    if corpus.is_empty() {
        return Err(Error::NoData);
    }
    if order < 1 {
        return Err(Error::Config("n-gram order must be >= 1".into()));
    }
    if k <= 0.0 {
        return Err(Error::Config(format!("smoothing constant must be > 0, got {k}")));
    }
    let alphabet = corpus[0].alphabet();
    let mut lm = NGramLM { alphabet, order, k, counts: BTreeMap::new() };
    for item in corpus {
        if item.alphabet() != alphabet {
            return Err(Error::AlphabetMismatch("mixed alphabets in corpus".into()));
        }
        for (ctx, sym) in lm.events(item) {
            *lm.counts.entry(ctx).or_default().entry(sym).or_insert(0) += 1;
        }
    }
    Ok(lm)
}

/// Uniform prior over K class labels: log P = -log K for every
/// length-1 item.
#[derive(Clone, Debug)]
pub struct UniformLabelMarginal {
    alphabet: Alphabet,
}

impl UniformLabelMarginal {
    pub fn new(classes: usize) -> Result<Self> {
        Ok(UniformLabelMarginal { alphabet: Alphabet::new(classes)? })
    }

    pub fn classes(&self) -> usize {
        self.alphabet.size()
    }
}

impl MarginalModel for UniformLabelMarginal {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn log_prob(&self, item: &Item) -> Result<f64> {
        if item.len() != 1 || !self.alphabet.contains(item.tokens()[0]) {
            return Err(Error::AlphabetMismatch(format!(
                "expected a single label in [0, {})",
                self.alphabet.size()
            )));
        }
        Ok(-(self.alphabet.size() as f64).ln())
    }
}

/// Add-k-smoothed categorical over the enumerable length-1 item space.
///
/// `from_probs` bypasses counting and encodes an exact distribution
/// (k = 0), used when ground-truth marginals are available.
#[derive(Clone, Debug)]
pub struct EmpiricalCategorical {
    alphabet: Alphabet,
    weights: Vec<f64>,
    k: f64,
}

impl EmpiricalCategorical {
    pub fn fit(items: &[Item], alphabet: Alphabet, k: f64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::NoData);
        }
        if k <= 0.0 {
            return Err(Error::Config(format!("smoothing constant must be > 0, got {k}")));
        }
        let mut weights = vec![0.0; alphabet.size()];
        for item in items {
            if item.len() != 1 || !alphabet.contains(item.tokens()[0]) {
                return Err(Error::AlphabetMismatch(
                    "empirical categorical expects length-1 items".into(),
                ));
            }
            weights[item.tokens()[0]] += 1.0;
        }
        Ok(EmpiricalCategorical { alphabet, weights, k })
    }

    /// Exact categorical from known probabilities (must be positive and
    /// sum to 1).
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let alphabet = Alphabet::new(probs.len())?;
        if probs.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(Error::DegenerateLogProb(
                "exact categorical needs strictly positive probabilities".into(),
            ));
        }
        Ok(EmpiricalCategorical { alphabet, weights: probs.to_vec(), k: 0.0 })
    }
}

impl MarginalModel for EmpiricalCategorical {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn log_prob(&self, item: &Item) -> Result<f64> {
        if item.len() != 1 || !self.alphabet.contains(item.tokens()[0]) {
            return Err(Error::AlphabetMismatch(format!(
                "expected a single token in [0, {})",
                self.alphabet.size()
            )));
        }
        let v = self.alphabet.size() as f64;
        let total: f64 = self.weights.iter().sum();
        let w = self.weights[item.tokens()[0]];
        Ok(((w + self.k) / (total + self.k * v)).ln())
    }
}

/// Runtime-dispatched marginal, the form configs and the trainer use.
#[derive(Clone, Debug)]
pub enum Marginal {
    NGram(NGramLM),
    Uniform(UniformLabelMarginal),
    Categorical(EmpiricalCategorical),
}

impl Marginal {
    /// Stable digest of the estimator state; unchanged fingerprints
    /// before/after a training run certify the marginal was frozen.
    pub fn fingerprint(&self) -> u64 {
        let text = match self {
            Marginal::NGram(lm) => lm.to_text(),
            Marginal::Uniform(u) => format!("uniform {}", u.classes()),
            Marginal::Categorical(c) => {
                let ws: Vec<String> = c.weights.iter().map(|w| format!("{w:?}")).collect();
                format!("categorical k={:?} [{}]", c.k, ws.join(","))
            }
        };
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        h.finish()
    }
}

impl MarginalModel for Marginal {
    fn alphabet(&self) -> Alphabet {
        match self {
            Marginal::NGram(m) => m.alphabet(),
            Marginal::Uniform(m) => m.alphabet(),
            Marginal::Categorical(m) => m.alphabet(),
        }
    }

    fn log_prob(&self, item: &Item) -> Result<f64> {
        match self {
            Marginal::NGram(m) => m.log_prob(item),
            Marginal::Uniform(m) => m.log_prob(item),
            Marginal::Categorical(m) => m.log_prob(item),
        }
    }
}

/// Convenience named after the operation it performs.
pub fn marginal_log_prob(model: &dyn MarginalModel, item: &Item) -> Result<f64> {
    model.log_prob(item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn items(tokens: &[&[usize]], v: usize) -> Vec<Item> {
        let a = Alphabet::new(v).unwrap();
        tokens.iter().map(|t| Item::new(t.to_vec(), a).unwrap()).collect()
    }

    #[test]
    fn unigram_hand_count() {
        // corpus [[0],[0],[1]], order 1, k = 1, V = 2.
        // Events: 0,EOS, 0,EOS, 1,EOS -> counts 0:2, 1:1, EOS:3, total 6.
        let corpus = items(&[&[0], &[0], &[1]], 2);
        let lm = fit_ngram(&corpus, 1, 1.0).unwrap();
        let p0 = lm.step_log_prob(&[], 0).exp();
        assert_abs_diff_eq!(p0, 3.0 / 9.0, epsilon = 1e-12);
        let p_eos = lm.step_log_prob(&[], lm.alphabet().eos()).exp();
        assert_abs_diff_eq!(p_eos, 4.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn unigram_single_item_corpus() {
        // corpus [[0]]: counts 0:1, EOS:1, total 2; with k=1 both
        // smoothed probabilities are 2/5, and log_prob([0]) is their
        // product's log.
        let corpus = items(&[&[0]], 2);
        let lm = fit_ngram(&corpus, 1, 1.0).unwrap();
        let lp = lm.log_prob(&corpus[0]).unwrap();
        assert_abs_diff_eq!(lp, (2.0f64 / 5.0).ln() * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn huge_k_gives_uniform_next_token() {
        let corpus = items(&[&[0, 1, 0], &[1, 1, 0]], 2);
        let lm = fit_ngram(&corpus, 2, 1e9).unwrap();
        let uniform = (1.0f64 / 3.0).ln(); // V + 1 symbols
        for sym in [0usize, 1, lm.alphabet().eos()] {
            assert_abs_diff_eq!(lm.step_log_prob(&[0], sym), uniform, epsilon = 1e-6);
        }
    }

    #[test]
    fn degenerate_corpus_probability_approaches_one() {
        // order exceeds the sentence length, so every context along the
        // sentence is unique and each step's probability tends to 1
        let corpus = items(&[&[0, 1, 0, 1]], 2);
        let lm = fit_ngram(&corpus, 5, 1e-9).unwrap();
        let lp = lm.log_prob(&corpus[0]).unwrap();
        assert!(lp > -1e-6, "log_prob {lp} should approach 0 as k -> 0+");
        assert!(lp <= 0.0);
    }

    #[test]
    fn per_context_distribution_normalizes() {
        let corpus = items(&[&[0, 1, 2, 0], &[2, 2, 1], &[0]], 3);
        let lm = fit_ngram(&corpus, 2, 0.1).unwrap();
        let a = lm.alphabet();
        for ctx in [vec![a.bos()], vec![0], vec![1], vec![2]] {
            let total: f64 = (0..a.size())
                .chain(std::iter::once(a.eos()))
                .map(|sym| lm.step_log_prob(&ctx, sym).exp())
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_ngram_rejects_bad_inputs() {
        assert!(matches!(fit_ngram(&[], 1, 0.1), Err(Error::NoData)));
        let corpus = items(&[&[0]], 2);
        assert!(fit_ngram(&corpus, 0, 0.1).is_err());
        assert!(fit_ngram(&corpus, 1, 0.0).is_err());
    }

    #[test]
    fn uniform_label_log_probs() {
        let m10 = UniformLabelMarginal::new(10).unwrap();
        let item = Item::label(3, m10.alphabet()).unwrap();
        assert_abs_diff_eq!(m10.log_prob(&item).unwrap(), -(10.0f64).ln(), epsilon = 1e-12);
        let m2 = UniformLabelMarginal::new(2).unwrap();
        let item = Item::label(1, m2.alphabet()).unwrap();
        assert_abs_diff_eq!(m2.log_prob(&item).unwrap(), -(2.0f64).ln(), epsilon = 1e-12);
        // multi-token items are not labels
        let seq = Item::new(vec![0, 1], m2.alphabet()).unwrap();
        assert!(m2.log_prob(&seq).is_err());
    }

    #[test]
    fn empirical_categorical_counts_and_smoothing() {
        let a = Alphabet::new(3).unwrap();
        let obs = items(&[&[0], &[0], &[2]], 3);
        let m = EmpiricalCategorical::fit(&obs, a, 0.5).unwrap();
        // (2 + 0.5) / (3 + 1.5)
        let item = Item::label(0, a).unwrap();
        assert_abs_diff_eq!(m.log_prob(&item).unwrap(), (2.5f64 / 4.5).ln(), epsilon = 1e-12);
        // unseen symbol still gets finite negative mass
        let unseen = Item::label(1, a).unwrap();
        let lp = m.log_prob(&unseen).unwrap();
        assert!(lp.is_finite() && lp < 0.0);
    }

    #[test]
    fn exact_categorical_matches_probs() {
        let m = EmpiricalCategorical::from_probs(&[0.25, 0.5, 0.25]).unwrap();
        let item = Item::label(1, m.alphabet()).unwrap();
        assert_abs_diff_eq!(m.log_prob(&item).unwrap(), 0.5f64.ln(), epsilon = 1e-12);
        assert!(EmpiricalCategorical::from_probs(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn ngram_serialization_round_trip() {
        let corpus = items(&[&[0, 1, 2], &[2, 0], &[1, 1, 1, 0]], 3);
        let lm = fit_ngram(&corpus, 3, 0.1).unwrap();
        let text = lm.to_text();
        let back = NGramLM::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let probe = items(&[&[1, 1, 0]], 3);
        assert_eq!(
            lm.log_prob(&probe[0]).unwrap().to_bits(),
            back.log_prob(&probe[0]).unwrap().to_bits()
        );
    }

    #[test]
    fn fingerprint_distinguishes_states() {
        let corpus_a = items(&[&[0], &[1]], 2);
        let corpus_b = items(&[&[0], &[0]], 2);
        let ma = Marginal::NGram(fit_ngram(&corpus_a, 1, 0.1).unwrap());
        let mb = Marginal::NGram(fit_ngram(&corpus_b, 1, 0.1).unwrap());
        assert_ne!(ma.fingerprint(), mb.fingerprint());
        assert_eq!(ma.fingerprint(), ma.fingerprint());
    }
}
