//! Synthetic dual-task generators with fully known ground truth, plus
//! the exact brute-force oracles used by tests and experiments: true
//! conditionals, KL-to-truth, exact expected duality loss, and Bayes
//! error.
//!
//! Three families cover the shapes a dual task can take at desk scale:
//! an enumerable joint table ([`TabularJoint`]), a noisy substitution
//! cipher over sequences ([`CipherTask`]), and a classify-vs-generate
//! pair ([`ClassifyGenerateTask`]).

use std::fmt::Write as _;

use crate::data::{Alphabet, Item, Rng, SamplePair};
use crate::duality::duality_term;
use crate::error::{Error, Result};
use crate::marginals::{EmpiricalCategorical, MarginalModel};
use crate::models::{ConditionalModel, TabularSoftmaxModel};

/// Which conditional a model or oracle refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// P(y|x): x is the input.
    XtoY,
    /// P(x|y): y is the input.
    YtoX,
}

impl Direction {
    pub fn tag(&self) -> &'static str {
        match self {
            Direction::XtoY => "xy",
            Direction::YtoX => "yx",
        }
    }
}

/// Explicit joint distribution P(x, y) over enumerable length-1 item
/// spaces; the "unknown" distribution made known so every quantity has
/// a closed form.
#[derive(Clone, Debug)]
pub struct TabularJoint {
    vx: usize,
    vy: usize,
    probs: Vec<f64>, // row-major Vx × Vy, sums to 1
}

impl TabularJoint {
    pub fn new(vx: usize, vy: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != vx * vy {
            return Err(Error::ShapeMismatch(format!(
                "joint table needs {} entries, got {}",
                vx * vy,
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::DegenerateLogProb("joint entries must be >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateLogProb(format!("joint sums to {total}, not 1")));
        }
        Ok(TabularJoint { vx, vy, probs })
    }

    pub fn vx(&self) -> usize {
        self.vx
    }

    pub fn vy(&self) -> usize {
        self.vy
    }

    pub fn input_alphabet(&self) -> Alphabet {
        Alphabet::new(self.vx).expect("vx >= 2")
    }

    pub fn output_alphabet(&self) -> Alphabet {
        Alphabet::new(self.vy).expect("vy >= 2")
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.vy + y]
    }

    /// Marginal over the named side, by row or column sums.
    pub fn marginal(&self, side: Direction) -> Vec<f64> {
        match side {
            Direction::XtoY => (0..self.vx)
                .map(|x| (0..self.vy).map(|y| self.prob(x, y)).sum())
                .collect(),
            Direction::YtoX => (0..self.vy)
                .map(|y| (0..self.vx).map(|x| self.prob(x, y)).sum())
                .collect(),
        }
    }

    /// Exact marginal as a frozen estimator (for oracle configurations).
    pub fn marginal_model(&self, side: Direction) -> Result<EmpiricalCategorical> {
        EmpiricalCategorical::from_probs(&self.marginal(side))
    }
}

/// Joint sampled from a symmetric Dirichlet over the Vx·Vy simplex.
pub fn gen_tabular_joint(vx: usize, vy: usize, concentration: f64, rng: &mut Rng) -> Result<TabularJoint> {
    if vx < 2 || vy < 2 {
        return Err(Error::Config("joint sides must be >= 2".into()));
    }
    if concentration <= 0.0 {
        return Err(Error::Config("concentration must be > 0".into()));
    }
    let mut cells: Vec<f64> = (0..vx * vy).map(|_| rng.gamma(concentration)).collect();
    let total: f64 = cells.iter().sum();
    for c in cells.iter_mut() {
        *c /= total;
    }
    TabularJoint::new(vx, vy, cells)
}

/// Exact conditional table of the joint: rows are P(y|x) for `XtoY`,
/// P(x|y) for `YtoX`. Rows sum to 1.
pub fn true_conditional(joint: &TabularJoint, direction: Direction) -> Result<Vec<Vec<f64>>> {
    let marginal = joint.marginal(match direction {
        Direction::XtoY => Direction::XtoY,
        Direction::YtoX => Direction::YtoX,
    });
    if let Some(i) = marginal.iter().position(|&m| m <= 0.0) {
        return Err(Error::UnsupportedInput(format!(
            "zero marginal at index {i}; conditional undefined"
        )));
    }
    let rows = match direction {
        Direction::XtoY => (0..joint.vx)
            .map(|x| (0..joint.vy).map(|y| joint.prob(x, y) / marginal[x]).collect())
            .collect(),
        Direction::YtoX => (0..joint.vy)
            .map(|y| (0..joint.vx).map(|x| joint.prob(x, y) / marginal[y]).collect())
            .collect(),
    };
    Ok(rows)
}

/// Tabular model whose softmax rows equal the true conditional.
pub fn true_conditional_model(joint: &TabularJoint, direction: Direction) -> Result<TabularSoftmaxModel> {
    let rows = true_conditional(joint, direction)?;
    let (input, output) = match direction {
        Direction::XtoY => (joint.input_alphabet(), joint.output_alphabet()),
        Direction::YtoX => (joint.output_alphabet(), joint.input_alphabet()),
    };
    TabularSoftmaxModel::from_conditional(input, output, &rows)
}

/// KL(P*(·|input) ‖ P_model(·|input)) averaged over the true input
/// marginal. A model placing zero mass where the truth is positive
/// yields the +inf sentinel, never an error.
pub fn kl_to_truth<M: ConditionalModel>(
    model: &M,
    joint: &TabularJoint,
    direction: Direction,
) -> Result<f64> {
    let truth = true_conditional(joint, direction)?;
    let marginal = joint.marginal(match direction {
        Direction::XtoY => Direction::XtoY,
        Direction::YtoX => Direction::YtoX,
    });
    let (in_alpha, out_alpha) = match direction {
        Direction::XtoY => (joint.input_alphabet(), joint.output_alphabet()),
        Direction::YtoX => (joint.output_alphabet(), joint.input_alphabet()),
    };
    let mut total = 0.0;
    for (i, row) in truth.iter().enumerate() {
        let input = Item::label(i, in_alpha)?;
        for (o, &p_true) in row.iter().enumerate() {
            if p_true == 0.0 {
                continue;
            }
            let lp_model = model.log_prob(&input, &Item::label(o, out_alpha)?)?;
            if lp_model == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            total += marginal[i] * p_true * (p_true.ln() - lp_model);
        }
    }
    Ok(total)
}

/// Σ_{x,y} P(x,y) · ℓ_duality(x,y) under the given models and marginals;
/// zero exactly when both models are the true conditionals and the
/// marginals are exact.
pub fn exact_expected_duality<P, D, MX, MY>(
    joint: &TabularJoint,
    primal: &P,
    dual: &D,
    marg_x: &MX,
    marg_y: &MY,
) -> Result<f64>
where
    P: ConditionalModel,
    D: ConditionalModel,
    MX: MarginalModel,
    MY: MarginalModel,
{
    let ax = joint.input_alphabet();
    let ay = joint.output_alphabet();
    let mut total = 0.0;
    for x in 0..joint.vx {
        let xi = Item::label(x, ax)?;
        for y in 0..joint.vy {
            let p = joint.prob(x, y);
            if p == 0.0 {
                continue;
            }
            let yi = Item::label(y, ay)?;
            let term = duality_term(
                marg_x.log_prob(&xi)?,
                primal.log_prob(&xi, &yi)?,
                marg_y.log_prob(&yi)?,
                dual.log_prob(&yi, &xi)?,
            )?;
            total += p * term.loss;
        }
    }
    Ok(total)
}

/// Draws `n` pairs from the joint; x and y are length-1 items.
pub fn sample_tabular(joint: &TabularJoint, n: usize, rng: &mut Rng) -> Result<Vec<SamplePair>> {
    let ax = joint.input_alphabet();
    let ay = joint.output_alphabet();
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.next_f64();
        let mut cell = joint.probs.len() - 1;
        for (i, &p) in joint.probs.iter().enumerate() {
            if u < p {
                cell = i;
                break;
            }
            u -= p;
        }
        pairs.push(SamplePair {
            x: Item::label(cell / joint.vy, ax)?,
            y: Item::label(cell % joint.vy, ay)?,
        });
    }
    Ok(pairs)
}

/// Noisy substitution cipher: x tokens i.i.d. uniform over V, and
/// y_t = π(x_t) with probability 1-ε, otherwise uniform over the other
/// V-1 symbols. Positions are independent, so the exact posterior is
/// closed-form.
#[derive(Clone, Debug)]
pub struct CipherTask {
    v: usize,
    permutation: Vec<usize>,
    inverse: Vec<usize>,
    noise: f64,
    len_range: (usize, usize),
}

impl CipherTask {
    pub fn new(v: usize, permutation: Vec<usize>, noise: f64, len_range: (usize, usize)) -> Result<Self> {
        if v < 2 {
            return Err(Error::Config("cipher alphabet must be >= 2".into()));
        }
        let mut seen = vec![false; v];
        if permutation.len() != v || permutation.iter().any(|&p| p >= v || std::mem::replace(&mut seen[p.min(v - 1)], true)) {
            return Err(Error::Config("not a permutation".into()));
        }
        if !(0.0..0.5).contains(&noise) {
            return Err(Error::Config(format!("noise must be in [0, 0.5), got {noise}")));
        }
        if len_range.0 < 1 || len_range.0 > len_range.1 {
            return Err(Error::Config(format!("bad length range {len_range:?}")));
        }
        let mut inverse = vec![0; v];
        for (i, &p) in permutation.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(CipherTask { v, permutation, inverse, noise, len_range })
    }

    /// Random secret permutation drawn from `rng`.
    pub fn random(v: usize, noise: f64, len_range: (usize, usize), rng: &mut Rng) -> Result<Self> {
        let mut permutation: Vec<usize> = (0..v).collect();
        rng.shuffle(&mut permutation);
        CipherTask::new(v, permutation, noise, len_range)
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new(self.v).expect("v >= 2")
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn len_range(&self) -> (usize, usize) {
        self.len_range
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Best achievable per-position prediction accuracy: 1 - ε.
    pub fn bayes_accuracy(&self) -> f64 {
        1.0 - self.noise
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<SamplePair>> {
        let alphabet = self.alphabet();
        let (lo, hi) = self.len_range;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let len = lo + rng.next_index(hi - lo + 1);
            let x: Vec<usize> = (0..len).map(|_| rng.next_index(self.v)).collect();
            let y: Vec<usize> = x
                .iter()
                .map(|&t| {
                    if rng.next_f64() < self.noise {
                        // uniform over the other V-1 symbols
                        let mut s = rng.next_index(self.v - 1);
                        if s >= self.permutation[t] {
                            s += 1;
                        }
                        s
                    } else {
                        self.permutation[t]
                    }
                })
                .collect();
            pairs.push(SamplePair {
                x: Item::new(x, alphabet)?,
                y: Item::new(y, alphabet)?,
            });
        }
        Ok(pairs)
    }

    /// Exact per-position posterior P(x_t | y_t): the uniform input
    /// prior cancels, leaving the channel fidelity on π⁻¹(y_t) and
    /// ε/(V-1) elsewhere.
    pub fn posterior(&self, y: &Item) -> Result<Vec<Vec<f64>>> {
        if y.alphabet() != self.alphabet() {
            return Err(Error::AlphabetMismatch("cipher posterior".into()));
        }
        Ok(y.tokens()
            .iter()
            .map(|&yt| {
                (0..self.v)
                    .map(|s| {
                        if s == self.inverse[yt] {
                            1.0 - self.noise
                        } else {
                            self.noise / (self.v as f64 - 1.0)
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// K uniform classes, each emitting i.i.d. feature tokens from its own
/// categorical; the primal task classifies a sentence, the dual task
/// generates a sentence from a label.
#[derive(Clone, Debug)]
pub struct ClassifyGenerateTask {
    classes: usize,
    vocab: usize,
    class_token_probs: Vec<Vec<f64>>, // K rows over the vocab
    len_range: (usize, usize),
}

impl ClassifyGenerateTask {
    pub fn new(
        class_token_probs: Vec<Vec<f64>>,
        len_range: (usize, usize),
    ) -> Result<Self> {
        let classes = class_token_probs.len();
        if classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        let vocab = class_token_probs[0].len();
        if vocab < 2 || class_token_probs.iter().any(|r| r.len() != vocab) {
            return Err(Error::ShapeMismatch("class token distribution rows".into()));
        }
        for row in &class_token_probs {
            if row.iter().any(|&p| p <= 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::DegenerateLogProb(
                    "class token distributions must be positive and sum to 1".into(),
                ));
            }
        }
        if len_range.0 < 1 || len_range.0 > len_range.1 {
            return Err(Error::Config(format!("bad length range {len_range:?}")));
        }
        Ok(ClassifyGenerateTask { classes, vocab, class_token_probs, len_range })
    }

    /// Per-class categoricals drawn from a symmetric Dirichlet.
    pub fn random(
        classes: usize,
        vocab: usize,
        concentration: f64,
        len_range: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        let rows = (0..classes)
            .map(|_| {
                let mut row: Vec<f64> = (0..vocab).map(|_| rng.gamma(concentration)).collect();
                let total: f64 = row.iter().sum();
                for p in row.iter_mut() {
                    *p /= total;
                }
                row
            })
            .collect();
        ClassifyGenerateTask::new(rows, len_range)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sentence_alphabet(&self) -> Alphabet {
        Alphabet::new(self.vocab).expect("vocab >= 2")
    }

    pub fn label_alphabet(&self) -> Alphabet {
        Alphabet::new(self.classes).expect("classes >= 2")
    }

    pub fn len_range(&self) -> (usize, usize) {
        self.len_range
    }

    fn sample_token(&self, class: usize, rng: &mut Rng) -> usize {
        let mut u = rng.next_f64();
        let row = &self.class_token_probs[class];
        for (t, &p) in row.iter().enumerate() {
            if u < p {
                return t;
            }
            u -= p;
        }
        self.vocab - 1
    }

    /// Pairs are (sentence, label): x is the token sequence, y the
    /// length-1 class item, y drawn uniformly.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<SamplePair>> {
        let (lo, hi) = self.len_range;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.next_index(self.classes);
            let len = lo + rng.next_index(hi - lo + 1);
            let tokens: Vec<usize> = (0..len).map(|_| self.sample_token(class, rng)).collect();
            pairs.push(SamplePair {
                x: Item::new(tokens, self.sentence_alphabet())?,
                y: Item::label(class, self.label_alphabet())?,
            });
        }
        Ok(pairs)
    }

    /// Posterior P(class | sentence) ∝ Π_t P(token_t | class) under the
    /// uniform class prior.
    pub fn class_posterior(&self, sentence: &[usize]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.classes)
            .map(|c| sentence.iter().map(|&t| self.class_token_probs[c][t].ln()).sum())
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Exact Bayes error by enumerating every sentence in the length
    /// range. Cost is O(Σ_L V^L); callers keep V and L small.
    pub fn bayes_error_enumerated(&self) -> f64 {
        let (lo, hi) = self.len_range;
        let n_lengths = (hi - lo + 1) as f64;
        let mut err = 0.0;
        for len in lo..=hi {
            let mut sentence = vec![0usize; len];
            loop {
                // P(sentence) = mean over classes of the class likelihood
                let mut p_sentence = 0.0;
                for c in 0..self.classes {
                    let like: f64 =
                        sentence.iter().map(|&t| self.class_token_probs[c][t]).product();
                    p_sentence += like / self.classes as f64;
                }
                let post = self.class_posterior(&sentence);
                let best = post.iter().copied().fold(0.0f64, f64::max);
                err += (1.0 / n_lengths) * p_sentence * (1.0 - best);

                // advance the odometer
                let mut pos = 0;
                loop {
                    if pos == len {
                        break;
                    }
                    sentence[pos] += 1;
                    if sentence[pos] < self.vocab {
                        break;
                    }
                    sentence[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
        }
        err
    }

    /// Monte-Carlo Bayes error: fraction of sampled pairs where the
    /// maximum-posterior class disagrees with the drawn label.
    pub fn bayes_error_monte_carlo(&self, n: usize, rng: &mut Rng) -> Result<f64> {
        let pairs = self.sample(n, rng)?;
        let mut wrong = 0usize;
        for p in &pairs {
            let post = self.class_posterior(p.x.tokens());
            let best = (0..self.classes)
                .max_by(|&a, &b| post[a].partial_cmp(&post[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            if best != p.y.tokens()[0] {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / n as f64)
    }
}

/// Task family + parameters + seed, enough to regenerate ground truth.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    Tabular { vx: usize, vy: usize, concentration: f64, seed: u64 },
    Cipher { v: usize, noise: f64, len_min: usize, len_max: usize, seed: u64 },
    Classify { classes: usize, vocab: usize, concentration: f64, len_min: usize, len_max: usize, seed: u64 },
}

/// A realized task: the generator plus its spec.
#[derive(Clone, Debug)]
pub enum Task {
    Tabular(TabularJoint),
    Cipher(CipherTask),
    Classify(ClassifyGenerateTask),
}

impl TaskSpec {
    /// Builds the ground-truth object deterministically from the seed.
    pub fn build(&self) -> Result<Task> {
        match *self {
            TaskSpec::Tabular { vx, vy, concentration, seed } => {
                let mut rng = Rng::new(seed).derive(0x7461626c); // "tabl"
                Ok(Task::Tabular(gen_tabular_joint(vx, vy, concentration, &mut rng)?))
            }
            TaskSpec::Cipher { v, noise, len_min, len_max, seed } => {
                let mut rng = Rng::new(seed).derive(0x63697068); // "ciph"
                Ok(Task::Cipher(CipherTask::random(v, noise, (len_min, len_max), &mut rng)?))
            }
            TaskSpec::Classify { classes, vocab, concentration, len_min, len_max, seed } => {
                let mut rng = Rng::new(seed).derive(0x636c6173); // "clas"
                Ok(Task::Classify(ClassifyGenerateTask::random(
                    classes,
                    vocab,
                    concentration,
                    (len_min, len_max),
                    &mut rng,
                )?))
            }
        }
    }

    /// Task manifest text, sufficient to regenerate the ground truth.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dsl-task v1");
        match *self {
            TaskSpec::Tabular { vx, vy, concentration, seed } => {
                let _ = writeln!(out, "family tabular");
                let _ = writeln!(out, "vx {vx}");
                let _ = writeln!(out, "vy {vy}");
                let _ = writeln!(out, "concentration {concentration}");
                let _ = writeln!(out, "seed {seed}");
            }
            TaskSpec::Cipher { v, noise, len_min, len_max, seed } => {
                let _ = writeln!(out, "family cipher");
                let _ = writeln!(out, "v {v}");
                let _ = writeln!(out, "noise {noise}");
                let _ = writeln!(out, "len_min {len_min}");
                let _ = writeln!(out, "len_max {len_max}");
                let _ = writeln!(out, "seed {seed}");
            }
            TaskSpec::Classify { classes, vocab, concentration, len_min, len_max, seed } => {
                let _ = writeln!(out, "family classify");
                let _ = writeln!(out, "classes {classes}");
                let _ = writeln!(out, "vocab {vocab}");
                let _ = writeln!(out, "concentration {concentration}");
                let _ = writeln!(out, "len_min {len_min}");
                let _ = writeln!(out, "len_max {len_max}");
                let _ = writeln!(out, "seed {seed}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TaskSpec> {
        let mut fields = std::collections::BTreeMap::new();
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::Parse("empty task manifest".into()))?;
        if magic.trim() != "dsl-task v1" {
            return Err(Error::Parse(format!("bad task manifest header '{magic}'")));
        }
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad manifest line '{line}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |key: &str| -> Result<String> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("missing manifest key '{key}'")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        let real = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        let seed = |key: &str| -> Result<u64> {
            get(key)?.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        match get("family")?.as_str() {
            "tabular" => Ok(TaskSpec::Tabular {
                vx: num("vx")?,
                vy: num("vy")?,
                concentration: real("concentration")?,
                seed: seed("seed")?,
            }),
            "cipher" => Ok(TaskSpec::Cipher {
                v: num("v")?,
                noise: real("noise")?,
                len_min: num("len_min")?,
                len_max: num("len_max")?,
                seed: seed("seed")?,
            }),
            "classify" => Ok(TaskSpec::Classify {
                classes: num("classes")?,
                vocab: num("vocab")?,
                concentration: real("concentration")?,
                len_min: num("len_min")?,
                len_max: num("len_max")?,
                seed: seed("seed")?,
            }),
            other => Err(Error::Parse(format!("unknown task family '{other}'"))),
        }
    }
}

impl Task {
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<SamplePair>> {
        if n == 0 {
            return Err(Error::NoData);
        }
        match self {
            Task::Tabular(j) => sample_tabular(j, n, rng),
            Task::Cipher(c) => c.sample(n, rng),
            Task::Classify(c) => c.sample(n, rng),
        }
    }

    pub fn input_alphabet(&self) -> Alphabet {
        match self {
            Task::Tabular(j) => j.input_alphabet(),
            Task::Cipher(c) => c.alphabet(),
            Task::Classify(c) => c.sentence_alphabet(),
        }
    }

    pub fn output_alphabet(&self) -> Alphabet {
        match self {
            Task::Tabular(j) => j.output_alphabet(),
            Task::Cipher(c) => c.alphabet(),
            Task::Classify(c) => c.label_alphabet(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dirichlet_joint_is_a_distribution() {
        let mut rng = Rng::new(4);
        let j = gen_tabular_joint(5, 7, 0.5, &mut rng).unwrap();
        let total: f64 = (0..5).map(|x| (0..7).map(|y| j.prob(x, y)).sum::<f64>()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!((0..5).all(|x| (0..7).all(|y| j.prob(x, y) > 0.0)));
    }

    #[test]
    fn huge_concentration_is_near_uniform() {
        let mut rng = Rng::new(11);
        let j = gen_tabular_joint(4, 4, 1e6, &mut rng).unwrap();
        let cells: Vec<f64> = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).map(|(x, y)| j.prob(x, y)).collect();
        let max = cells.iter().copied().fold(f64::MIN, f64::max);
        let min = cells.iter().copied().fold(f64::MAX, f64::min);
        assert!(max - min < 0.01, "spread {}", max - min);
    }

    #[test]
    fn joint_generation_deterministic() {
        let make = || {
            let mut rng = Rng::new(9);
            gen_tabular_joint(3, 3, 0.5, &mut rng).unwrap()
        };
        let (a, b) = (make(), make());
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(a.prob(x, y).to_bits(), b.prob(x, y).to_bits());
            }
        }
    }

    #[test]
    fn true_conditional_of_uniform_2x2() {
        let j = TabularJoint::new(2, 2, vec![0.25; 4]).unwrap();
        for dir in [Direction::XtoY, Direction::YtoX] {
            let rows = true_conditional(&j, dir).unwrap();
            for row in rows {
                assert_eq!(row, vec![0.5, 0.5]);
            }
        }
    }

    #[test]
    fn true_conditional_hand_value() {
        let j = TabularJoint::new(2, 2, vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let rows = true_conditional(&j, Direction::XtoY).unwrap();
        assert_abs_diff_eq!(rows[0][0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn conditional_times_marginal_reconstructs_joint() {
        let mut rng = Rng::new(21);
        for seed in 0..10u64 {
            let mut r = rng.derive(seed);
            let j = gen_tabular_joint(4, 3, 0.7, &mut r).unwrap();
            let rows = true_conditional(&j, Direction::XtoY).unwrap();
            let px = j.marginal(Direction::XtoY);
            for x in 0..4 {
                for y in 0..3 {
                    assert_abs_diff_eq!(px[x] * rows[x][y], j.prob(x, y), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn kl_zero_at_truth_and_positive_elsewhere() {
        let mut rng = Rng::new(3);
        let j = gen_tabular_joint(4, 4, 0.5, &mut rng).unwrap();
        let truth = true_conditional_model(&j, Direction::XtoY).unwrap();
        let kl = kl_to_truth(&truth, &j, Direction::XtoY).unwrap();
        assert!(kl.abs() <= 1e-12, "kl at truth = {kl}");

        let uniform = TabularSoftmaxModel::new(j.input_alphabet(), j.output_alphabet());
        let kl = kl_to_truth(&uniform, &j, Direction::XtoY).unwrap();
        assert!(kl > 0.0);
    }

    #[test]
    fn kl_uniform_model_matches_direct_summation() {
        let j = TabularJoint::new(2, 2, vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let uniform = TabularSoftmaxModel::new(j.input_alphabet(), j.output_alphabet());
        let got = kl_to_truth(&uniform, &j, Direction::XtoY).unwrap();
        // brute force over all 4 cells: P(x) Σ_y P*(y|x) ln(P*(y|x)/0.5)
        let want = 0.5 * (0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln())
            + 0.5 * (0.4 * (0.4f64 / 0.5).ln() + 0.6 * (0.6f64 / 0.5).ln());
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn kl_non_negative_on_random_pairs() {
        let mut rng = Rng::new(77);
        for i in 0..100u64 {
            let mut r = rng.derive(i);
            let j = gen_tabular_joint(3, 3, 0.5, &mut r).unwrap();
            let mut m = TabularSoftmaxModel::new(j.input_alphabet(), j.output_alphabet());
            for v in m.params_mut().values_mut() {
                *v = r.uniform(-2.0, 2.0);
            }
            let kl = kl_to_truth(&m, &j, Direction::XtoY).unwrap();
            assert!(kl >= -1e-12, "seed {i}: negative KL {kl}");
        }
    }

    #[test]
    fn expected_duality_zero_at_truth_configuration() {
        let mut rng = Rng::new(5);
        let j = gen_tabular_joint(4, 4, 0.5, &mut rng).unwrap();
        let primal = true_conditional_model(&j, Direction::XtoY).unwrap();
        let dual = true_conditional_model(&j, Direction::YtoX).unwrap();
        let mx = j.marginal_model(Direction::XtoY).unwrap();
        let my = j.marginal_model(Direction::YtoX).unwrap();
        let v = exact_expected_duality(&j, &primal, &dual, &mx, &my).unwrap();
        assert!(v <= 1e-10, "expected duality at truth = {v}");
    }

    #[test]
    fn perturbed_logit_shows_positive_expected_duality() {
        let mut rng = Rng::new(5);
        let j = gen_tabular_joint(3, 3, 0.5, &mut rng).unwrap();
        let mut primal = true_conditional_model(&j, Direction::XtoY).unwrap();
        let dual = true_conditional_model(&j, Direction::YtoX).unwrap();
        primal.params_mut().values_mut()[0] += 0.1;
        let mx = j.marginal_model(Direction::XtoY).unwrap();
        let my = j.marginal_model(Direction::YtoX).unwrap();
        let got = exact_expected_duality(&j, &primal, &dual, &mx, &my).unwrap();
        assert!(got > 0.0);

        // brute-force recomputation, straight-line
        let ax = j.input_alphabet();
        let ay = j.output_alphabet();
        let px = j.marginal(Direction::XtoY);
        let py = j.marginal(Direction::YtoX);
        let mut want = 0.0;
        for x in 0..3 {
            for y in 0..3 {
                let lp_p = primal
                    .log_prob(&Item::label(x, ax).unwrap(), &Item::label(y, ay).unwrap())
                    .unwrap();
                let lp_d = dual
                    .log_prob(&Item::label(y, ay).unwrap(), &Item::label(x, ax).unwrap())
                    .unwrap();
                let delta = px[x].ln() + lp_p - py[y].ln() - lp_d;
                want += j.prob(x, y) * delta * delta;
            }
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);

        // swapping roles leaves the expected loss unchanged
        let mut j_swapped_cells = vec![0.0; 9];
        for x in 0..3 {
            for y in 0..3 {
                j_swapped_cells[y * 3 + x] = j.prob(x, y);
            }
        }
        let j_swapped = TabularJoint::new(3, 3, j_swapped_cells).unwrap();
        let swapped =
            exact_expected_duality(&j_swapped, &dual, &primal, &my, &mx).unwrap();
        assert_abs_diff_eq!(got, swapped, epsilon = 1e-12);
    }

    #[test]
    fn cipher_posterior_values() {
        let mut rng = Rng::new(2);
        let task = CipherTask::random(4, 0.3, (3, 6), &mut rng).unwrap();
        let y = Item::new(vec![1, 3], task.alphabet()).unwrap();
        let post = task.posterior(&y).unwrap();
        for (t, row) in post.iter().enumerate() {
            let inv = task.inverse[y.tokens()[t]];
            assert_abs_diff_eq!(row[inv], 0.7, epsilon = 1e-12);
            for (s, &p) in row.iter().enumerate() {
                if s != inv {
                    assert_abs_diff_eq!(p, 0.1, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_cipher_posterior_is_point_mass() {
        let task = CipherTask::new(3, vec![2, 0, 1], 0.0, (1, 4)).unwrap();
        let y = Item::new(vec![2], task.alphabet()).unwrap();
        let post = task.posterior(&y).unwrap();
        assert_eq!(post[0], vec![1.0, 0.0, 0.0]); // π(0) = 2, so π⁻¹(2) = 0
    }

    #[test]
    fn cipher_symbol_frequencies_match_channel() {
        let mut rng = Rng::new(15);
        let task = CipherTask::random(4, 0.3, (4, 8), &mut rng).unwrap();
        let pairs = task.sample(20_000, &mut rng).unwrap();
        let mut kept = 0u64;
        let mut total = 0u64;
        for p in &pairs {
            for (xt, yt) in p.x.tokens().iter().zip(p.y.tokens()) {
                total += 1;
                if *yt == task.permutation[*xt] {
                    kept += 1;
                }
            }
        }
        // binomial: mean 0.7, sigma = sqrt(p(1-p)/n); 10^5-ish positions
        let n = total as f64;
        let freq = kept as f64 / n;
        let sigma = (0.7f64 * 0.3 / n).sqrt();
        assert!(
            (freq - 0.7).abs() <= 3.0 * sigma,
            "fidelity {freq} outside 3 sigma of 0.7 (sigma {sigma})"
        );
    }

    #[test]
    fn cipher_sampling_deterministic() {
        let make = || {
            let mut rng = Rng::new(31);
            let task = CipherTask::random(8, 0.1, (5, 10), &mut rng).unwrap();
            task.sample(10, &mut rng).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn classify_bayes_error_enumeration_matches_monte_carlo() {
        let mut rng = Rng::new(12);
        let task = ClassifyGenerateTask::random(3, 4, 0.8, (1, 3), &mut rng).unwrap();
        let exact = task.bayes_error_enumerated();
        let mc = task.bayes_error_monte_carlo(60_000, &mut rng).unwrap();
        assert!(
            (exact - mc).abs() <= 0.02,
            "enumerated {exact} vs monte carlo {mc}"
        );
    }

    #[test]
    fn classify_sample_shapes() {
        let mut rng = Rng::new(3);
        let task = ClassifyGenerateTask::random(4, 6, 1.0, (2, 5), &mut rng).unwrap();
        let pairs = task.sample(50, &mut rng).unwrap();
        for p in pairs {
            assert!(p.x.len() >= 2 && p.x.len() <= 5);
            assert_eq!(p.y.len(), 1);
            assert!(p.y.tokens()[0] < 4);
        }
    }

    #[test]
    fn task_manifest_round_trip() {
        let specs = [
            TaskSpec::Tabular { vx: 8, vy: 8, concentration: 0.5, seed: 7 },
            TaskSpec::Cipher { v: 8, noise: 0.1, len_min: 5, len_max: 10, seed: 3 },
            TaskSpec::Classify {
                classes: 4,
                vocab: 12,
                concentration: 1.0,
                len_min: 3,
                len_max: 8,
                seed: 5,
            },
        ];
        for spec in specs {
            let text = spec.to_text();
            assert_eq!(TaskSpec::from_text(&text).unwrap(), spec);
        }
    }

    #[test]
    fn zero_marginal_is_unsupported() {
        let j = TabularJoint::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            true_conditional(&j, Direction::XtoY),
            Err(Error::UnsupportedInput(_))
        ));
    }
}
