//! Linear softmax classifier over bag-of-tokens features: scores are
//! affine in the token-count feature vector, outputs are length-1 class
//! labels.

use crate::data::{log_sum_exp, Alphabet, Item};
use crate::error::{Error, Result};
use crate::models::{ConditionalModel, Gradient, ParamLayout, ParamVector};

#[derive(Clone, Debug)]
pub struct LinearSoftmaxModel {
    input_alphabet: Alphabet,  // feature dim = input alphabet size
    output_alphabet: Alphabet, // K classes
    params: ParamVector,       // "weight": feature_dim × K, "bias": K
}

impl LinearSoftmaxModel {
    pub fn new(input_alphabet: Alphabet, output_alphabet: Alphabet) -> Self {
        let f = input_alphabet.size();
        let k = output_alphabet.size();
        let layout = ParamLayout::new(&[("weight", f * k), ("bias", k)]);
        LinearSoftmaxModel { input_alphabet, output_alphabet, params: ParamVector::zeros(layout) }
    }

    pub fn from_values(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        values: Vec<f64>,
    ) -> Result<Self> {
        let f = input_alphabet.size();
        let k = output_alphabet.size();
        let layout = ParamLayout::new(&[("weight", f * k), ("bias", k)]);
        Ok(LinearSoftmaxModel {
            input_alphabet,
            output_alphabet,
            params: ParamVector::new(layout, values)?,
        })
    }

    /// Weights drawn uniform in [-scale, scale]; biases start at zero.
    pub fn init(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        scale: f64,
        rng: &mut crate::data::Rng,
    ) -> Self {
        let mut model = Self::new(input_alphabet, output_alphabet);
        let weight_range = model.params.layout().range("weight").unwrap();
        for v in &mut model.params.values_mut()[weight_range] {
            *v = rng.uniform(-scale, scale);
        }
        model
    }

    pub fn feature_dim(&self) -> usize {
        self.input_alphabet.size()
    }

    pub fn classes(&self) -> usize {
        self.output_alphabet.size()
    }

    /// Bag-of-tokens counts.
    fn features(&self, input: &Item) -> Result<Vec<f64>> {
        if input.alphabet() != self.input_alphabet {
            return Err(Error::AlphabetMismatch(format!(
                "input alphabet size {} vs model {}",
                input.alphabet().size(),
                self.input_alphabet.size()
            )));
        }
        let mut feats = vec![0.0; self.feature_dim()];
        for &t in input.tokens() {
            feats[t] += 1.0;
        }
        Ok(feats)
    }

    fn class_of(&self, output: &Item) -> Result<usize> {
        if output.alphabet() != self.output_alphabet || output.len() != 1 {
            return Err(Error::AlphabetMismatch(format!(
                "expected a single class label in [0, {})",
                self.classes()
            )));
        }
        Ok(output.tokens()[0])
    }

    fn scores(&self, feats: &[f64]) -> Vec<f64> {
        let k = self.classes();
        let weight = self.params.block("weight").unwrap();
        let bias = self.params.block("bias").unwrap();
        let mut scores = bias.to_vec();
        for (f, &feat) in feats.iter().enumerate() {
            if feat != 0.0 {
                for (j, s) in scores.iter_mut().enumerate() {
                    *s += feat * weight[f * k + j];
                }
            }
        }
        scores
    }

    /// log-probabilities of every class for `input`.
    pub fn class_log_probs(&self, input: &Item) -> Result<Vec<f64>> {
        let scores = self.scores(&self.features(input)?);
        let lse = log_sum_exp(&scores)?;
        Ok(scores.iter().map(|s| s - lse).collect())
    }
}

impl ConditionalModel for LinearSoftmaxModel {
    fn input_alphabet(&self) -> Alphabet {
        self.input_alphabet
    }

    fn output_alphabet(&self) -> Alphabet {
        self.output_alphabet
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn log_prob(&self, input: &Item, output: &Item) -> Result<f64> {
        let y = self.class_of(output)?;
        Ok(self.class_log_probs(input)?[y])
    }

    fn grad_log_prob(&self, input: &Item, output: &Item) -> Result<Gradient> {
        let y = self.class_of(output)?;
        let feats = self.features(input)?;
        let probs: Vec<f64> =
            self.class_log_probs(input)?.iter().map(|lp| lp.exp()).collect();
        let k = self.classes();
        let mut grad = vec![0.0; self.params.len()];
        let weight_off = self.params.layout().range("weight").unwrap().start;
        let bias_off = self.params.layout().range("bias").unwrap().start;
        for j in 0..k {
            let delta = if j == y { 1.0 - probs[j] } else { -probs[j] };
            grad[bias_off + j] = delta;
            for (f, &feat) in feats.iter().enumerate() {
                if feat != 0.0 {
                    grad[weight_off + f * k + j] = feat * delta;
                }
            }
        }
        Ok(grad)
    }

    fn decode(&self, input: &Item, _beam_width: usize) -> Result<Item> {
        let scores = self.scores(&self.features(input)?);
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = j;
            }
        }
        Item::label(best, self.output_alphabet)
    }
}
