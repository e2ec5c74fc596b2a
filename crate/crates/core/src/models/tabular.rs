//! Softmax model over enumerable length-1 item spaces: one logit per
//! (input symbol, output symbol) pair, softmax-normalized per input row.
//! Small enough that every oracle can enumerate it exactly.

use crate::data::{log_sum_exp, Alphabet, Item};
use crate::error::{Error, Result};
use crate::models::{ConditionalModel, Gradient, ParamLayout, ParamVector};

#[derive(Clone, Debug)]
pub struct TabularSoftmaxModel {
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
    params: ParamVector, // block "logits": Vx × Vy row-major
}

impl TabularSoftmaxModel {
    /// Fresh model with all-zero logits (uniform conditionals); the
    /// initialization is seed-independent.
    pub fn new(input_alphabet: Alphabet, output_alphabet: Alphabet) -> Self {
        let layout =
            ParamLayout::new(&[("logits", input_alphabet.size() * output_alphabet.size())]);
        TabularSoftmaxModel { input_alphabet, output_alphabet, params: ParamVector::zeros(layout) }
    }

    pub fn from_values(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        values: Vec<f64>,
    ) -> Result<Self> {
        let layout =
            ParamLayout::new(&[("logits", input_alphabet.size() * output_alphabet.size())]);
        Ok(TabularSoftmaxModel {
            input_alphabet,
            output_alphabet,
            params: ParamVector::new(layout, values)?,
        })
    }

    /// Model whose softmax rows reproduce `rows` (a row-stochastic
    /// conditional table): logits are the log-probabilities.
    pub fn from_conditional(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if rows.len() != input_alphabet.size()
            || rows.iter().any(|r| r.len() != output_alphabet.size())
        {
            return Err(Error::ShapeMismatch("conditional table shape".into()));
        }
        if rows.iter().flatten().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(Error::DegenerateLogProb(
                "conditional table entries must be strictly positive".into(),
            ));
        }
        let values = rows.iter().flatten().map(|p| p.ln()).collect();
        Self::from_values(input_alphabet, output_alphabet, values)
    }

    fn symbol(&self, item: &Item, alphabet: Alphabet, side: &str) -> Result<usize> {
        if item.alphabet() != alphabet || item.len() != 1 {
            return Err(Error::AlphabetMismatch(format!(
                "tabular model expects a single {side} symbol in [0, {})",
                alphabet.size()
            )));
        }
        Ok(item.tokens()[0])
    }

    fn row(&self, x: usize) -> &[f64] {
        let vy = self.output_alphabet.size();
        &self.params.values()[x * vy..(x + 1) * vy]
    }

    /// log-probabilities of every output symbol given input `x`.
    pub fn row_log_probs(&self, x: usize) -> Vec<f64> {
        let row = self.row(x);
        let lse = log_sum_exp(row).expect("row is non-empty");
        row.iter().map(|l| l - lse).collect()
    }
}

impl ConditionalModel for TabularSoftmaxModel {
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
        let x = self.symbol(input, self.input_alphabet, "input")?;
        let y = self.symbol(output, self.output_alphabet, "output")?;
        let row = self.row(x);
        Ok(row[y] - log_sum_exp(row)?)
    }

    fn grad_log_prob(&self, input: &Item, output: &Item) -> Result<Gradient> {
        let x = self.symbol(input, self.input_alphabet, "input")?;
        let y = self.symbol(output, self.output_alphabet, "output")?;
        let vy = self.output_alphabet.size();
        let mut grad = vec![0.0; self.params.len()];
        let probs = self.row_log_probs(x);
        for (j, lp) in probs.iter().enumerate() {
            grad[x * vy + j] = -lp.exp();
        }
        grad[x * vy + y] += 1.0;
        Ok(grad)
    }

    fn decode(&self, input: &Item, _beam_width: usize) -> Result<Item> {
        let x = self.symbol(input, self.input_alphabet, "input")?;
        let row = self.row(x);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        Item::label(best, self.output_alphabet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{finite_diff_grad, max_grad_check_error};
    use crate::data::Rng;
    use approx::assert_abs_diff_eq;

    fn alphabets(vx: usize, vy: usize) -> (Alphabet, Alphabet) {
        (Alphabet::new(vx).unwrap(), Alphabet::new(vy).unwrap())
    }

    #[test]
    fn zero_logits_are_uniform() {
        let (ax, ay) = alphabets(3, 4);
        let m = TabularSoftmaxModel::new(ax, ay);
        for x in 0..3 {
            for y in 0..4 {
                let lp = m
                    .log_prob(&Item::label(x, ax).unwrap(), &Item::label(y, ay).unwrap())
                    .unwrap();
                assert_abs_diff_eq!(lp, (0.25f64).ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rows_normalize() {
        let (ax, ay) = alphabets(4, 5);
        let mut m = TabularSoftmaxModel::new(ax, ay);
        let mut rng = Rng::new(3);
        for v in m.params_mut().values_mut() {
            *v = rng.uniform(-3.0, 3.0);
        }
        for x in 0..4 {
            let total: f64 = (0..5)
                .map(|y| {
                    m.log_prob(&Item::label(x, ax).unwrap(), &Item::label(y, ay).unwrap())
                        .unwrap()
                        .exp()
                })
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_is_softmax_identity() {
        let (ax, ay) = alphabets(2, 3);
        let mut m = TabularSoftmaxModel::new(ax, ay);
        m.params_mut().values_mut().copy_from_slice(&[0.3, -0.1, 0.5, 0.0, 0.0, 0.0]);
        let x = Item::label(0, ax).unwrap();
        let y = Item::label(1, ay).unwrap();
        let grad = m.grad_log_prob(&x, &y).unwrap();
        let probs: Vec<f64> = m.row_log_probs(0).iter().map(|lp| lp.exp()).collect();
        assert_abs_diff_eq!(grad[0], -probs[0], epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], 1.0 - probs[1], epsilon = 1e-12);
        assert_abs_diff_eq!(grad[2], -probs[2], epsilon = 1e-12);
        // untouched row stays zero
        assert_eq!(&grad[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (ax, ay) = alphabets(3, 3);
        let mut m = TabularSoftmaxModel::new(ax, ay);
        let mut rng = Rng::new(17);
        for v in m.params_mut().values_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let x = Item::label(2, ax).unwrap();
        let y = Item::label(0, ay).unwrap();
        let analytic = m.grad_log_prob(&x, &y).unwrap();
        let fd = finite_diff_grad(&m, &x, &y, 1e-5).unwrap();
        for (a, b) in analytic.iter().zip(&fd) {
            let rel = (a - b).abs() / (1.0 + b.abs());
            assert!(rel < 1e-6, "analytic {a} vs fd {b}");
        }
    }

    #[test]
    fn fifty_random_triples_pass_grad_check() {
        let (ax, ay) = alphabets(4, 4);
        let mut rng = Rng::new(99);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let mut m = TabularSoftmaxModel::new(ax, ay);
            for v in m.params_mut().values_mut() {
                *v = rng.uniform(-2.0, 2.0);
            }
            let case = vec![(
                Item::label(rng.next_index(4), ax).unwrap(),
                Item::label(rng.next_index(4), ay).unwrap(),
            )];
            worst = worst.max(max_grad_check_error(&m, &case, 1e-5).unwrap());
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn decode_is_argmax_with_low_index_ties() {
        let (ax, ay) = alphabets(2, 3);
        let mut m = TabularSoftmaxModel::new(ax, ay);
        m.params_mut().values_mut().copy_from_slice(&[0.1, 0.9, 0.3, 0.5, 0.5, 0.0]);
        let out = m.decode(&Item::label(0, ax).unwrap(), 1).unwrap();
        assert_eq!(out.tokens(), &[1]);
        // exact tie between outputs 0 and 1 goes to index 0
        let out = m.decode(&Item::label(1, ax).unwrap(), 7).unwrap();
        assert_eq!(out.tokens(), &[0]);
    }

    #[test]
    fn logit_shift_invariance() {
        let (ax, ay) = alphabets(2, 4);
        let mut m = TabularSoftmaxModel::new(ax, ay);
        let mut rng = Rng::new(5);
        for v in m.params_mut().values_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let before: Vec<f64> = (0..4)
            .map(|y| {
                m.log_prob(&Item::label(0, ax).unwrap(), &Item::label(y, ay).unwrap()).unwrap()
            })
            .collect();
        for v in &mut m.params_mut().values_mut()[0..4] {
            *v += 3.7;
        }
        for (y, want) in before.iter().enumerate() {
            let got =
                m.log_prob(&Item::label(0, ax).unwrap(), &Item::label(y, ay).unwrap()).unwrap();
            assert_abs_diff_eq!(got, *want, epsilon = 1e-9);
        }
    }

    #[test]
    fn from_conditional_reproduces_rows() {
        let (ax, ay) = alphabets(2, 2);
        let m = TabularSoftmaxModel::from_conditional(
            ax,
            ay,
            &[vec![0.8, 0.2], vec![0.4, 0.6]],
        )
        .unwrap();
        let lp = m
            .log_prob(&Item::label(0, ax).unwrap(), &Item::label(0, ay).unwrap())
            .unwrap();
        assert_abs_diff_eq!(lp, 0.8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_sequences_and_foreign_alphabets() {
        let (ax, ay) = alphabets(2, 2);
        let m = TabularSoftmaxModel::new(ax, ay);
        let seq = Item::new(vec![0, 1], ax).unwrap();
        assert!(m.log_prob(&seq, &Item::label(0, ay).unwrap()).is_err());
        let foreign = Item::label(0, Alphabet::new(9).unwrap()).unwrap();
        assert!(m.log_prob(&foreign, &Item::label(0, ay).unwrap()).is_err());
    }
}
