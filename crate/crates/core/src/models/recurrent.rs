//! Sequence-to-sequence transducer with a single-layer tanh recurrence
//! on both sides and hand-written backpropagation through time.
//!
//! The encoder consumes the input right-to-left and its final hidden
//! state becomes a fixed-length context vector; the decoder receives
//! that context at every step (and as its initial state) and predicts
//! the output autoregressively, terminated by an explicit EOS symbol.
//! P(y|x) therefore factorizes as Π_t P(y_t | y_<t, x) · P(EOS | y, x),
//! with every step's distribution normalizing over `output ∪ {EOS}`.

use crate::data::{log_sum_exp, Alphabet, Item};
use crate::error::{Error, Result};
use crate::models::{ConditionalModel, Gradient, ParamLayout, ParamVector};

#[derive(Clone, Debug)]
pub struct RecurrentTransducerModel {
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
    embed: usize,
    hidden: usize,
    params: ParamVector,
}

/// Cached block offsets into the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Offsets {
    enc_embed: usize,
    enc_in: usize,
    enc_rec: usize,
    enc_bias: usize,
    dec_embed: usize,
    dec_in: usize,
    dec_rec: usize,
    dec_ctx: usize,
    dec_bias: usize,
    out_w: usize,
    out_bias: usize,
}

fn layout(vx: usize, vy: usize, d: usize, h: usize) -> ParamLayout {
    let out = vy + 1; // payload symbols + EOS
    ParamLayout::new(&[
        ("enc_embed", vx * d),
        ("enc_in", d * h),
        ("enc_rec", h * h),
        ("enc_bias", h),
        ("dec_embed", (vy + 1) * d), // payload symbols + BOS
        ("dec_in", d * h),
        ("dec_rec", h * h),
        ("dec_ctx", h * h),
        ("dec_bias", h),
        ("out_w", h * out),
        ("out_bias", out),
    ])
}

/// Everything the backward pass needs from one forward evaluation.
struct Forward {
    /// input token ids in consumption order (right-to-left)
    enc_tokens: Vec<usize>,
    /// hidden state after each encoder step
    enc_states: Vec<Vec<f64>>,
    /// decoder embedding row consumed at each step (BOS, y_0, ..)
    dec_inputs: Vec<usize>,
    /// decoder state at each step
    dec_states: Vec<Vec<f64>>,
    /// per-step log-softmax over output ∪ {EOS}
    dec_log_probs: Vec<Vec<f64>>,
    /// predicted symbol per step (y tokens then EOS)
    targets: Vec<usize>,
    log_prob: f64,
}

impl RecurrentTransducerModel {
    pub fn new(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        embed: usize,
        hidden: usize,
    ) -> Self {
        let layout = layout(input_alphabet.size(), output_alphabet.size(), embed, hidden);
        RecurrentTransducerModel {
            input_alphabet,
            output_alphabet,
            embed,
            hidden,
            params: ParamVector::zeros(layout),
        }
    }

    pub fn from_values(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        embed: usize,
        hidden: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let layout = layout(input_alphabet.size(), output_alphabet.size(), embed, hidden);
        Ok(RecurrentTransducerModel {
            input_alphabet,
            output_alphabet,
            embed,
            hidden,
            params: ParamVector::new(layout, values)?,
        })
    }

    /// Weights drawn uniform in [-scale, scale]; bias blocks start at
    /// zero.
    pub fn init(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        embed: usize,
        hidden: usize,
        scale: f64,
        rng: &mut crate::data::Rng,
    ) -> Self {
        let mut model = Self::new(input_alphabet, output_alphabet, embed, hidden);
        let ranges: Vec<_> = model
            .params
            .layout()
            .blocks()
            .filter(|(name, _)| !name.ends_with("bias"))
            .map(|(_, r)| r)
            .collect();
        for r in ranges {
            for v in &mut model.params.values_mut()[r] {
                *v = rng.uniform(-scale, scale);
            }
        }
        model
    }

    pub fn embed_dim(&self) -> usize {
        self.embed
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> Offsets {
        let r = |name: &str| self.params.layout().range(name).unwrap().start;
        Offsets {
            enc_embed: r("enc_embed"),
            enc_in: r("enc_in"),
            enc_rec: r("enc_rec"),
            enc_bias: r("enc_bias"),
            dec_embed: r("dec_embed"),
            dec_in: r("dec_in"),
            dec_rec: r("dec_rec"),
            dec_ctx: r("dec_ctx"),
            dec_bias: r("dec_bias"),
            out_w: r("out_w"),
            out_bias: r("out_bias"),
        }
    }

    fn bos_row(&self) -> usize {
        self.output_alphabet.size()
    }

    fn eos_index(&self) -> usize {
        self.output_alphabet.size()
    }

    fn check_pair(&self, input: &Item, output: &Item) -> Result<()> {
        if input.alphabet() != self.input_alphabet {
            return Err(Error::AlphabetMismatch(format!(
                "input alphabet size {} vs model {}",
                input.alphabet().size(),
                self.input_alphabet.size()
            )));
        }
        if output.alphabet() != self.output_alphabet {
            return Err(Error::AlphabetMismatch(format!(
                "output alphabet size {} vs model {}",
                output.alphabet().size(),
                self.output_alphabet.size()
            )));
        }
        Ok(())
    }

    /// out[o] += Σ_i in[i] · W[i·out_dim + o]
    fn affine(w: &[f64], input: &[f64], out: &mut [f64]) {
        let out_dim = out.len();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in row.iter().enumerate() {
                out[o] += x * wv;
            }
        }
    }

    /// One encoder step: tanh(enc_in·e[tok] + enc_rec·prev + enc_bias).
    fn encoder_step(&self, tok: usize, prev: &[f64]) -> Vec<f64> {
        let v = self.params.values();
        let off = self.offsets();
        let (d, h) = (self.embed, self.hidden);
        let mut act: Vec<f64> = v[off.enc_bias..off.enc_bias + h].to_vec();
        let e = &v[off.enc_embed + tok * d..off.enc_embed + (tok + 1) * d];
        Self::affine(&v[off.enc_in..off.enc_in + d * h], e, &mut act);
        Self::affine(&v[off.enc_rec..off.enc_rec + h * h], prev, &mut act);
        act.iter().map(|a| a.tanh()).collect()
    }

    /// Encoder over the whole input, right-to-left; returns the state
    /// sequence (the last entry is the context vector).
    fn encode(&self, input: &Item) -> (Vec<usize>, Vec<Vec<f64>>) {
        let tokens: Vec<usize> = input.tokens().iter().rev().copied().collect();
        let mut states = Vec::with_capacity(tokens.len());
        let mut prev = vec![0.0; self.hidden];
        for &tok in &tokens {
            let next = self.encoder_step(tok, &prev);
            states.push(next.clone());
            prev = next;
        }
        (tokens, states)
    }

    /// One decoder step: tanh(dec_in·e[row] + dec_rec·prev + dec_ctx·c
    /// + dec_bias).
    fn decoder_step(&self, in_row: usize, prev: &[f64], context: &[f64]) -> Vec<f64> {
        let v = self.params.values();
        let off = self.offsets();
        let (d, h) = (self.embed, self.hidden);
        let mut act: Vec<f64> = v[off.dec_bias..off.dec_bias + h].to_vec();
        let e = &v[off.dec_embed + in_row * d..off.dec_embed + (in_row + 1) * d];
        Self::affine(&v[off.dec_in..off.dec_in + d * h], e, &mut act);
        Self::affine(&v[off.dec_rec..off.dec_rec + h * h], prev, &mut act);
        Self::affine(&v[off.dec_ctx..off.dec_ctx + h * h], context, &mut act);
        act.iter().map(|a| a.tanh()).collect()
    }

    /// log-softmax over output ∪ {EOS} from a decoder state.
    fn output_log_probs(&self, state: &[f64]) -> Vec<f64> {
        let v = self.params.values();
        let off = self.offsets();
        let out = self.output_alphabet.size() + 1;
        let mut logits: Vec<f64> = v[off.out_bias..off.out_bias + out].to_vec();
        Self::affine(&v[off.out_w..off.out_w + self.hidden * out], state, &mut logits);
        let lse = log_sum_exp(&logits).expect("logits non-empty");
        logits.iter().map(|l| l - lse).collect()
    }

    fn forward(&self, input: &Item, output: &Item) -> Result<Forward> {
        self.check_pair(input, output)?;
        let (enc_tokens, enc_states) = self.encode(input);
        let context = enc_states.last().expect("input non-empty").clone();

        // step j consumes dec_inputs[j] and predicts targets[j]
        let mut dec_inputs = vec![self.bos_row()];
        dec_inputs.extend_from_slice(output.tokens());

        let mut targets: Vec<usize> = output.tokens().to_vec();
        targets.push(self.eos_index());

        let mut dec_states = Vec::with_capacity(targets.len());
        let mut dec_log_probs = Vec::with_capacity(targets.len());
        let mut log_prob = 0.0;
        let mut prev = context.clone();
        for (j, &target) in targets.iter().enumerate() {
            let state = self.decoder_step(dec_inputs[j], &prev, &context);
            let lps = self.output_log_probs(&state);
            log_prob += lps[target];
            prev = state.clone();
            dec_states.push(state);
            dec_log_probs.push(lps);
        }
        Ok(Forward { enc_tokens, enc_states, dec_inputs, dec_states, dec_log_probs, targets, log_prob })
    }

    /// Distribution over the next output symbol (payload ∪ EOS) given
    /// the input and an already-emitted prefix.
    pub fn next_token_log_probs(&self, input: &Item, prefix: &[usize]) -> Result<Vec<f64>> {
        if input.alphabet() != self.input_alphabet {
            return Err(Error::AlphabetMismatch("input alphabet".into()));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| !self.output_alphabet.contains(t)) {
            return Err(Error::AlphabetMismatch(format!("prefix token {bad} out of range")));
        }
        let (_, enc_states) = self.encode(input);
        let context = enc_states.last().unwrap().clone();
        let mut state = context.clone();
        let mut in_row = self.bos_row();
        for &tok in prefix {
            state = self.decoder_step(in_row, &state, &context);
            in_row = tok;
        }
        let last = self.decoder_step(in_row, &state, &context);
        Ok(self.output_log_probs(&last))
    }
}

impl ConditionalModel for RecurrentTransducerModel {
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
        Ok(self.forward(input, output)?.log_prob)
    }

    fn grad_log_prob(&self, input: &Item, output: &Item) -> Result<Gradient> {
        let fwd = self.forward(input, output)?;
        let v = self.params.values();
        let off = self.offsets();
        let (d, h) = (self.embed, self.hidden);
        let out = self.output_alphabet.size() + 1;
        let context = fwd.enc_states.last().unwrap();

        let mut grad = vec![0.0; self.params.len()];
        let mut d_context = vec![0.0; h];
        let mut d_state_carry = vec![0.0; h];

        for j in (0..fwd.targets.len()).rev() {
            let state = &fwd.dec_states[j];
            let probs: Vec<f64> = fwd.dec_log_probs[j].iter().map(|lp| lp.exp()).collect();
            // d log p[target] / d logits = onehot(target) - softmax
            let mut d_logits = probs;
            for p in d_logits.iter_mut() {
                *p = -*p;
            }
            d_logits[fwd.targets[j]] += 1.0;

            let mut d_state = d_state_carry.clone();
            for hi in 0..h {
                let row = &v[off.out_w + hi * out..off.out_w + (hi + 1) * out];
                let mut acc = 0.0;
                for (k, &dl) in d_logits.iter().enumerate() {
                    grad[off.out_w + hi * out + k] += state[hi] * dl;
                    acc += row[k] * dl;
                }
                d_state[hi] += acc;
            }
            for (k, &dl) in d_logits.iter().enumerate() {
                grad[off.out_bias + k] += dl;
            }

            // through tanh
            let d_act: Vec<f64> = d_state
                .iter()
                .zip(state)
                .map(|(ds, s)| ds * (1.0 - s * s))
                .collect();
            for hi in 0..h {
                grad[off.dec_bias + hi] += d_act[hi];
            }

            let in_row = fwd.dec_inputs[j];
            let e = &v[off.dec_embed + in_row * d..off.dec_embed + (in_row + 1) * d];
            for dd in 0..d {
                let mut acc = 0.0;
                for hi in 0..h {
                    grad[off.dec_in + dd * h + hi] += e[dd] * d_act[hi];
                    acc += v[off.dec_in + dd * h + hi] * d_act[hi];
                }
                grad[off.dec_embed + in_row * d + dd] += acc;
            }

            let prev: &[f64] = if j > 0 { &fwd.dec_states[j - 1] } else { context };
            let mut d_prev = vec![0.0; h];
            for hi2 in 0..h {
                let mut acc = 0.0;
                for hi in 0..h {
                    grad[off.dec_rec + hi2 * h + hi] += prev[hi2] * d_act[hi];
                    acc += v[off.dec_rec + hi2 * h + hi] * d_act[hi];
                }
                d_prev[hi2] = acc;
            }
            for hi2 in 0..h {
                let mut acc = 0.0;
                for hi in 0..h {
                    grad[off.dec_ctx + hi2 * h + hi] += context[hi2] * d_act[hi];
                    acc += v[off.dec_ctx + hi2 * h + hi] * d_act[hi];
                }
                d_context[hi2] += acc;
            }
            if j > 0 {
                d_state_carry = d_prev;
            } else {
                // the decoder's initial state is the context vector
                for hi in 0..h {
                    d_context[hi] += d_prev[hi];
                }
            }
        }

        // encoder backward, from the context gradient
        let mut d_hidden = d_context;
        for t in (0..fwd.enc_states.len()).rev() {
            let state = &fwd.enc_states[t];
            let d_act: Vec<f64> = d_hidden
                .iter()
                .zip(state)
                .map(|(dh, s)| dh * (1.0 - s * s))
                .collect();
            for hi in 0..h {
                grad[off.enc_bias + hi] += d_act[hi];
            }
            let tok = fwd.enc_tokens[t];
            let e = &v[off.enc_embed + tok * d..off.enc_embed + (tok + 1) * d];
            for dd in 0..d {
                let mut acc = 0.0;
                for hi in 0..h {
                    grad[off.enc_in + dd * h + hi] += e[dd] * d_act[hi];
                    acc += v[off.enc_in + dd * h + hi] * d_act[hi];
                }
                grad[off.enc_embed + tok * d + dd] += acc;
            }
            let mut d_prev = vec![0.0; h];
            if t > 0 {
                let prev = &fwd.enc_states[t - 1];
                for hi2 in 0..h {
                    let mut acc = 0.0;
                    for hi in 0..h {
                        grad[off.enc_rec + hi2 * h + hi] += prev[hi2] * d_act[hi];
                        acc += v[off.enc_rec + hi2 * h + hi] * d_act[hi];
                    }
                    d_prev[hi2] = acc;
                }
            }
            // initial encoder state is zero: no recurrence gradient there
            d_hidden = d_prev;
        }

        Ok(grad)
    }

    fn decode(&self, input: &Item, beam_width: usize) -> Result<Item> {
        if input.alphabet() != self.input_alphabet {
            return Err(Error::AlphabetMismatch("input alphabet".into()));
        }
        let width = beam_width.max(1);
        let max_len = 2 * input.len() + 5;
        let (_, enc_states) = self.encode(input);
        let context = enc_states.last().unwrap().clone();
        let eos = self.eos_index();

        struct Hyp {
            tokens: Vec<usize>,
            state: Vec<f64>,
            next_in: usize,
            score: f64,
            /// follows the locally-greedy choice at every step; kept
            /// alive through pruning so the beam result never falls
            /// below the greedy result
            chain: bool,
        }

        let mut live = vec![Hyp {
            tokens: Vec::new(),
            state: context.clone(),
            next_in: self.bos_row(),
            score: 0.0,
            chain: true,
        }];
        let mut completed: Vec<(Vec<usize>, f64)> = Vec::new();

        while !live.is_empty() {
            let mut candidates: Vec<Hyp> = Vec::new();
            for hyp in &live {
                let state = self.decoder_step(hyp.next_in, &hyp.state, &context);
                let lps = self.output_log_probs(&state);
                let at_cap = hyp.tokens.len() >= max_len;
                let first = hyp.tokens.is_empty();
                if at_cap {
                    // length cap reached: force the EOS continuation
                    completed.push((hyp.tokens.clone(), hyp.score + lps[eos]));
                    continue;
                }
                // greedy continuation of the chain hypothesis; the first
                // step must emit a payload symbol so outputs are non-empty
                let greedy_sym = lps
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !(first && *k == eos))
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(k, _)| k)
                    .unwrap();
                for (k, &lp) in lps.iter().enumerate() {
                    if k == eos {
                        // a chain that greedily terminates lands in the
                        // completed pool like any other hypothesis
                        if !first {
                            completed.push((hyp.tokens.clone(), hyp.score + lp));
                        }
                        continue;
                    }
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(k);
                    candidates.push(Hyp {
                        tokens,
                        state: state.clone(),
                        next_in: k,
                        score: hyp.score + lp,
                        chain: hyp.chain && k == greedy_sym,
                    });
                }
            }
            candidates.sort_by(|a, b| {
                b.score.partial_cmp(&a.score).unwrap().then_with(|| a.tokens.cmp(&b.tokens))
            });
            if candidates.len() > width {
                if let Some(chain_pos) = candidates.iter().position(|c| c.chain) {
                    if chain_pos >= width {
                        candidates.swap(width - 1, chain_pos);
                    }
                }
                candidates.truncate(width);
            }
            live = candidates;
        }

        completed.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        let (tokens, _) = completed.into_iter().next().expect("decode always completes");
        Item::new(tokens, self.output_alphabet)
    }

    fn predicts_eos(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;
    use crate::models::max_grad_check_error;
    use approx::assert_abs_diff_eq;

    fn seeded_model(vx: usize, vy: usize, d: usize, h: usize, seed: u64) -> RecurrentTransducerModel {
        let mut rng = Rng::new(seed);
        RecurrentTransducerModel::init(
            Alphabet::new(vx).unwrap(),
            Alphabet::new(vy).unwrap(),
            d,
            h,
            0.5,
            &mut rng,
        )
    }

    fn item(tokens: &[usize], v: usize) -> Item {
        Item::new(tokens.to_vec(), Alphabet::new(v).unwrap()).unwrap()
    }

    /// Straight-line recomputation of log P(y|x), kept deliberately
    /// independent of the model's own forward code: it reads raw blocks
    /// through the layout and spells out every loop.
    fn oracle_log_prob(m: &RecurrentTransducerModel, x: &Item, y: &Item) -> f64 {
        let p = m.params().values();
        let layout = m.params().layout();
        let b = |name: &str| layout.range(name).unwrap();
        let (d, h) = (m.embed_dim(), m.hidden_dim());
        let vy = m.output_alphabet().size();

        let enc_embed = &p[b("enc_embed")];
        let enc_in = &p[b("enc_in")];
        let enc_rec = &p[b("enc_rec")];
        let enc_bias = &p[b("enc_bias")];
        let dec_embed = &p[b("dec_embed")];
        let dec_in = &p[b("dec_in")];
        let dec_rec = &p[b("dec_rec")];
        let dec_ctx = &p[b("dec_ctx")];
        let dec_bias = &p[b("dec_bias")];
        let out_w = &p[b("out_w")];
        let out_bias = &p[b("out_bias")];

        // encoder, right-to-left
        let mut hidden = vec![0.0f64; h];
        for &tok in x.tokens().iter().rev() {
            let mut next = vec![0.0f64; h];
            for hi in 0..h {
                let mut a = enc_bias[hi];
                for dd in 0..d {
                    a += enc_embed[tok * d + dd] * enc_in[dd * h + hi];
                }
                for h2 in 0..h {
                    a += hidden[h2] * enc_rec[h2 * h + hi];
                }
                next[hi] = a.tanh();
            }
            hidden = next;
        }
        let context = hidden.clone();

        // decoder inputs: BOS then y_<t; targets: y then EOS
        let mut inputs = vec![vy]; // BOS row
        inputs.extend_from_slice(y.tokens());
        let mut targets: Vec<usize> = y.tokens().to_vec();
        targets.push(vy); // EOS index

        let mut state = context.clone();
        let mut total = 0.0;
        for step in 0..targets.len() {
            let row = inputs[step];
            let mut next = vec![0.0f64; h];
            for hi in 0..h {
                let mut a = dec_bias[hi];
                for dd in 0..d {
                    a += dec_embed[row * d + dd] * dec_in[dd * h + hi];
                }
                for h2 in 0..h {
                    a += state[h2] * dec_rec[h2 * h + hi];
                }
                for h2 in 0..h {
                    a += context[h2] * dec_ctx[h2 * h + hi];
                }
                next[hi] = a.tanh();
            }
            state = next;
            let mut logits = vec![0.0f64; vy + 1];
            for k in 0..vy + 1 {
                let mut a = out_bias[k];
                for hi in 0..h {
                    a += state[hi] * out_w[hi * (vy + 1) + k];
                }
                logits[k] = a;
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += logits[targets[step]] - lse;
        }
        total
    }

    #[test]
    fn log_prob_matches_straight_line_recomputation() {
        let m = seeded_model(5, 4, 3, 6, 13);
        let x = item(&[0, 2, 4, 1], 5);
        let y = item(&[3, 0, 1], 4);
        let got = m.log_prob(&x, &y).unwrap();
        let want = oracle_log_prob(&m, &x, &y);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        assert!(got < 0.0);
    }

    #[test]
    fn per_step_distributions_normalize() {
        let m = seeded_model(4, 3, 3, 5, 21);
        let x = item(&[1, 3, 0], 4);
        for prefix in [vec![], vec![2], vec![2, 0], vec![1, 1, 1]] {
            let lps = m.next_token_log_probs(&x, &prefix).unwrap();
            assert_eq!(lps.len(), 4); // 3 payload + EOS
            let total: f64 = lps.iter().map(|lp| lp.exp()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn chain_rule_factorization() {
        // log P(y|x) must equal the sum of next-token log-probs along y
        // plus the EOS step.
        let m = seeded_model(4, 3, 3, 5, 33);
        let x = item(&[2, 0], 4);
        let y = vec![1, 2, 0];
        let mut total = 0.0;
        for t in 0..y.len() {
            total += m.next_token_log_probs(&x, &y[..t]).unwrap()[y[t]];
        }
        total += m.next_token_log_probs(&x, &y).unwrap()[3];
        let direct = m.log_prob(&x, &item(&y, 3)).unwrap();
        assert_abs_diff_eq!(direct, total, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_on_seeded_cases() {
        let mut rng = Rng::new(13);
        let mut worst: f64 = 0.0;
        for trial in 0..10 {
            let m = seeded_model(5, 4, 3, 6, 100 + trial);
            let x_len = 1 + rng.next_index(6);
            let y_len = 1 + rng.next_index(5);
            let x_tokens: Vec<usize> = (0..x_len).map(|_| rng.next_index(5)).collect();
            let y_tokens: Vec<usize> = (0..y_len).map(|_| rng.next_index(4)).collect();
            let case = vec![(item(&x_tokens, 5), item(&y_tokens, 4))];
            worst = worst.max(max_grad_check_error(&m, &case, 1e-5).unwrap());
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn beam_is_never_worse_than_greedy() {
        let mut rng = Rng::new(7);
        for trial in 0..100 {
            let m = seeded_model(4, 4, 2, 4, 500 + trial % 7);
            let len = 1 + rng.next_index(6);
            let tokens: Vec<usize> = (0..len).map(|_| rng.next_index(4)).collect();
            let x = item(&tokens, 4);
            let greedy = m.decode(&x, 1).unwrap();
            let beam = m.decode(&x, 4).unwrap();
            let lp_greedy = m.log_prob(&x, &greedy).unwrap();
            let lp_beam = m.log_prob(&x, &beam).unwrap();
            assert!(
                lp_beam >= lp_greedy - 1e-12,
                "trial {trial}: beam {lp_beam} < greedy {lp_greedy}"
            );
        }
    }

    #[test]
    fn decode_respects_length_cap() {
        let m = seeded_model(3, 3, 2, 4, 77);
        let x = item(&[0, 1], 3);
        let out = m.decode(&x, 2).unwrap();
        assert!(out.len() <= 2 * x.len() + 5);
    }

    #[test]
    fn init_biases_zero_weights_bounded_and_deterministic() {
        let a = seeded_model(4, 4, 3, 5, 42);
        let b = seeded_model(4, 4, 3, 5, 42);
        assert_eq!(a.params().values(), b.params().values());
        for name in ["enc_bias", "dec_bias", "out_bias"] {
            assert!(a.params().block(name).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(a.params().block("enc_rec").unwrap().iter().all(|v| v.abs() <= 0.5));
        assert!(a.params().block("enc_rec").unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_foreign_alphabets() {
        let m = seeded_model(4, 4, 2, 4, 1);
        let bad_x = item(&[0], 9);
        let y = item(&[0], 4);
        assert!(m.log_prob(&bad_x, &y).is_err());
        assert!(m.decode(&bad_x, 1).is_err());
    }
}
