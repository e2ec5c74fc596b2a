//! Parameterized conditional models P(output|input; θ) with exact
//! log-likelihoods, analytic gradients, decoding, and a finite-difference
//! gradient-check harness.
//!
//! Three families are provided: [`TabularSoftmaxModel`] over enumerable
//! length-1 item spaces, [`LinearSoftmaxModel`] for bag-of-tokens
//! classification, and [`RecurrentTransducerModel`] for sequence
//! transduction. All expose gradients as flat vectors aligned with their
//! [`ParamVector`] so one optimizer path serves every family.

mod linear;
mod recurrent;
mod tabular;

pub use linear::LinearSoftmaxModel;
pub use recurrent::RecurrentTransducerModel;
pub use tabular::TabularSoftmaxModel;

use std::fmt::Write as _;
use std::ops::Range;

use crate::data::{Alphabet, Item};
use crate::error::{Error, Result};

/// Flat gradient aligned with a model's [`ParamVector`].
pub type Gradient = Vec<f64>;

/// Named blocks mapping into a flat parameter vector; fixed at model
/// construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<(String, Range<usize>)>,
}

impl ParamLayout {
    pub fn new(blocks: &[(&str, usize)]) -> Self {
        let mut offset = 0;
        let blocks = blocks
            .iter()
            .map(|(name, len)| {
                let range = offset..offset + len;
                offset += len;
                (name.to_string(), range)
            })
            .collect();
        ParamLayout { blocks }
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map(|(_, r)| r.end).unwrap_or(0)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.blocks.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }
}

/// Flat parameter vector with a block layout descriptor. All entries are
/// finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.total()];
        ParamVector { layout, values }
    }

    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "layout expects {} values, got {}",
                layout.total(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("parameter vector has non-finite entries".into()));
        }
        Ok(ParamVector { layout, values })
    }

    /// Single anonymous block, for free-standing vectors.
    pub fn unnamed(values: Vec<f64>) -> Self {
        let layout = ParamLayout::new(&[("params", values.len())]);
        ParamVector { layout, values }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    /// Overwrites all values, keeping the layout.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "assign expects {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }
}

/// A parameterized conditional distribution with exact log-likelihood,
/// analytic gradient, and decoding.
pub trait ConditionalModel {
    fn input_alphabet(&self) -> Alphabet;
    fn output_alphabet(&self) -> Alphabet;
    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;

    /// log P(output|input; θ), exact, always <= 0 up to rounding.
    fn log_prob(&self, input: &Item, output: &Item) -> Result<f64>;

    /// ∂ log P(output|input; θ) / ∂θ as a flat vector aligned with
    /// [`ConditionalModel::params`].
    fn grad_log_prob(&self, input: &Item, output: &Item) -> Result<Gradient>;

    /// Highest-probability output. `beam_width` = 1 is greedy; on
    /// enumerable output spaces every width equals the exhaustive argmax.
    /// Ties break toward the lowest item index.
    fn decode(&self, input: &Item, beam_width: usize) -> Result<Item>;

    /// Whether the model predicts an explicit termination symbol, i.e.
    /// an output of length L is scored over L + 1 events.
    fn predicts_eos(&self) -> bool {
        false
    }
}

/// Central finite-difference approximation of `grad_log_prob`:
/// (L(θ+h·e_i) - L(θ-h·e_i)) / (2h) per coordinate.
pub fn finite_diff_grad<M: ConditionalModel + Clone>(
    model: &M,
    input: &Item,
    output: &Item,
    h: f64,
) -> Result<Gradient> {
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = model.clone();
    let dim = probe.params().len();
    let mut grad = vec![0.0; dim];
    for i in 0..dim {
        let base = probe.params().values()[i];
        probe.params_mut().values_mut()[i] = base + h;
        let plus = probe.log_prob(input, output)?;
        probe.params_mut().values_mut()[i] = base - h;
        let minus = probe.log_prob(input, output)?;
        probe.params_mut().values_mut()[i] = base;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "perturbed log-likelihood not finite at coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// max over cases of ‖analytic - finite-difference‖∞ / (1 + ‖fd‖∞).
pub fn max_grad_check_error<M: ConditionalModel + Clone>(
    model: &M,
    cases: &[(Item, Item)],
    h: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (input, output) in cases {
        let analytic = model.grad_log_prob(input, output)?;
        let fd = finite_diff_grad(model, input, output, h)?;
        let max_abs_diff = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let fd_inf = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_abs_diff / (1.0 + fd_inf));
    }
    Ok(worst)
}

/// Runtime-dispatched model, the form configs and serialized files use.
#[derive(Clone, Debug)]
pub enum Model {
    Tabular(TabularSoftmaxModel),
    Linear(LinearSoftmaxModel),
    Recurrent(RecurrentTransducerModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Tabular(_) => "tabular",
            Model::Linear(_) => "linear",
            Model::Recurrent(_) => "recurrent",
        }
    }

    /// Serializes to the model text format; the decimal rendering
    /// round-trips bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dsl-model v1");
        let _ = writeln!(out, "family {}", self.family());
        let _ = writeln!(out, "input_alphabet {}", self.input_alphabet().size());
        let _ = writeln!(out, "output_alphabet {}", self.output_alphabet().size());
        if let Model::Recurrent(m) = self {
            let _ = writeln!(out, "embed {}", m.embed_dim());
            let _ = writeln!(out, "hidden {}", m.hidden_dim());
        }
        if let Model::Linear(m) = self {
            let _ = writeln!(out, "feature_dim {}", m.feature_dim());
        }
        let _ = writeln!(out, "params {}", self.params().len());
        for v in self.params().values() {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let mut header = std::collections::BTreeMap::new();
        let mut values = Vec::new();
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::Parse("empty model file".into()))?;
        if magic.trim() != "dsl-model v1" {
            return Err(Error::Parse(format!("bad model header '{magic}'")));
        }
        let mut n_params = None;
        for line in lines.by_ref() {
            let (key, val) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad model header line '{line}'")))?;
            if key == "params" {
                n_params =
                    Some(val.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
                break;
            }
            header.insert(key.to_string(), val.to_string());
        }
        let n_params = n_params.ok_or_else(|| Error::Parse("missing params count".into()))?;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad parameter '{line}': {e}")))?,
            );
        }
        if values.len() != n_params {
            return Err(Error::Parse(format!(
                "expected {n_params} parameters, found {}",
                values.len()
            )));
        }
        let get = |key: &str| -> Result<usize> {
            header
                .get(key)
                .ok_or_else(|| Error::Parse(format!("missing model header key '{key}'")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(e.to_string()))
        };
        let input = Alphabet::new(get("input_alphabet")?)?;
        let output = Alphabet::new(get("output_alphabet")?)?;
        let family = header
            .get("family")
            .ok_or_else(|| Error::Parse("missing model family".into()))?;
        match family.as_str() {
            "tabular" => Ok(Model::Tabular(TabularSoftmaxModel::from_values(input, output, values)?)),
            "linear" => Ok(Model::Linear(LinearSoftmaxModel::from_values(input, output, values)?)),
            "recurrent" => Ok(Model::Recurrent(RecurrentTransducerModel::from_values(
                input,
                output,
                get("embed")?,
                get("hidden")?,
                values,
            )?)),
            other => Err(Error::Parse(format!("unknown model family '{other}'"))),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        Model::from_text(&std::fs::read_to_string(path)?)
    }
}

impl ConditionalModel for Model {
    fn input_alphabet(&self) -> Alphabet {
        match self {
            Model::Tabular(m) => m.input_alphabet(),
            Model::Linear(m) => m.input_alphabet(),
            Model::Recurrent(m) => m.input_alphabet(),
        }
    }

    fn output_alphabet(&self) -> Alphabet {
        match self {
            Model::Tabular(m) => m.output_alphabet(),
            Model::Linear(m) => m.output_alphabet(),
            Model::Recurrent(m) => m.output_alphabet(),
        }
    }

    fn params(&self) -> &ParamVector {
        match self {
            Model::Tabular(m) => m.params(),
            Model::Linear(m) => m.params(),
            Model::Recurrent(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            Model::Tabular(m) => m.params_mut(),
            Model::Linear(m) => m.params_mut(),
            Model::Recurrent(m) => m.params_mut(),
        }
    }

    fn log_prob(&self, input: &Item, output: &Item) -> Result<f64> {
        match self {
            Model::Tabular(m) => m.log_prob(input, output),
            Model::Linear(m) => m.log_prob(input, output),
            Model::Recurrent(m) => m.log_prob(input, output),
        }
    }

    fn grad_log_prob(&self, input: &Item, output: &Item) -> Result<Gradient> {
        match self {
            Model::Tabular(m) => m.grad_log_prob(input, output),
            Model::Linear(m) => m.grad_log_prob(input, output),
            Model::Recurrent(m) => m.grad_log_prob(input, output),
        }
    }

    fn decode(&self, input: &Item, beam_width: usize) -> Result<Item> {
        match self {
            Model::Tabular(m) => m.decode(input, beam_width),
            Model::Linear(m) => m.decode(input, beam_width),
            Model::Recurrent(m) => m.decode(input, beam_width),
        }
    }

    fn predicts_eos(&self) -> bool {
        match self {
            Model::Tabular(m) => m.predicts_eos(),
            Model::Linear(m) => m.predicts_eos(),
            Model::Recurrent(m) => m.predicts_eos(),
        }
    }
}
