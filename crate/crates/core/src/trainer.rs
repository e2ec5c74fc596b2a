//! Joint minibatch training of the primal and dual models with the
//! duality regularizer, the λ = 0 supervised baseline path, and the
//! evaluation metrics both share.
//!
//! Per minibatch the trainer computes
//!
//! ```text
//! G_f = ∇_θxy (1/m) Σ [ℓ₁ + λ_xy·ℓ_duality]
//! G_g = ∇_θyx (1/m) Σ [ℓ₂ + λ_yx·ℓ_duality]
//! ```
//!
//! clips each combined gradient by norm, and applies the two optimizers.
//! Inside G_f the dual model's log-probability is treated as a constant
//! (and vice versa); the marginals are never updated. With both λ at
//! zero the loop is arithmetically identical to independent supervised
//! training, which the baseline arm and several tests rely on.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{Dataset, Rng, SamplePair, Splits};
use crate::duality::{duality_term, lambda_for, LambdaRule};
use crate::error::{Error, Result};
use crate::marginals::MarginalModel;
use crate::models::{ConditionalModel, Gradient};
use crate::optim::{clip_by_norm, OptimizerKind, OptimizerState, PlateauSchedule};
use crate::tasks::Direction;

const SHUFFLE_TAG: u64 = 0x7368_7566;

/// Everything one training run needs to be reproducible.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// minibatch size m
    pub batch_size: usize,
    pub lambda: LambdaRule,
    pub opt_xy: OptimizerKind,
    pub opt_yx: OptimizerKind,
    pub lr_xy: f64,
    pub lr_yx: f64,
    pub clip_xy: f64,
    pub clip_yx: f64,
    pub max_epochs: usize,
    /// validation cadence, in epochs
    pub eval_every: usize,
    pub plateau_patience: usize,
    pub lr_floor: f64,
    /// stop after this many validation evaluations without improvement
    pub stop_patience: usize,
    /// return the checkpoint with the best validation metric rather
    /// than the final parameters
    pub select_best: bool,
    pub seed: u64,
    /// record parameter snapshots after each of the first N optimizer
    /// steps (0 = off)
    pub trace_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lambda: LambdaRule::constant(0.01, 0.01),
            opt_xy: OptimizerKind::Sgd,
            opt_yx: OptimizerKind::Sgd,
            lr_xy: 0.2,
            lr_yx: 0.2,
            clip_xy: 1.0,
            clip_yx: 1.0,
            max_epochs: 200,
            eval_every: 1,
            plateau_patience: 5,
            lr_floor: 1e-6,
            stop_patience: 10,
            select_best: true,
            seed: 0,
            trace_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval cadence must be >= 1".into()));
        }
        if self.clip_xy <= 0.0 || self.clip_yx <= 0.0 {
            return Err(Error::Config("clip norms must be > 0".into()));
        }
        Ok(())
    }
}

/// The two per-example losses ℓ₁ = -log P(y|x) and ℓ₂ = -log P(x|y).
#[derive(Clone, Copy, Debug)]
pub struct LossBundle {
    pub l1: f64,
    pub l2: f64,
}

/// One validation evaluation.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
}

/// The metrics time series a run produces, plus the selected checkpoint
/// summary and optional per-step parameter traces.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub rows: Vec<EvalRow>,
    pub final_metrics: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub trace_primal: Vec<Vec<f64>>,
    pub trace_dual: Vec<Vec<f64>>,
}

impl RunRecord {
    /// CSV with a header row naming every metric column and one row per
    /// validation evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            return "epoch\n".to_string();
        };
        let keys: Vec<&String> = first.metrics.keys().collect();
        let mut header = vec!["epoch".to_string()];
        header.extend(keys.iter().map(|k| k.to_string()));
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let mut fields = vec![row.epoch.to_string()];
            for key in &keys {
                fields.push(format!("{}", row.metrics[*key]));
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

fn check_finite(value: f64, index: usize, what: &str) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { index, detail: format!("{what} = {value}") });
    }
    Ok(value)
}

/// Deterministic epoch shuffle shared by every training path.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed).derive(SHUFFLE_TAG).derive(epoch as u64);
    rng.shuffle(&mut order);
    order
}

fn oriented<'a>(pair: &'a SamplePair, direction: Direction) -> (&'a crate::data::Item, &'a crate::data::Item) {
    match direction {
        Direction::XtoY => (&pair.x, &pair.y),
        Direction::YtoX => (&pair.y, &pair.x),
    }
}

/// Mean per-example negative log-likelihood of one direction.
fn direction_nll<M: ConditionalModel>(
    model: &M,
    pairs: &[SamplePair],
    direction: Direction,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoData);
    }
    let mut total = 0.0;
    for pair in pairs {
        let (input, output) = oriented(pair, direction);
        total += -model.log_prob(input, output)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean per-example ℓ_duality over a dataset.
fn mean_duality<P, D, MX, MY>(
    primal: &P,
    dual: &D,
    marg_x: &MX,
    marg_y: &MY,
    pairs: &[SamplePair],
) -> Result<f64>
where
    P: ConditionalModel,
    D: ConditionalModel,
    MX: MarginalModel,
    MY: MarginalModel,
{
    if pairs.is_empty() {
        return Err(Error::NoData);
    }
    let mut total = 0.0;
    for (idx, pair) in pairs.iter().enumerate() {
        let term = duality_term(
            marg_x.log_prob(&pair.x)?,
            primal.log_prob(&pair.x, &pair.y)?,
            marg_y.log_prob(&pair.y)?,
            dual.log_prob(&pair.y, &pair.x)?,
        )
        .map_err(|e| Error::NonFiniteLoss { index: idx, detail: e.to_string() })?;
        total += term.loss;
    }
    Ok(total / pairs.len() as f64)
}

fn token_accuracy<M: ConditionalModel>(
    model: &M,
    pairs: &[SamplePair],
    direction: Direction,
) -> Result<f64> {
    let mut matched = 0usize;
    let mut total = 0usize;
    for pair in pairs {
        let (input, reference) = oriented(pair, direction);
        let decoded = model.decode(input, 1)?;
        let hits = decoded
            .tokens()
            .iter()
            .zip(reference.tokens())
            .filter(|(a, b)| a == b)
            .count();
        matched += hits;
        total += decoded.len().max(reference.len());
    }
    Ok(matched as f64 / total as f64)
}

/// Full metrics map for one split: the averaged two-direction empirical
/// risk, per-direction NLL / perplexity / bits-per-dimension, greedy
/// token accuracy (and classification error when outputs are single
/// labels), and the mean duality loss.
pub fn evaluate<P, D, MX, MY>(
    primal: &P,
    dual: &D,
    marg_x: &MX,
    marg_y: &MY,
    data: &Dataset,
) -> Result<BTreeMap<String, f64>>
where
    P: ConditionalModel,
    D: ConditionalModel,
    MX: MarginalModel,
    MY: MarginalModel,
{
    let pairs = &data.pairs;
    if pairs.is_empty() {
        return Err(Error::NoData);
    }
    let n = pairs.len() as f64;
    let ln2 = std::f64::consts::LN_2;

    let mut sum_l1 = 0.0;
    let mut sum_l2 = 0.0;
    let mut sum_rn = 0.0;
    let mut events_xy = 0usize;
    let mut events_yx = 0usize;
    let mut sum_bpd_xy = 0.0;
    let mut sum_bpd_yx = 0.0;
    for pair in pairs {
        let bundle = LossBundle {
            l1: -primal.log_prob(&pair.x, &pair.y)?,
            l2: -dual.log_prob(&pair.y, &pair.x)?,
        };
        sum_l1 += bundle.l1;
        sum_l2 += bundle.l2;
        sum_rn += (bundle.l1 + bundle.l2) / 2.0;
        events_xy += pair.y.len() + usize::from(primal.predicts_eos());
        events_yx += pair.x.len() + usize::from(dual.predicts_eos());
        sum_bpd_xy += bundle.l1 / (pair.y.len() as f64 * ln2);
        sum_bpd_yx += bundle.l2 / (pair.x.len() as f64 * ln2);
    }

    let mut metrics = BTreeMap::new();
    metrics.insert("nll_xy".to_string(), sum_l1 / n);
    metrics.insert("nll_yx".to_string(), sum_l2 / n);
    metrics.insert("rn".to_string(), sum_rn / n);
    metrics.insert("ppl_xy".to_string(), (sum_l1 / events_xy as f64).exp());
    metrics.insert("ppl_yx".to_string(), (sum_l2 / events_yx as f64).exp());
    metrics.insert("bpd_xy".to_string(), sum_bpd_xy / n);
    metrics.insert("bpd_yx".to_string(), sum_bpd_yx / n);

    let acc_xy = token_accuracy(primal, pairs, Direction::XtoY)?;
    let acc_yx = token_accuracy(dual, pairs, Direction::YtoX)?;
    metrics.insert("token_acc_xy".to_string(), acc_xy);
    metrics.insert("token_acc_yx".to_string(), acc_yx);
    if pairs.iter().all(|p| p.y.len() == 1) {
        metrics.insert("class_err_xy".to_string(), 1.0 - acc_xy);
    }
    if pairs.iter().all(|p| p.x.len() == 1) {
        metrics.insert("class_err_yx".to_string(), 1.0 - acc_yx);
    }

    metrics.insert(
        "duality_mean".to_string(),
        mean_duality(primal, dual, marg_x, marg_y, pairs)?,
    );
    Ok(metrics)
}

/// Snapshot of both parameter vectors, for checkpointing.
struct Checkpoint {
    primal: Vec<f64>,
    dual: Vec<f64>,
    epoch: usize,
}

/// Algorithm: repeat over shuffled minibatches; per example accumulate
/// -∇log P plus the λ-weighted duality-gap gradients, reduce in index
/// order, clip, and step each optimizer. Stops at `max_epochs` or after
/// `stop_patience` evaluations without combined-NLL improvement.
pub fn dsl_train<P, D, MX, MY>(
    cfg: &TrainConfig,
    mut primal: P,
    mut dual: D,
    marg_x: &MX,
    marg_y: &MY,
    data: &Splits,
) -> Result<(P, D, RunRecord)>
where
    P: ConditionalModel + Clone,
    D: ConditionalModel + Clone,
    MX: MarginalModel,
    MY: MarginalModel,
{
    cfg.validate()?;
    let train = &data.train.pairs;
    if train.is_empty() {
        return Err(Error::NoData);
    }
    let reg_off = cfg.lambda.is_zero();

    let mut opt1 = OptimizerState::new(cfg.opt_xy, cfg.lr_xy, primal.params().len());
    let mut opt2 = OptimizerState::new(cfg.opt_yx, cfg.lr_yx, dual.params().len());
    let mut sched1 = PlateauSchedule::new(cfg.lr_xy, cfg.plateau_patience, cfg.lr_floor, false);
    let mut sched2 = PlateauSchedule::new(cfg.lr_yx, cfg.plateau_patience, cfg.lr_floor, false);

    let mut record = RunRecord::default();
    let mut best: Option<Checkpoint> = None;
    let mut best_metric = f64::INFINITY;
    let mut stale = 0usize;
    let mut steps_done = 0usize;

    let mut run_eval = |primal: &P,
                        dual: &D,
                        opt1: &mut OptimizerState,
                        opt2: &mut OptimizerState,
                        sched1: &mut PlateauSchedule,
                        sched2: &mut PlateauSchedule,
                        record: &mut RunRecord,
                        best: &mut Option<Checkpoint>,
                        best_metric: &mut f64,
                        stale: &mut usize,
                        epoch: usize|
     -> Result<bool> {
        let mut metrics = evaluate(primal, dual, marg_x, marg_y, &data.valid)?;
        metrics.insert("train_nll_xy".into(), direction_nll(primal, train, Direction::XtoY)?);
        metrics.insert("train_nll_yx".into(), direction_nll(dual, train, Direction::YtoX)?);
        metrics.insert(
            "test_duality_mean".into(),
            mean_duality(primal, dual, marg_x, marg_y, &data.test.pairs)?,
        );
        opt1.set_learning_rate(sched1.update(metrics["nll_xy"]));
        opt2.set_learning_rate(sched2.update(metrics["nll_yx"]));
        metrics.insert("lr_xy".into(), opt1.learning_rate());
        metrics.insert("lr_yx".into(), opt2.learning_rate());

        let combined = (metrics["nll_xy"] + metrics["nll_yx"]) / 2.0;
        let improved = combined < *best_metric;
        if improved {
            *best_metric = combined;
            *stale = 0;
            *best = Some(Checkpoint {
                primal: primal.params().values().to_vec(),
                dual: dual.params().values().to_vec(),
                epoch,
            });
        } else {
            *stale += 1;
        }
        record.rows.push(EvalRow { epoch, metrics });
        Ok(!improved && *stale >= cfg.stop_patience)
    };

    run_eval(
        &primal, &dual, &mut opt1, &mut opt2, &mut sched1, &mut sched2, &mut record, &mut best,
        &mut best_metric, &mut stale, 0,
    )?;

    let mut epochs_run = 0;
    'training: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let order = epoch_order(cfg.seed, epoch, train.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut acc_p: Gradient = vec![0.0; primal.params().len()];
            let mut acc_d: Gradient = vec![0.0; dual.params().len()];
            for &idx in batch {
                let pair = &train[idx];
                let grad_p = primal.grad_log_prob(&pair.x, &pair.y)?;
                let grad_d = dual.grad_log_prob(&pair.y, &pair.x)?;
                if reg_off {
                    for (a, g) in acc_p.iter_mut().zip(&grad_p) {
                        *a -= g;
                    }
                    for (a, g) in acc_d.iter_mut().zip(&grad_d) {
                        *a -= g;
                    }
                    continue;
                }
                let lp_primal = primal.log_prob(&pair.x, &pair.y)?;
                let lp_dual = dual.log_prob(&pair.y, &pair.x)?;
                check_finite(lp_primal, idx, "log P(y|x)")?;
                check_finite(lp_dual, idx, "log P(x|y)")?;
                let term = duality_term(
                    marg_x.log_prob(&pair.x)?,
                    lp_primal,
                    marg_y.log_prob(&pair.y)?,
                    lp_dual,
                )
                .map_err(|e| Error::NonFiniteLoss { index: idx, detail: e.to_string() })?;
                let (lambda_xy, lambda_yx) = lambda_for(&cfg.lambda, &pair.x);
                // G_f term: -∇ℓ₁ is -(-∇logP) and the regularizer adds
                // λ_xy · 2Δ · ∇logP(y|x); dual side mirrors with -2Δ.
                let p_scale = -1.0 + lambda_xy * 2.0 * term.delta;
                let d_scale = -1.0 - lambda_yx * 2.0 * term.delta;
                for (a, g) in acc_p.iter_mut().zip(&grad_p) {
                    *a += p_scale * g;
                }
                for (a, g) in acc_d.iter_mut().zip(&grad_d) {
                    *a += d_scale * g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in acc_p.iter_mut() {
                *a *= scale;
            }
            for a in acc_d.iter_mut() {
                *a *= scale;
            }
            let g_f = clip_by_norm(acc_p, cfg.clip_xy);
            let g_g = clip_by_norm(acc_d, cfg.clip_yx);
            opt1.step(primal.params_mut(), &g_f)?;
            opt2.step(dual.params_mut(), &g_g)?;
            if steps_done < cfg.trace_steps {
                record.trace_primal.push(primal.params().values().to_vec());
                record.trace_dual.push(dual.params().values().to_vec());
            }
            steps_done += 1;
        }
        if epoch % cfg.eval_every == 0 {
            let should_stop = run_eval(
                &primal, &dual, &mut opt1, &mut opt2, &mut sched1, &mut sched2, &mut record,
                &mut best, &mut best_metric, &mut stale, epoch,
            )?;
            if should_stop {
                break 'training;
            }
        }
    }

    record.epochs_run = epochs_run;
    if cfg.select_best {
        if let Some(ck) = &best {
            primal.params_mut().assign(&ck.primal)?;
            dual.params_mut().assign(&ck.dual)?;
            record.best_epoch = ck.epoch;
        }
    } else {
        record.best_epoch = epochs_run;
    }
    record.final_metrics = evaluate(&primal, &dual, marg_x, marg_y, &data.test)?;
    Ok((primal, dual, record))
}

/// Single-model maximum-likelihood training: the same minibatch
/// machinery with the regularizer absent. Plateau, stopping, and
/// checkpoint selection all monitor this direction's validation NLL.
pub fn supervised_train<M: ConditionalModel + Clone>(
    cfg: &TrainConfig,
    mut model: M,
    data: &Splits,
    direction: Direction,
) -> Result<(M, RunRecord)> {
    cfg.validate()?;
    let train = &data.train.pairs;
    if train.is_empty() {
        return Err(Error::NoData);
    }
    let (kind, lr, clip) = match direction {
        Direction::XtoY => (cfg.opt_xy, cfg.lr_xy, cfg.clip_xy),
        Direction::YtoX => (cfg.opt_yx, cfg.lr_yx, cfg.clip_yx),
    };
    let mut opt = OptimizerState::new(kind, lr, model.params().len());
    let mut sched = PlateauSchedule::new(lr, cfg.plateau_patience, cfg.lr_floor, false);

    let mut record = RunRecord::default();
    let mut best_params: Option<(Vec<f64>, usize)> = None;
    let mut best_metric = f64::INFINITY;
    let mut stale = 0usize;
    let mut steps_done = 0usize;

    let mut run_eval = |model: &M,
                        opt: &mut OptimizerState,
                        sched: &mut PlateauSchedule,
                        record: &mut RunRecord,
                        best_params: &mut Option<(Vec<f64>, usize)>,
                        best_metric: &mut f64,
                        stale: &mut usize,
                        epoch: usize|
     -> Result<bool> {
        let valid_nll = direction_nll(model, &data.valid.pairs, direction)?;
        let train_nll = direction_nll(model, train, direction)?;
        opt.set_learning_rate(sched.update(valid_nll));
        let mut metrics = BTreeMap::new();
        metrics.insert("train_nll".to_string(), train_nll);
        metrics.insert("valid_nll".to_string(), valid_nll);
        metrics.insert("lr".to_string(), opt.learning_rate());
        let improved = valid_nll < *best_metric;
        if improved {
            *best_metric = valid_nll;
            *stale = 0;
            *best_params = Some((model.params().values().to_vec(), epoch));
        } else {
            *stale += 1;
        }
        record.rows.push(EvalRow { epoch, metrics });
        Ok(!improved && *stale >= cfg.stop_patience)
    };

    run_eval(&model, &mut opt, &mut sched, &mut record, &mut best_params, &mut best_metric, &mut stale, 0)?;

    let mut epochs_run = 0;
    'training: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let order = epoch_order(cfg.seed, epoch, train.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Gradient = vec![0.0; model.params().len()];
            for &idx in batch {
                let (input, output) = oriented(&train[idx], direction);
                let grad = model.grad_log_prob(input, output)?;
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a -= g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in acc.iter_mut() {
                *a *= scale;
            }
            let g = clip_by_norm(acc, clip);
            opt.step(model.params_mut(), &g)?;
            if steps_done < cfg.trace_steps {
                record.trace_primal.push(model.params().values().to_vec());
            }
            steps_done += 1;
        }
        if epoch % cfg.eval_every == 0 {
            let should_stop = run_eval(
                &model, &mut opt, &mut sched, &mut record, &mut best_params, &mut best_metric,
                &mut stale, epoch,
            )?;
            if should_stop {
                break 'training;
            }
        }
    }

    record.epochs_run = epochs_run;
    if cfg.select_best {
        if let Some((params, epoch)) = &best_params {
            model.params_mut().assign(params)?;
            record.best_epoch = *epoch;
        }
    } else {
        record.best_epoch = epochs_run;
    }
    let mut final_metrics = BTreeMap::new();
    final_metrics.insert(
        format!("nll_{}", direction.tag()),
        direction_nll(&model, &data.test.pairs, direction)?,
    );
    record.final_metrics = final_metrics;
    Ok((model, record))
}
