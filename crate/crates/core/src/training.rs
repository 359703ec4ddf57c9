//! Class-weighted cross-entropy, L2 penalty, RMSProp and the epoch loop.

use std::collections::BTreeMap;

use pcp_tensor::{Graph, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSample;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{Bound, Classifier, Modalities, ModelParams, Network};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub neg: f64,
    pub pos: f64,
}

impl ClassWeights {
    pub const UNIT: Self = Self { neg: 1.0, pos: 1.0 };

    pub fn for_label(&self, y: u8) -> f64 {
        if y == 1 {
            self.pos
        } else {
            self.neg
        }
    }
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::Data(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}

/// `w_neg = 1`, `w_pos = N_neg / N_pos`.
pub fn compute_class_weights(labels: &[u8]) -> Result<ClassWeights> {
    for &y in labels {
        check_label(y)?;
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "class weights need both classes, found {neg} negative and {pos} positive"
        )));
    }
    Ok(ClassWeights {
        neg: 1.0,
        pos: neg as f64 / pos as f64,
    })
}

/// Per-sample loss `w_y * -(y ln p + (1 - y) ln(1 - p))` on the clamped probability.
pub fn weighted_bce(p: f64, y: u8, weights: ClassWeights) -> Result<f64> {
    check_label(y)?;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let nll = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    Ok(weights.for_label(y) * nll)
}

/// Mean of [`weighted_bce`] over a batch.
pub fn batch_bce(ps: &[f64], ys: &[u8], weights: ClassWeights) -> Result<f64> {
    if ps.is_empty() || ps.len() != ys.len() {
        return Err(Error::Data(format!("{} probabilities for {} labels", ps.len(), ys.len())));
    }
    let mut total = 0.0;
    for (&p, &y) in ps.iter().zip(ys) {
        total += weighted_bce(p, y, weights)?;
    }
    Ok(total / ps.len() as f64)
}

/// Graph form of [`weighted_bce`] scaled by `factor`.
pub fn bce_node(g: &mut Graph, p: Var, y: u8, weights: ClassWeights, factor: f64) -> Result<Var> {
    check_label(y)?;
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let q = if y == 1 {
        p
    } else {
        let neg = g.scale(p, -1.0);
        g.offset(neg, 1.0)
    };
    let log = g.ln(q)?;
    let s = g.sum(log);
    Ok(g.scale(s, -weights.for_label(y) * factor))
}

/// `coeff * Σ θ²` over the in-scope tensors.
pub fn l2_penalty(params: &ModelParams, scope: impl Fn(&str) -> bool, coeff: f64) -> f64 {
    coeff
        * params
            .iter()
            .filter(|(n, _)| scope(n))
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
}

fn l2_node(g: &mut Graph, bound: &Bound, scope: impl Fn(&str) -> bool, coeff: f64) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for (_, v) in bound.iter().filter(|(n, _)| scope(n)) {
        let sq = g.dot(v, v)?;
        total = Some(match total {
            None => sq,
            Some(t) => g.add(t, sq)?,
        });
    }
    Ok(total.map(|t| g.scale(t, coeff)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

/// `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g / (√v + ε)`, elementwise.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], v: &mut [f64], cfg: RmsPropConfig) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != v.len() {
        return Err(Error::Data(format!(
            "rmsprop: {} parameters, {} gradients, {} state entries",
            theta.len(),
            grad.len(),
            v.len()
        )));
    }
    for ((t, &g), s) in theta.iter_mut().zip(grad).zip(v.iter_mut()) {
        *s = cfg.decay * *s + (1.0 - cfg.decay) * g * g;
        *t -= cfg.learning_rate * g / (s.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Per-tensor RMSProp state, created as zeros on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RmsProp {
    state: BTreeMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, cfg: RmsPropConfig) -> Result<()> {
        for (name, g) in &grads.0 {
            let theta = params
                .get_mut(name)
                .ok_or_else(|| Error::Data(format!("gradient for unknown parameter `{name}`")))?;
            let v = self
                .state
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            rmsprop_update(theta.data_mut(), g, v, cfg)?;
        }
        Ok(())
    }
}

/// Flat gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }
}

/// Loss of one batch and its gradient with respect to every trainable parameter.
///
/// Each sample gets its own graph carrying `w_y · bce / B`; the L2 term rides
/// on the first graph so it is counted once. Gradients are summed in sample order.
pub fn batch_gradients<C: Classifier + ?Sized>(
    model: &C,
    params: &ModelParams,
    batch: &[&ObservationSample],
    weights: ClassWeights,
    l2_coeff: f64,
) -> Result<(f64, Vec<f64>, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let factor = 1.0 / batch.len() as f64;
    let mut grads = Gradients(
        params
            .iter()
            .filter(|(n, _)| model.trainable(n))
            .map(|(n, t)| (n.to_string(), vec![0.0; t.numel()]))
            .collect(),
    );
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, |n| model.trainable(n));
        let p = model.forward(&mut g, &bound, sample)?;
        probs.push(g.value(p).data()[0]);
        let mut total = bce_node(&mut g, p, sample.label, weights, factor)?;
        if i == 0 && l2_coeff != 0.0 {
            if let Some(l2) = l2_node(&mut g, &bound, |n| model.regularized(n), l2_coeff)? {
                total = g.add(total, l2)?;
            }
        }
        loss += g.value(total).data()[0];
        g.backward(total)?;
        for (name, acc) in grads.0.iter_mut() {
            if let Some(d) = g.grad_data(bound.get(name)?) {
                acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((loss, probs, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_coeff: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    /// Derived from the training labels when absent.
    pub class_weights: Option<ClassWeights>,
    /// Keep the parameters of the epoch with the best validation AUC.
    pub select_best: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-5,
            epochs: 50,
            l2_coeff: 1e-4,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            class_weights: None,
            select_best: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) || !(self.l2_coeff >= 0.0) {
            return Err(Error::Config("rmsprop_decay must lie in [0, 1); epsilon positive; l2_coeff >= 0".into()));
        }
        Ok(())
    }
}

/// Summary of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss, L2 term included.
    pub loss: f64,
    /// Metrics of the probabilities seen during the epoch, before each update.
    pub train: MetricsReport,
    pub validation: Option<MetricsReport>,
}

impl EpochStats {
    /// `epoch=.. loss=.. train_acc=.. ... val_acc=..` on one line.
    pub fn log_line(&self) -> String {
        let mut s = format!("epoch={} loss={:.6}", self.epoch, self.loss);
        for (k, v) in self.train.pairs() {
            s.push_str(&format!(" train_{k}={v}"));
        }
        if let Some(val) = &self.validation {
            for (k, v) in val.pairs() {
                s.push_str(&format!(" val_{k}={v}"));
            }
        }
        s
    }
}

fn labels_of(samples: &[ObservationSample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

/// Stateful epoch loop, useful when the caller decides when to stop.
pub struct Trainer<'a, C: Classifier + ?Sized> {
    model: &'a C,
    train: &'a [ObservationSample],
    config: TrainConfig,
    params: ModelParams,
    optimizer: RmsProp,
    weights: ClassWeights,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a, C: Classifier + ?Sized> Trainer<'a, C> {
    pub fn new(model: &'a C, train: &'a [ObservationSample], config: TrainConfig) -> Result<Self> {
        let params = model.init_params(config.seed)?;
        Self::with_params(model, train, config, params)
    }

    pub fn with_params(
        model: &'a C,
        train: &'a [ObservationSample],
        config: TrainConfig,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let labels = labels_of(train);
        let derived = compute_class_weights(&labels)?;
        let weights = config.class_weights.unwrap_or(derived);
        params.conforms_to(&model.param_specs())?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        Ok(Self {
            model,
            train,
            config,
            params,
            optimizer: RmsProp::default(),
            weights,
            rng,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn class_weights(&self) -> ClassWeights {
        self.weights
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over a fresh seeded shuffle; the last partial batch is kept.
    pub fn train_epoch(&mut self, validation: Option<&[ObservationSample]>) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let opt = self.config.optimizer();
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut scores = vec![0.0; self.train.len()];
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&ObservationSample> = chunk.iter().map(|&i| &self.train[i]).collect();
            let (loss, probs, grads) =
                batch_gradients(self.model, &self.params, &batch, self.weights, self.config.l2_coeff)?;
            for (&i, p) in chunk.iter().zip(probs) {
                scores[i] = p;
            }
            self.optimizer.step(&mut self.params, &grads, opt)?;
            loss_sum += loss;
            batches += 1;
        }
        self.epoch += 1;
        let train = MetricsReport::evaluate(&scores, &labels_of(self.train), self.config.threshold)?;
        let validation = match validation {
            Some(v) => Some(evaluate(self.model, &self.params, v, self.config.threshold)?.1),
            None => None,
        };
        Ok(EpochStats {
            epoch: self.epoch,
            loss: loss_sum / batches as f64,
            train,
            validation,
        })
    }
}

/// Crossing probability of every sample, in order.
pub fn predict_all<C: Classifier + ?Sized>(
    model: &C,
    params: &ModelParams,
    samples: &[ObservationSample],
) -> Result<Vec<f64>> {
    samples.iter().map(|s| model.predict(params, s)).collect()
}

pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    params: &ModelParams,
    samples: &[ObservationSample],
    threshold: f64,
) -> Result<(Vec<f64>, MetricsReport)> {
    let scores = predict_all(model, params, samples)?;
    let report = MetricsReport::evaluate(&scores, &labels_of(samples), threshold)?;
    Ok((scores, report))
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochStats>,
    /// Epoch whose parameters were returned (1-based).
    pub selected_epoch: usize,
    /// Training-set metrics of the returned parameters.
    pub final_train: MetricsReport,
}

/// Runs `config.epochs` epochs, reporting each through `on_epoch`.
pub fn train<C: Classifier + ?Sized>(
    model: &C,
    train_set: &[ObservationSample],
    validation: Option<&[ObservationSample]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, train_set, config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for _ in 0..config.epochs {
        let stats = trainer.train_epoch(validation)?;
        on_epoch(&stats);
        if config.select_best {
            if let Some(v) = &stats.validation {
                let score = if v.auc_defined { v.auc } else { v.accuracy };
                if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                    best = Some((score, stats.epoch, trainer.params().clone()));
                }
            }
        }
        log.push(stats);
    }
    let last = trainer.epochs_done();
    let (params, selected_epoch) = match best {
        Some((_, epoch, params)) => (params, epoch),
        None => (trainer.into_params(), last),
    };
    let (_, final_train) = evaluate(model, &params, train_set, config.threshold)?;
    Ok(TrainOutcome {
        params,
        log,
        selected_epoch,
        final_train,
    })
}

/// One trained subset of an ablation study.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub modalities: Modalities,
    pub outcome: TrainOutcome,
    /// Metrics of the returned parameters on the held-out set.
    pub held_out: MetricsReport,
}

/// Trains a masked copy of `base` for every subset, all from the same
/// seed, and evaluates each on `held_out`.
pub fn ablation_study(
    base: &Network,
    subsets: &[Modalities],
    train_set: &[ObservationSample],
    held_out: &[ObservationSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(Modalities, &EpochStats),
) -> Result<Vec<AblationRow>> {
    subsets
        .iter()
        .map(|&m| {
            let net = base.clone().with_modalities(m);
            let outcome = train(&net, train_set, Some(held_out), config, |s| on_epoch(m, s))?;
            let (_, report) = evaluate(&net, &outcome.params, held_out, config.threshold)?;
            Ok(AblationRow {
                modalities: m,
                outcome,
                held_out: report,
            })
        })
        .collect()
}
