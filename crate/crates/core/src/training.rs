//! Loss, optimiser and the epoch loop.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use num_traits::Float;

use crate::autodiff::{Graph, Var};
use crate::data::{make_batches, BatchOrder};
use crate::encoders::ImageInput;
use crate::error::{Error, Result};
use crate::fusion::predicted_class;
use crate::metrics;
use crate::model::{accumulate_gradients, Gradients, Model, Sample};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// `-ln(clamp(probs[label]))` for a `1×2` probability row.
pub fn bce_loss<T: Scalar>(g: &mut Graph<'_, T>, probs: Var, label: usize) -> Result<Var> {
    if label > 1 {
        return Err(Error::Config(alloc::format!("label {label} is not 0 or 1")));
    }
    let p = g.slice_cols(probs, label, 1)?;
    let p = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.log(p)?;
    Ok(g.scale(lp, -1.0))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.values().iter().map(|t| vec![T::zero(); t.len()]).collect(),
            second: params.values().iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(Float::powi(self.beta1, t));
        let c2 = T::one() - T::lit(Float::powi(self.beta2, t));
        let (lr, eps) = (T::lit(self.learning_rate), T::lit(self.epsilon));
        for (k, param) in params.iter_mut().enumerate() {
            let grad = grads.get(k).and_then(|g| g.as_ref()).map(Tensor::data);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = grad.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Which validation metric decides the retained checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectMetric {
    #[default]
    Accuracy,
    WeightedF1,
}

impl SelectMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectMetric::Accuracy => "accuracy",
            SelectMetric::WeightedF1 => "weighted_f1",
        }
    }
}

impl core::str::FromStr for SelectMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(SelectMetric::Accuracy),
            "weighted_f1" => Ok(SelectMetric::WeightedF1),
            other => Err(Error::Config(alloc::format!(
                "unknown selection metric `{other}` (accuracy | weighted_f1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub select_metric: SelectMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            select_metric: SelectMetric::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Image payload of an [`Example`].
#[derive(Debug, Clone, PartialEq)]
pub enum ImageData<T> {
    Pixels(Tensor<T>),
    Features(Tensor<T>),
}

/// A preprocessed, labelled training or evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub image: ImageData<T>,
    pub tokens: Vec<usize>,
    pub label: usize,
}

impl<T: Scalar> Example<T> {
    pub fn sample(&self) -> Sample<'_, T> {
        let image = match &self.image {
            ImageData::Pixels(t) => ImageInput::Pixels(t),
            ImageData::Features(t) => ImageInput::Features(t),
        };
        Sample {
            image,
            tokens: &self.tokens,
        }
    }
}

/// Per-sample outputs of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    /// Probability of class 1.
    pub scores: Vec<f64>,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = self.labels.iter().zip(&self.predicted).filter(|(a, b)| a == b).count();
        hits as f64 / self.labels.len() as f64
    }
}

pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[Example<T>]) -> Result<Predictions> {
    let mut out = Predictions::default();
    for ex in examples {
        let p = model.predict(ex.sample())?;
        out.labels.push(ex.label);
        out.predicted.push(predicted_class(&p));
        out.scores.push(p[1].to_f64_lossy());
    }
    Ok(out)
}

/// Loss of one sample and its parameter gradients scaled by `scale`, added
/// into `acc`. Returns `(loss, probabilities)`.
pub fn accumulate_sample<T: Scalar>(
    model: &Model<T>,
    example: &Example<T>,
    scale: T,
    acc: &mut Gradients<T>,
) -> Result<(T, [T; 2])> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let fwd = model.forward(&mut g, &bound, example.sample())?;
    let loss = bce_loss(&mut g, fwd.probs, example.label)?;
    if let Some(fault) = g.fault() {
        return Err(Error::NumericFault {
            epoch: 0,
            batch: 0,
            detail: fault.to_string(),
        });
    }
    g.backward(loss)?;
    accumulate_gradients(&g, &bound, acc, scale);
    let p = g.value(fwd.probs).data();
    Ok((g.value(loss).data()[0], [p[0], p[1]]))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based; 0 stands for the untrained initialisation.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub train_loss: Option<f64>,
    /// Accuracy of the predictions made while the epoch was running.
    pub train_accuracy: Option<f64>,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
    /// Whether this epoch became the retained checkpoint.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub last: Model<T>,
    pub log: Vec<EpochRecord>,
}

/// Runs the epoch loop. After each epoch the validation split is evaluated
/// and the model is retained whenever the selection metric strictly
/// improves. `on_epoch` sees each record together with the current model and
/// may stop the run early.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    mut model: Model<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    mut on_epoch: impl FnMut(&EpochRecord, &Model<T>) -> ControlFlow<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let score = |preds: &Predictions| -> Result<(f64, f64)> {
        let prf = metrics::weighted_prf(&preds.labels, &preds.predicted)?;
        Ok((preds.accuracy(), prf.weighted_f1))
    };
    let select = |acc: f64, wf: f64| match config.select_metric {
        SelectMetric::Accuracy => acc,
        SelectMetric::WeightedF1 => wf,
    };

    let mut log = Vec::new();
    if config.epochs == 0 {
        let (acc, wf) = score(&evaluate(&model, val_set)?)?;
        let rec = EpochRecord {
            epoch: 0,
            train_loss: None,
            train_accuracy: None,
            val_accuracy: acc,
            val_weighted_f1: wf,
            improved: true,
        };
        let _ = on_epoch(&rec, &model);
        log.push(rec);
        return Ok(TrainOutcome {
            best: model.clone(),
            best_epoch: 0,
            best_metric: select(acc, wf),
            last: model,
            log,
        });
    }

    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut best: Option<(Model<T>, usize, f64)> = None;
    for epoch in 1..=config.epochs {
        let batches = make_batches(
            train_set.len(),
            config.batch_size,
            BatchOrder::Shuffled {
                seed: config.seed,
                epoch: epoch as u64,
            },
        );
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let fault = |detail: alloc::string::String| Error::NumericFault {
                epoch,
                batch: b,
                detail,
            };
            let scale = T::one() / T::lit(batch.len() as f64);
            let mut grads: Gradients<T> = vec![None; model.params().len()];
            for &i in batch {
                let ex = &train_set[i];
                let (loss, probs) = match accumulate_sample(&model, ex, scale, &mut grads) {
                    Err(Error::NumericFault { detail, .. }) => return Err(fault(detail)),
                    other => other?,
                };
                loss_sum += loss.to_f64_lossy();
                hits += usize::from(predicted_class(&probs) == ex.label);
            }
            adam.step(model.params_mut().values_mut(), &grads);
            if let Some((name, _)) = model.params().iter().find(|(_, t)| !t.is_finite()) {
                return Err(fault(alloc::format!("parameter `{name}` became non-finite")));
            }
        }
        let (acc, wf) = score(&evaluate(&model, val_set)?)?;
        let metric = select(acc, wf);
        let improved = best.as_ref().is_none_or(|(_, _, m)| metric > *m);
        if improved {
            best = Some((model.clone(), epoch, metric));
        }
        let n = train_set.len() as f64;
        let rec = EpochRecord {
            epoch,
            train_loss: Some(loss_sum / n),
            train_accuracy: Some(hits as f64 / n),
            val_accuracy: acc,
            val_weighted_f1: wf,
            improved,
        };
        log.push(rec);
        if on_epoch(&rec, &model).is_break() {
            break;
        }
    }
    let (best, best_epoch, best_metric) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_metric,
        last: model,
        log,
    })
}
