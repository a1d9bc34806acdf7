use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{step_decay_lr, AdamConfig, AdamState, M3colModel};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::losses::{total_objective, LossBreakdown, ObjectiveConfig, Phase, Targets};
use crate::mixup::{make_plan, mix_matrix, mixed_onehot_targets, MixupPlan};
use crate::numgrad::{Graph, Matrix};

/// Mini-batching. `batch_size = None` means one full-batch step per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Micro-batches whose gradients are averaged into one optimizer step.
    #[serde(default = "one")]
    pub accumulation: usize,
}

fn one() -> usize {
    1
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: None,
            accumulation: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub adam: AdamConfig,
    pub objective: ObjectiveConfig,
    pub batch: BatchConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.contrastive.validate()?;
        if self.objective.label_mixup
            && self.objective.contrastive.mode != crate::losses::ContrastiveMode::None
        {
            return Err(Error::Parameter(
                "label mixup trains on mixed inputs only and needs contrastive mode 'none'".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.step_size == 0 {
            return Err(Error::Parameter("step size must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.batch.batch_size == Some(0) || self.batch.accumulation == 0 {
            return Err(Error::Parameter("batch size and accumulation must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Option<Phase>,
    pub lr: f64,
    pub contrastive: f64,
    pub ce_uni: Vec<f64>,
    pub ce_multi: f64,
    pub total: f64,
    /// Evaluation-mode fused accuracy on the training set after the epoch's update.
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

fn check_finite(b: &LossBreakdown, epoch: usize) -> Result<()> {
    let bad = |term: String| Err(Error::NonFinite { epoch, term });
    if !b.contrastive.is_finite() {
        return bad("contrastive loss".into());
    }
    for (m, v) in b.ce_uni.iter().enumerate() {
        if !v.is_finite() {
            return bad(format!("unimodal cross-entropy (modality {m})"));
        }
    }
    if !b.ce_multi.is_finite() {
        return bad("fused cross-entropy".into());
    }
    if !b.total.is_finite() {
        return bad("total loss".into());
    }
    Ok(())
}

/// Gradients and loss terms of the objective on one (micro-)batch.
fn batch_gradients<R: Rng>(
    model: &M3colModel,
    batch: &LabeledBatch,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<(Vec<Matrix>, LossBreakdown)> {
    let objective = &config.objective;
    let phase = objective.contrastive.phase_at(epoch, config.epochs);
    let n = batch.len();
    let m = batch.num_modalities();

    let mut g = Graph::new();
    let bound = model.bind(&mut g);

    let (outputs, plan, soft) = if objective.label_mixup {
        let plan = make_plan(n, m, objective.contrastive.alpha, rng)?.with_shared_permutation();
        let mixed = batch
            .modalities()
            .iter()
            .enumerate()
            .map(|(k, x)| mix_matrix(x, &plan, k))
            .collect::<Result<Vec<_>>>()?;
        let mixed_batch = LabeledBatch::new(
            mixed,
            batch.labels().to_vec(),
            batch.num_classes(),
            batch.modality_names().to_vec(),
        )?;
        let uni = (0..m)
            .map(|k| mixed_onehot_targets(batch.labels(), &plan, batch.num_classes(), k))
            .collect::<Result<Vec<_>>>()?;
        let fused = uni[0].clone();
        let out = model.forward(&mut g, &bound, &mixed_batch, None, true, rng)?;
        (out, None, Some((uni, fused)))
    } else {
        // mixtures only feed the mixup loss, so skip them in the other phase
        let plan: Option<MixupPlan> = match phase {
            Some(Phase::M3co) => Some(make_plan(n, m, objective.contrastive.alpha, rng)?),
            _ => None,
        };
        let out = model.forward(&mut g, &bound, batch, plan.as_ref(), true, rng)?;
        (out, plan, None)
    };

    for (k, &e) in outputs.embeddings.iter().enumerate() {
        if !g.value(e).is_finite() {
            return Err(Error::NonFinite {
                epoch,
                term: format!("embeddings (modality {k})"),
            });
        }
    }

    let targets = match &soft {
        Some((uni, fused)) => Targets::Soft {
            unimodal: uni,
            fused,
        },
        None => Targets::Hard(batch.labels()),
    };
    let (loss, breakdown) = total_objective(
        &mut g,
        &outputs,
        targets,
        plan.as_ref(),
        objective,
        epoch,
        config.epochs,
    )?;
    check_finite(&breakdown, epoch)?;
    let mut grads = g.backward(loss)?;
    let grads = bound
        .handles()
        .into_iter()
        .map(|h| grads.take(h).expect("parameters are leaves"))
        .collect();
    Ok((grads, breakdown))
}

/// Trains `model` in place and returns the per-epoch curve.
///
/// Each step draws a fresh mixup plan (mixup phase only), runs the forward
/// pass in training mode, evaluates the combined objective, backpropagates
/// and applies Adam with the step-decayed learning rate. Everything random is
/// drawn from `rng`, so a run is reproducible from its seed.
pub fn train_epochs<R: Rng>(
    model: &mut M3colModel,
    train: &LabeledBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut adam = AdamState::new(config.adam.clone(), &model.parameters());
    let mut log = TrainLog::default();
    let n = train.len();
    let full_batch = config.batch.batch_size.is_none_or(|b| b >= n);

    for epoch in 0..config.epochs {
        let lr = step_decay_lr(config.lr, epoch, config.step_size, config.gamma);
        let chunks: Vec<Vec<usize>> = if full_batch {
            vec![(0..n).collect()]
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let size = config.batch.batch_size.unwrap_or(n);
            order.chunks(size).map(<[usize]>::to_vec).collect()
        };

        let mut parts: Vec<LossBreakdown> = Vec::with_capacity(chunks.len());
        for group in chunks.chunks(config.batch.accumulation) {
            let mut acc: Option<Vec<Matrix>> = None;
            for idx in group {
                let (grads, breakdown) = if full_batch {
                    batch_gradients(model, train, config, epoch, rng)?
                } else {
                    let sub = train.select(idx)?;
                    batch_gradients(model, &sub, config, epoch, rng)?
                };
                parts.push(breakdown);
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty group");
            if group.len() > 1 {
                let k = 1.0 / group.len() as f64;
                grads = grads.into_iter().map(|g| g.scale(k)).collect();
            }
            adam.step(&mut model.parameters_mut(), &grads, lr)?;
        }

        let preds = model.predict(train)?;
        let train_acc = accuracy(&preds.fused_labels(), train.labels())?;
        log.epochs.push(average_breakdown(epoch, lr, &parts, train_acc));
    }
    Ok(log)
}

fn average_breakdown(epoch: usize, lr: f64, parts: &[LossBreakdown], train_acc: f64) -> EpochLog {
    let k = parts.len() as f64;
    let mean = |f: &dyn Fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / k;
    let uni_len = parts[0].ce_uni.len();
    EpochLog {
        epoch,
        phase: parts[0].phase,
        lr,
        contrastive: mean(&|b| b.contrastive),
        ce_uni: (0..uni_len).map(|m| mean(&|b| b.ce_uni[m])).collect(),
        ce_multi: mean(&|b| b.ce_multi),
        total: mean(&|b| b.total),
        train_acc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ContrastiveMode;
    use crate::model::{Activation, ModelDims};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (M3colModel, LabeledBatch) {
        let dims = ModelDims {
            input_dims: vec![4, 3],
            hidden: 8,
            embed: 6,
            classifier_hidden: 8,
            num_classes: 2,
            dropout: 0.2,
            encoder_activation: Activation::Relu,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 24;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut m = |d: usize| {
            Matrix::from_fn(n, d, |r, c| {
                let sign = if labels[r] == 1 { 1.0 } else { -1.0 };
                sign * (1.0 + c as f64 * 0.1) + rng.random_range(-0.5..0.5)
            })
        };
        let mods = vec![m(4), m(3)];
        let batch = LabeledBatch::new(mods, labels.clone(), 2, vec!["a".into(), "b".into()]).unwrap();
        (M3colModel::init(dims, 3).unwrap(), batch)
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: 5e-3,
            step_size: 250,
            gamma: 0.1,
            adam: AdamConfig {
                weight_decay: 1e-3,
                ..AdamConfig::default()
            },
            objective: ObjectiveConfig::default(),
            batch: BatchConfig::default(),
        }
    }

    #[test]
    fn zero_epochs_leaves_model() {
        let (mut model, batch) = setup();
        let before = model.clone();
        let log = train_epochs(&mut model, &batch, &config(0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_reproducible_and_fits() {
        let (model, batch) = setup();
        let run = |seed| {
            let mut m = model.clone();
            let log = train_epochs(&mut m, &batch, &config(30), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            (m, log)
        };
        let (a, la) = run(7);
        let (b, lb) = run(7);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.epochs.last().unwrap().total < la.epochs[0].total);
        assert_eq!(la.epochs.last().unwrap().train_acc, 1.0);
        assert_eq!(la.epochs[0].phase, Some(Phase::M3co));
        assert_eq!(la.epochs[29].phase, Some(Phase::Multisclip));
        let b0 = &la.epochs[0];
        let expect = 0.1 * b0.contrastive + b0.ce_uni.iter().sum::<f64>() + b0.ce_multi;
        assert!((b0.total - expect).abs() < 1e-12);
    }

    #[test]
    fn ablation_switches_run() {
        let (model, batch) = setup();
        let mut cfg = config(3);
        cfg.objective.unimodal_supervision = false;
        let log = train_epochs(&mut model.clone(), &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(log.epochs.iter().all(|e| e.ce_uni.is_empty()));

        let mut cfg = config(3);
        cfg.objective.label_mixup = true;
        assert!(train_epochs(&mut model.clone(), &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        cfg.objective.contrastive.mode = ContrastiveMode::None;
        let log = train_epochs(&mut model.clone(), &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(log.epochs.iter().all(|e| e.phase.is_none() && e.contrastive == 0.0));
    }

    #[test]
    fn micro_batches_with_accumulation() {
        let (model, batch) = setup();
        let mut cfg = config(2);
        cfg.batch = BatchConfig {
            batch_size: Some(8),
            accumulation: 2,
        };
        let mut m = model.clone();
        let log = train_epochs(&mut m, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(log.epochs.len(), 2);
        assert_ne!(m, model);
    }

    #[test]
    fn non_finite_loss_names_epoch() {
        let (model, batch) = setup();
        let mut cfg = config(1);
        cfg.lr = 1e300;
        // the first step succeeds and blows parameters up; the next one is non-finite
        cfg.epochs = 3;
        let err = train_epochs(&mut model.clone(), &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            Error::NonFinite { epoch, .. } => assert!(epoch >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
