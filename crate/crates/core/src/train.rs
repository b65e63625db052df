//! Adam training, batch losses and evaluation.

use std::fmt::Write as _;

use crate::data::{Labels, TaskMode, VideoRecord};
use crate::error::{Error, Result};
use crate::losses::{bce_loss, ce_loss, grouped_consistency, total_loss, LossConfig, VideoPairs};
use crate::metrics::{accuracy, alignment, mean_average_precision};
use crate::model::{forward_video, Modality, Model};
use crate::rng::Rng;
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Videos per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            epochs: 15,
            batch_size: 4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be a finite value >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1 and beta2 must lie in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates for every parameter of a store.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    /// One update from `grads[p]`, the gradient of parameter `p`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for (p, id) in ids.into_iter().enumerate() {
            let g = &grads[p];
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            let mut values = store.get(id).data().to_vec();
            for j in 0..values.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let step = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                values[j] -= step;
            }
            store.get_mut(id).assign(&values)?;
        }
        Ok(())
    }
}

/// The loss terms of one mini-batch.
pub struct BatchLoss {
    pub task: Var,
    pub consistency: Option<Var>,
    pub total: Var,
    pub outputs: Vec<crate::model::VideoOutput>,
}

fn stal_targets(videos: &[&VideoRecord]) -> Result<Tensor> {
    let mut rows = 0;
    let mut data = Vec::new();
    let mut classes = 0;
    for v in videos {
        let Labels::Stal(y) = &v.labels else {
            return Err(Error::InvalidTarget(format!("{}: expected multi-label targets", v.id)));
        };
        classes = y.dims()[2];
        rows += y.dims()[0] * y.dims()[1];
        data.extend_from_slice(y.data());
    }
    Tensor::matrix(rows, classes, data)
}

fn gar_targets(videos: &[&VideoRecord]) -> Result<Vec<usize>> {
    videos
        .iter()
        .map(|v| match v.labels {
            Labels::Gar(g) => Ok(g),
            Labels::Stal(_) => Err(Error::InvalidTarget(format!("{}: expected a video class", v.id))),
        })
        .collect()
}

fn q_hat(out: &crate::model::VideoOutput, m: Modality) -> Option<Var> {
    out.q_hat.iter().find(|(mm, _)| *mm == m).map(|(_, v)| *v)
}

/// Forward a mini-batch and assemble `task + λ·consistency`.
pub fn batch_loss(tape: &mut Tape, model: &Model, videos: &[&VideoRecord], loss: &LossConfig) -> Result<BatchLoss> {
    let mut outputs = Vec::with_capacity(videos.len());
    for v in videos {
        outputs.push(forward_video(tape, model, v)?);
    }
    let scores: Vec<Var> = outputs.iter().map(|o| o.scores).collect();
    let scores = if scores.len() == 1 {
        scores[0]
    } else {
        tape.concat_rows(&scores)?
    };
    let task = match model.cfg.mode {
        TaskMode::Stal => bce_loss(tape, scores, &stal_targets(videos)?)?,
        TaskMode::Gar => ce_loss(tape, scores, &gar_targets(videos)?)?,
    };
    let consistency = if model.cfg.flags.use_consistency {
        let pairs: Vec<VideoPairs> = outputs
            .iter()
            .zip(videos)
            .map(|(o, v)| VideoPairs {
                vis: q_hat(o, Modality::Vis).expect("consistency needs vis"),
                key: q_hat(o, Modality::Key).expect("consistency needs key"),
                clips: v.clips(),
                actors: v.actors(),
            })
            .collect();
        Some(grouped_consistency(tape, &pairs, loss)?)
    } else {
        None
    };
    let total = total_loss(tape, task, consistency, loss)?;
    Ok(BatchLoss {
        task,
        consistency,
        total,
        outputs,
    })
}

/// Evaluation of a model on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: TaskMode,
    /// mAP (STAL) or accuracy (GAR).
    pub metric: f64,
    /// Mean cosine of positive cross-modal pairs, when both modalities are active.
    pub alignment: Option<f64>,
    pub task_loss: f64,
}

impl EvalReport {
    pub fn metric_name(&self) -> &'static str {
        match self.mode {
            TaskMode::Stal => "map",
            TaskMode::Gar => "accuracy",
        }
    }
}

/// Score every video; never touches the parameters.
pub fn evaluate(model: &Model, data: &[VideoRecord]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let mut scores = Vec::new();
    let mut rows = 0;
    let (mut vis_rows, mut key_rows) = (Vec::new(), Vec::new());
    let mut loss_sum = 0.0;
    for v in data {
        let mut tape = Tape::with_params(&model.store);
        let out = forward_video(&mut tape, model, v)?;
        let task = match model.cfg.mode {
            TaskMode::Stal => bce_loss(&mut tape, out.scores, &stal_targets(&[v])?)?,
            TaskMode::Gar => ce_loss(&mut tape, out.scores, &gar_targets(&[v])?)?,
        };
        let s = tape.value(out.scores);
        loss_sum += tape.scalar(task) * s.rows() as f64;
        rows += s.rows();
        scores.extend_from_slice(s.data());
        if let (Some(a), Some(b)) = (q_hat(&out, Modality::Vis), q_hat(&out, Modality::Key)) {
            vis_rows.extend_from_slice(tape.value(a).data());
            key_rows.extend_from_slice(tape.value(b).data());
        }
    }
    let c = model.cfg.classes;
    let scores = Tensor::matrix(rows, c, scores)?;
    let refs: Vec<&VideoRecord> = data.iter().collect();
    let metric = match model.cfg.mode {
        TaskMode::Stal => mean_average_precision(&scores, &stal_targets(&refs)?),
        TaskMode::Gar => accuracy(&scores, &gar_targets(&refs)?),
    };
    let alignment = if vis_rows.is_empty() {
        None
    } else {
        let d = model.cfg.dim;
        let n = vis_rows.len() / d;
        Some(alignment(&Tensor::matrix(n, d, vis_rows)?, &Tensor::matrix(n, d, key_rows)?))
    };
    Ok(EvalReport {
        mode: model.cfg.mode,
        metric,
        alignment,
        task_loss: loss_sum / rows as f64,
    })
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the epoch's mini-batches.
    pub task_loss: f64,
    pub consistency_loss: Option<f64>,
    pub total_loss: f64,
    pub eval: EvalReport,
}

impl EpochRecord {
    /// One `key=value` line; free of timing so runs compare byte for byte.
    pub fn line(&self) -> String {
        let mut s = format!("epoch={} task_loss={:.9} ", self.epoch, self.task_loss);
        if let Some(c) = self.consistency_loss {
            let _ = write!(s, "consistency_loss={c:.9} ");
        }
        let _ = write!(
            s,
            "total_loss={:.9} eval_{}={:.9} eval_task_loss={:.9}",
            self.total_loss,
            self.eval.metric_name(),
            self.eval.metric,
            self.eval.task_loss
        );
        if let Some(a) = self.eval.alignment {
            let _ = write!(s, " eval_alignment={a:.9}");
        }
        s
    }
}

/// Mini-batch order of one epoch.
pub fn batch_order(videos: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..videos).collect();
    Rng::derive(seed, 100 + epoch as u64).shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train in place. `on_epoch` sees each record as soon as it is complete.
pub fn train(
    model: &mut Model,
    train_set: &[VideoRecord],
    eval_set: &[VideoRecord],
    cfg: &TrainConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    loss.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut adam = Adam::new(&model.store, cfg);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = batch_order(train_set.len(), cfg.batch_size, cfg.seed, epoch);
        let (mut task_sum, mut cc_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (step, batch) in batches.iter().enumerate() {
            let videos: Vec<&VideoRecord> = batch.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::with_params(&model.store);
            let parts = batch_loss(&mut tape, model, &videos, loss)?;
            let total = tape.scalar(parts.total);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: step + 1 });
            }
            task_sum += tape.scalar(parts.task);
            cc_sum += parts.consistency.map_or(0.0, |c| tape.scalar(c));
            total_sum += total;
            let grads = tape.backward(parts.total)?;
            let per_param: Vec<Vec<f64>> = model.store.ids().map(|id| grads.param(id).into_owned()).collect();
            if per_param.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step: step + 1 });
            }
            adam.update(&mut model.store, &per_param)?;
        }
        let nb = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            task_loss: task_sum / nb,
            consistency_loss: model.cfg.flags.use_consistency.then_some(cc_sum / nb),
            total_loss: total_sum / nb,
            eval: evaluate(model, eval_set)?,
        };
        log::info!("{}", record.line());
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

/// First `len - held_out` videos for training, the rest for evaluation.
pub fn split(records: Vec<VideoRecord>, eval_fraction: f64) -> (Vec<VideoRecord>, Vec<VideoRecord>) {
    let n = records.len();
    let held = ((n as f64 * eval_fraction).round() as usize).min(n.saturating_sub(1));
    let mut train = records;
    let eval = train.split_off(n - held);
    (train, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticConfig};
    use crate::model::{AblationFlags, ModelConfig};

    fn setup() -> (Model, Vec<VideoRecord>) {
        let data = generate(&SyntheticConfig {
            videos: 6,
            clips: 3,
            actors: 2,
            tokens: 2,
            dim: 4,
            classes: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            dim: 4,
            classes: 3,
            hidden: 6,
            flags: AblationFlags::default(),
            ..ModelConfig::default()
        };
        (Model::init(cfg, 0).unwrap(), data)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, data) = setup();
        let before = model.store.clone();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 3, ..TrainConfig::default() };
        let recs = train(&mut model, &data, &data, &cfg, &LossConfig::default(), |_| {}).unwrap();
        assert_eq!(model.store, before);
        assert_eq!(recs[0].eval, recs[1].eval);
        // equal batch sizes: the mean of batch means is the data mean in any order
        assert!((recs[0].task_loss - recs[1].task_loss).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_moves_the_loss() {
        let (model, data) = setup();
        let cfg = TrainConfig { lr: 1e-2, epochs: 3, batch_size: 2, ..TrainConfig::default() };
        let run = || {
            let mut m = model.clone();
            let r = train(&mut m, &data, &data, &cfg, &LossConfig::default(), |_| {}).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1.store, m2.store);
        assert_eq!(r1, r2);
        assert!(r1[2].total_loss < r1[0].total_loss);
    }

    #[test]
    fn batch_order_is_a_seeded_partition() {
        let b = batch_order(7, 3, 5, 1);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(b, batch_order(7, 3, 5, 1));
        assert_ne!(b, batch_order(7, 3, 5, 2));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::row(vec![1.0, -2.0, 0.0]).unwrap()).unwrap();
        let cfg = TrainConfig { lr: 0.1, ..TrainConfig::default() };
        let mut adam = Adam::new(&store, &cfg);
        adam.update(&mut store, &[vec![3.0, -0.5, 0.0]]).unwrap();
        let p = store.get(id).data();
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 1.9).abs() < 1e-8 && p[2] == 0.0);
    }

    #[test]
    fn split_keeps_a_training_set() {
        let (_, data) = setup();
        let (tr, ev) = split(data.clone(), 0.34);
        assert_eq!((tr.len(), ev.len()), (4, 2));
        let (tr, ev) = split(data[..1].to_vec(), 0.5);
        assert_eq!((tr.len(), ev.len()), (1, 0));
    }
}
