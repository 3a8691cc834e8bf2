//! Training loop, threshold tuning and checkpoint persistence.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cnn::{CnnConfig, SimpleCnn};
use super::optim::{AdamW, AdamWConfig, EarlyStopping, PlateauScheduler};
use crate::autograd::checkpoint::{self, NamedTensor};
use crate::autograd::{sigmoid, Graph, Tensor};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::ingest::{class_pos_weight, DatasetSplit, SplitPart};
use crate::metrics::{confusion_at, Confusion};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            plateau_factor: 0.5,
            plateau_patience: 3,
            early_stop_patience: 10,
            max_epochs: 100,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.weight_decay, self.plateau_factor, self.adam_eps];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("lr, weight_decay, plateau_factor and adam_eps must be positive"));
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::param("plateau_factor must be below 1"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::param("adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0
            || self.plateau_patience == 0
            || self.early_stop_patience == 0
            || self.max_epochs == 0
        {
            return Err(Error::param("batch_size, patience values and max_epochs must be at least 1"));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.adam_betas,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Encoded images with labels, split chronologically, counting every read
/// per split so callers can prove which partitions a routine touched.
#[derive(Debug)]
pub struct ImageDataset {
    images: Vec<Image>,
    labels: Vec<u8>,
    split: DatasetSplit,
    reads: [AtomicUsize; 3],
}

impl ImageDataset {
    pub fn new(images: Vec<Image>, labels: Vec<u8>, split: DatasetSplit) -> Result<Self> {
        if images.len() != labels.len() || split.len() != images.len() {
            return Err(Error::shape(format!(
                "{} images, {} labels, split covers {}",
                images.len(),
                labels.len(),
                split.len()
            )));
        }
        if let Some(first) = images.first() {
            if images
                .iter()
                .any(|im| im.height() != first.height() || im.width() != first.width())
            {
                return Err(Error::shape("all images must share one size"));
            }
        }
        Ok(Self {
            images,
            labels,
            split,
            reads: Default::default(),
        })
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn view(&self, part: SplitPart) -> SplitView<'_> {
        let range = match part {
            SplitPart::Train => self.split.train.clone(),
            SplitPart::Val => self.split.val.clone(),
            SplitPart::Test => self.split.test.clone(),
        };
        SplitView {
            dataset: self,
            part,
            range,
        }
    }

    /// Number of image or label reads served from `part`.
    pub fn reads(&self, part: SplitPart) -> usize {
        self.reads[part as usize].load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct SplitView<'a> {
    dataset: &'a ImageDataset,
    part: SplitPart,
    range: std::ops::Range<usize>,
}

impl<'a> SplitView<'a> {
    pub fn part(&self) -> SplitPart {
        self.part
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    fn touch(&self, n: usize) {
        self.dataset.reads[self.part as usize].fetch_add(n, Ordering::Relaxed);
    }

    pub fn image(&self, i: usize) -> &'a Image {
        self.touch(1);
        &self.dataset.images[self.range.start + i]
    }

    pub fn labels(&self) -> &'a [u8] {
        self.touch(self.len());
        &self.dataset.labels[self.range.clone()]
    }

    /// `[B, 3, H, W]` batch for the given view-local indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::new();
        let (mut h, mut w) = (0, 0);
        for &i in indices {
            let im = self.image(i);
            h = im.height();
            w = im.width();
            data.extend(im.to_planar());
        }
        Tensor::new(vec![indices.len(), CHANNELS, h, w], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: SimpleCnn,
    pub threshold: f64,
    /// F1 on the validation split at `threshold`.
    pub val_f1: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Input `(height, width)` the network was trained on.
    pub input_size: (usize, usize),
}

impl TrainedModel {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    /// `epoch,train_loss,val_loss,lr` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        out
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut records = self.model.to_records();
        let meta = |name: &str, v: f32| NamedTensor {
            name: name.to_string(),
            tensor: Tensor::scalar(v),
        };
        records.push(meta("meta.threshold", self.threshold as f32));
        records.push(meta("meta.val_f1", self.val_f1 as f32));
        records.push(meta("meta.best_epoch", self.best_epoch as f32));
        records.push(meta("meta.input_height", self.input_size.0 as f32));
        records.push(meta("meta.input_width", self.input_size.1 as f32));
        checkpoint::encode(&records)
    }

    /// Restores weights, running statistics and the tuned threshold. The
    /// training history is not part of the checkpoint.
    pub fn from_checkpoint_bytes(bytes: &[u8], base: CnnConfig) -> Result<Self> {
        let records = checkpoint::decode(bytes)?;
        let model = SimpleCnn::from_records(&records, base)?;
        let meta = |name: &str| -> Result<f64> {
            records
                .iter()
                .find(|r| r.name == name)
                .and_then(|r| r.tensor.data().first().copied())
                .map(f64::from)
                .ok_or_else(|| Error::Format {
                    kind: "CVCK",
                    message: format!("missing record {name}"),
                })
        };
        Ok(Self {
            model,
            threshold: meta("meta.threshold")?,
            val_f1: meta("meta.val_f1")?,
            history: Vec::new(),
            best_epoch: meta("meta.best_epoch")? as usize,
            input_size: (
                meta("meta.input_height")? as usize,
                meta("meta.input_width")? as usize,
            ),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_checkpoint_bytes(&bytes, CnnConfig::default())
    }

    /// Bull probabilities for a slice of images, evaluation mode.
    pub fn predict(&self, images: &[&Image], batch_size: usize) -> Result<Vec<f64>> {
        for im in images {
            if (im.height(), im.width()) != self.input_size {
                return Err(Error::shape(format!(
                    "image is {}x{}, model was trained on {}x{}",
                    im.height(),
                    im.width(),
                    self.input_size.0,
                    self.input_size.1
                )));
            }
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch_size.max(1)) {
            let mut data = Vec::new();
            for im in chunk {
                data.extend(im.to_planar());
            }
            let x = Tensor::new(vec![chunk.len(), CHANNELS, self.input_size.0, self.input_size.1], data)?;
            let mut g = Graph::new();
            let f = self.model.forward_eval(&mut g, x)?;
            out.extend(g.value(f.logits).data().iter().map(|&z| f64::from(sigmoid(z))));
        }
        Ok(out)
    }
}

fn batch_targets(labels: &[u8], indices: &[usize]) -> Vec<f32> {
    indices.iter().map(|&i| f32::from(labels[i])).collect()
}

/// Mean class-weighted BCE and sigmoid scores over a view, evaluation mode.
fn evaluate_view(
    model: &SimpleCnn,
    view: &SplitView<'_>,
    labels: &[u8],
    pos_weight: f32,
    batch_size: usize,
) -> Result<(f64, Vec<f64>)> {
    let order: Vec<usize> = (0..view.len()).collect();
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(view.len());
    for chunk in order.chunks(batch_size) {
        let mut g = Graph::new();
        let f = model.forward_eval(&mut g, view.batch(chunk)?)?;
        let loss = g.bce_with_logits(f.logits, &batch_targets(labels, chunk), pos_weight)?;
        total += f64::from(g.value(loss).data()[0]) * chunk.len() as f64;
        scores.extend(g.value(f.logits).data().iter().map(|&z| f64::from(sigmoid(z))));
    }
    Ok((total / view.len() as f64, scores))
}

/// Trains `model` on `train`, selecting weights and threshold on `val`.
///
/// The train split is reshuffled each epoch with a generator seeded from
/// `config.seed`; the same generator drives dropout. The returned model holds
/// the weights of the epoch with the lowest validation loss.
pub fn fit(
    mut model: SimpleCnn,
    train: &SplitView<'_>,
    val: &SplitView<'_>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    let train_labels = train.labels();
    let val_labels = val.labels();
    let pos_weight = class_pos_weight(train_labels)? as f32;
    let probe = train.image(0);
    let input_size = (probe.height(), probe.width());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamW::new(config.adamw());
    let mut scheduler = PlateauScheduler::new(config.lr, config.plateau_factor, config.plateau_patience);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let f = model.forward_train(&mut g, train.batch(chunk)?, &mut rng)?;
            let loss = g.bce_with_logits(f.logits, &batch_targets(train_labels, chunk), pos_weight)?;
            total += f64::from(g.value(loss).data()[0]) * chunk.len() as f64;
            g.backward(loss)?;
            let grads = f
                .params
                .iter()
                .map(|&v| g.take_grad(v).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
                .collect::<Vec<_>>();
            optimizer.step(model.params_mut(), &grads, lr)?;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, _) = evaluate_view(&model, val, val_labels, pos_weight, config.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        scheduler.observe(val_loss);
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = model.clone();
        }
        if decision.stop {
            break;
        }
    }

    let (_, scores) = evaluate_view(&best, val, val_labels, pos_weight, config.batch_size)?;
    let (threshold, val_f1) = tune_threshold(&scores, val_labels)?;
    Ok(TrainedModel {
        model: best,
        threshold,
        val_f1,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        input_size,
    })
}

/// Smallest threshold maximizing F1 over the midpoints of consecutive
/// distinct scores plus `{0, 1}`. Returns `(threshold, f1)`.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass {
            positives,
            negatives: labels.len() - positives,
        });
    }
    if scores.len() != labels.len() {
        return Err(Error::shape("one score per label required"));
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Sweep ascending: predictions flip from 1 to 0 as the threshold passes
    // each score, so counts update incrementally.
    let mut ranked: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut tp, mut fp) = (positives, labels.len() - positives);
    let mut next = 0;
    let mut best = (candidates[0], -1.0);
    for &t in &candidates {
        while next < ranked.len() && ranked[next].0 < t {
            if ranked[next].1 == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            next += 1;
        }
        let f1 = Confusion {
            tp,
            fp,
            tn: labels.len() - positives - fp,
            fn_: positives - tp,
        }
        .f1();
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    debug_assert_eq!(confusion_at(scores, labels, best.0)?.f1(), best.1);
    Ok(best)
}
