//! Second phase: the segmentor, optionally pulled towards the frozen
//! autoencoder's codes of the training labels.

use geoprior_nn::{Adam, Gae, Graph, Mode, Real, Segmentor, SegmentorConfig, Tensor};
use serde::Serialize;

use crate::config::{EarlyStopping, TrainConfig, Verdict};
use crate::data::{image_batch, label_batch, SegExample, EvalExample};
use crate::error::{Error, Result};
use crate::eval::validation_dice;
use crate::gae::encode_all;
use crate::losses::total_loss;
use crate::schedule::{minibatches, Control};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegStep {
    pub step: u64,
    pub epoch: usize,
    pub l_seg: f64,
    pub l_gae: Option<f64>,
    pub l_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub steps: u64,
    pub train_l_tot: f64,
    /// Mean validation dice per foreground class against clean labels.
    pub val_dice: [f64; 3],
}

impl SegEpoch {
    pub fn val_mean(&self) -> f64 {
        self.val_dice.iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSegmentor<T> {
    /// Parameters of the best validation epoch.
    pub model: Segmentor<T>,
    pub steps: Vec<SegStep>,
    pub epochs: Vec<SegEpoch>,
    pub best_epoch: usize,
    /// Autoencoder checksum, identical before and after training.
    pub gae_checksum: Option<String>,
}

pub fn train_segmentor<T: Real>(
    train: &[SegExample],
    val: &[EvalExample],
    arch: SegmentorConfig,
    cfg: &TrainConfig,
    mut gae: Option<&mut Gae<T>>,
    on_epoch: &mut dyn FnMut(&mut Segmentor<T>, &SegEpoch) -> Result<Control>,
) -> Result<TrainedSegmentor<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("segmentor training needs training and validation images".into()));
    }
    let checksum = gae.as_ref().map(|g| g.store.checksum());
    let feats: Option<Vec<Tensor<T>>> = match (cfg.prior.uses_gae(), gae.as_deref_mut()) {
        (false, _) => None,
        (true, None) => {
            return Err(Error::MissingStage(format!("prior mode {} needs a trained autoencoder (run train-gae)", cfg.prior)));
        }
        (true, Some(g)) => {
            if !g.store.is_frozen() {
                return Err(Error::Config("the autoencoder must be frozen before segmentor training".into()));
            }
            let maps = train
                .iter()
                .map(|e| {
                    e.prior
                        .as_ref()
                        .ok_or_else(|| Error::MissingStage(format!("prior maps for mode {} (run geodesic)", cfg.prior)))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(encode_all(g, &maps, cfg.batch_size)?)
        }
    };
    let lambda = T::from_f64_lossy(cfg.lambda_gae);
    // Shared by every prior mode, so runs differ only through the loss.
    let mut model = Segmentor::<T>::new(arch, derive_seed(cfg.seed, "segmentor-init", 0))?;
    let adam = Adam::with_lr(cfg.lr);
    let mut stop = EarlyStopping::new(cfg.patience, true);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut seen = 0usize;
        for idx in minibatches(train.len(), cfg.batch_size, cfg.seed, "segmentor-minibatch", epoch) {
            let images: Vec<_> = idx.iter().map(|&i| &train[i].image).collect();
            let labels: Vec<_> = idx.iter().map(|&i| &train[i].labels).collect();
            let mut g = Graph::new();
            let x = g.constant(image_batch::<T>(&images)?);
            let logits = model.logits(&mut g, x, Mode::Train)?;
            let prior = match (feats.as_ref(), gae.as_deref_mut()) {
                (Some(f), Some(gae)) => {
                    let target: Vec<Tensor<T>> = idx.iter().map(|&i| f[i].clone()).collect();
                    let t = g.constant(Tensor::stack(&target)?);
                    Some((gae, t))
                }
                _ => None,
            };
            let nodes = total_loss(&mut g, logits, &label_batch(&labels), prior, lambda)?;
            let l_tot = g.value(nodes.total).item().to_f64_lossy();
            if !l_tot.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-seg",
                    epoch,
                    step,
                    loss: l_tot,
                });
            }
            g.backward(nodes.total)?;
            model.store.pull_grads(&g);
            adam.step(&mut model.store)?;
            step += 1;
            sum += l_tot * idx.len() as f64;
            seen += idx.len();
            steps.push(SegStep {
                step,
                epoch,
                l_seg: g.value(nodes.seg).item().to_f64_lossy(),
                l_gae: nodes.gae.map(|n| g.value(n).item().to_f64_lossy()),
                l_tot,
            });
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
        }
        let log = SegEpoch {
            epoch,
            steps: step,
            train_l_tot: sum / seen.max(1) as f64,
            val_dice: validation_dice(&mut model, val, cfg.batch_size)?,
        };
        log::info!("segmentor epoch {epoch}: loss {:.4} val DI {:.4}", log.train_l_tot, log.val_mean());
        let verdict = stop.update(log.val_mean());
        let control = on_epoch(&mut model, &log)?;
        epochs.push(log);
        if verdict == Verdict::Improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if verdict == Verdict::Stop || control == Control::Stop || cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }
    let after = gae.as_ref().map(|g| g.store.checksum());
    if after != checksum {
        return Err(Error::GaeMutated);
    }
    Ok(TrainedSegmentor {
        model: best,
        steps,
        epochs,
        best_epoch,
        gae_checksum: checksum,
    })
}
