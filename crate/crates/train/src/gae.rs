//! First phase: the autoencoder learns to reconstruct labels from their
//! prior maps.

use geoprior_nn::{Adam, Gae, GaeConfig, Graph, Mode, Real, Tensor};
use serde::Serialize;

use crate::config::{EarlyStopping, TrainConfig, Verdict};
use crate::data::{label_batch, map_batch, PriorExample};
use crate::error::{Error, Result};
use crate::schedule::{minibatches, Control};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaeStep {
    pub step: u64,
    pub epoch: usize,
    pub l_recon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaeEpoch {
    pub epoch: usize,
    pub steps: u64,
    pub train_l_recon: f64,
    pub val_l_recon: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGae<T> {
    /// Parameters of the best validation epoch, frozen.
    pub model: Gae<T>,
    pub steps: Vec<GaeStep>,
    pub epochs: Vec<GaeEpoch>,
    pub best_epoch: usize,
}

/// Mean reconstruction cross-entropy in eval mode.
pub fn reconstruction_loss<T: Real>(model: &mut Gae<T>, examples: &[PriorExample], batch: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch.max(1)) {
        let maps: Vec<_> = chunk.iter().map(|e| &e.maps).collect();
        let labels: Vec<_> = chunk.iter().map(|e| &e.labels).collect();
        let mut g = Graph::new();
        let x = g.constant(map_batch::<T>(&maps)?);
        let l = model.logits(&mut g, x, Mode::Eval)?;
        let ce = g.softmax_ce(l, &label_batch(&labels))?;
        model.store.clear_bindings();
        total += g.value(ce).item().to_f64_lossy() * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

pub fn train_gae<T: Real>(
    train: &[PriorExample],
    val: &[PriorExample],
    arch: GaeConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&mut Gae<T>, &GaeEpoch) -> Result<Control>,
) -> Result<TrainedGae<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("autoencoder training needs training and validation maps".into()));
    }
    let mut model = Gae::<T>::new(arch, derive_seed(cfg.seed, "gae-init", 0))?;
    let adam = Adam::with_lr(cfg.lr);
    let mut stop = EarlyStopping::new(cfg.patience, false);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0u64;
    'epochs: for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut seen = 0usize;
        for idx in minibatches(train.len(), cfg.batch_size, cfg.seed, "gae-minibatch", epoch) {
            let maps: Vec<_> = idx.iter().map(|&i| &train[i].maps).collect();
            let labels: Vec<_> = idx.iter().map(|&i| &train[i].labels).collect();
            let mut g = Graph::new();
            let x = g.constant(map_batch::<T>(&maps)?);
            let l = model.logits(&mut g, x, Mode::Train)?;
            let ce = g.softmax_ce(l, &label_batch(&labels))?;
            let loss = g.value(ce).item().to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-gae",
                    epoch,
                    step,
                    loss,
                });
            }
            g.backward(ce)?;
            model.store.pull_grads(&g);
            adam.step(&mut model.store)?;
            step += 1;
            sum += loss * idx.len() as f64;
            seen += idx.len();
            steps.push(GaeStep { step, epoch, l_recon: loss });
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
        }
        let val_loss = reconstruction_loss(&mut model, val, cfg.batch_size)?;
        let log = GaeEpoch {
            epoch,
            steps: step,
            train_l_recon: sum / seen.max(1) as f64,
            val_l_recon: val_loss,
        };
        log::info!("gae epoch {epoch}: train {:.4} val {:.4}", log.train_l_recon, val_loss);
        let verdict = stop.update(val_loss);
        let control = on_epoch(&mut model, &log)?;
        epochs.push(log);
        if verdict == Verdict::Improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if verdict == Verdict::Stop || control == Control::Stop || cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    best.store.freeze();
    Ok(TrainedGae {
        model: best,
        steps,
        epochs,
        best_epoch,
    })
}

/// `Enc(G)` of every example, one `[1, L_feat, 1, 1, 1]` tensor each.
pub fn encode_all<T: Real>(gae: &mut Gae<T>, maps: &[&geoprior_core::MultiChannelMap], batch: usize) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(batch.max(1)) {
        let f = gae.features(&map_batch::<T>(chunk)?)?;
        out.extend((0..chunk.len()).map(|b| f.sample(b)));
    }
    Ok(out)
}
