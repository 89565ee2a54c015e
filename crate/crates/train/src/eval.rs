//! Prediction and scoring against clean labels.

use geoprior_core::metrics::{dice, score_labels, ImageScores};
use geoprior_core::{Class, LabelMap};
use geoprior_nn::{Real, Segmentor};

use crate::data::{argmax_labels, image_batch, EvalExample};
use crate::error::{Error, Result};

/// Hard labels for `examples`, predicted `batch` images at a time.
pub fn predict_labels<T: Real>(model: &mut Segmentor<T>, examples: &[EvalExample], batch: usize) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let images: Vec<_> = chunk.iter().map(|e| &e.image).collect();
        let probs = model.predict(&image_batch::<T>(&images)?)?;
        for (b, e) in chunk.iter().enumerate() {
            out.push(argmax_labels(&probs, b, &e.clean)?);
        }
    }
    Ok(out)
}

/// Mean per-class dice of predictions over `examples`.
pub fn validation_dice<T: Real>(model: &mut Segmentor<T>, examples: &[EvalExample], batch: usize) -> Result<[f64; 3]> {
    if examples.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let preds = predict_labels(model, examples, batch)?;
    let mut sum = [0.0; 3];
    for (p, e) in preds.iter().zip(examples) {
        for (s, c) in sum.iter_mut().zip(Class::FOREGROUND) {
            *s += dice(&p.mask(c), &e.clean.mask(c))?;
        }
    }
    Ok(sum.map(|s| s / examples.len() as f64))
}

/// Dice and Hausdorff per image and class for a test corpus.
pub fn evaluate_corpus<T: Real>(model: &mut Segmentor<T>, test: &[EvalExample], batch: usize) -> Result<Vec<ImageScores>> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let preds = predict_labels(model, test, batch)?;
    preds
        .iter()
        .zip(test)
        .map(|(p, e)| Ok(score_labels(p, &e.clean)?))
        .collect()
}
