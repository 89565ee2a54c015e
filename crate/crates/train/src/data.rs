//! Conversion between volumes and network tensors.

use geoprior_core::geodesic::{binary_channels, compose_channels, SeedPolicies};
use geoprior_core::{Class, Grid, LabelMap, MultiChannelMap, Volume};
use geoprior_nn::{Real, Tensor};

use crate::config::PriorMode;
use crate::error::{Error, Result};

/// One training image with the labels it is trained on and, in prior modes,
/// the prior maps derived from those labels.
#[derive(Debug, Clone)]
pub struct SegExample {
    pub image: Volume,
    pub labels: LabelMap,
    pub prior: Option<MultiChannelMap>,
}

/// A validation or test image with its clean labels.
#[derive(Debug, Clone)]
pub struct EvalExample {
    pub image: Volume,
    pub clean: LabelMap,
}

/// Autoencoder input maps with the labels they reconstruct.
#[derive(Debug, Clone)]
pub struct PriorExample {
    pub maps: MultiChannelMap,
    pub labels: LabelMap,
}

/// Prior maps of `labels` for `mode`; `None` in mode none.
pub fn prior_maps(labels: &LabelMap, mode: PriorMode, policies: &SeedPolicies) -> Result<Option<MultiChannelMap>> {
    Ok(match mode {
        PriorMode::None => None,
        PriorMode::Binary => Some(binary_channels(labels)),
        PriorMode::Geodesic => Some(compose_channels(labels, policies, labels.spacing())?.map),
    })
}

pub fn image_batch<T: Real>(images: &[&Volume]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let d = first.dims();
    let mut data = Vec::with_capacity(images.len() * d.len());
    for im in images {
        if im.dims() != d {
            return Err(Error::Config("images of different sizes in one batch".into()));
        }
        data.extend(im.data().iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::new([images.len(), 1, d.nz, d.ny, d.nx], data)?)
}

pub fn map_batch<T: Real>(maps: &[&MultiChannelMap]) -> Result<Tensor<T>> {
    let first = maps.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (d, c) = (first.dims(), first.len());
    let mut data = Vec::with_capacity(maps.len() * c * d.len());
    for m in maps {
        if m.dims() != d || m.len() != c {
            return Err(Error::Config("prior maps of different shapes in one batch".into()));
        }
        data.extend(m.flat().iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::new([maps.len(), c, d.nz, d.ny, d.nx], data)?)
}

pub fn label_batch(labels: &[&LabelMap]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.data().iter().copied()).collect()
}

/// Most probable class per voxel of sample `b`; ties go to the lower class.
pub fn argmax_labels<T: Real>(probs: &Tensor<T>, b: usize, like: &LabelMap) -> Result<LabelMap> {
    let [_, c, ..] = probs.shape();
    let v = probs.voxels();
    if v != like.dims().len() {
        return Err(Error::Config(format!("{v} voxels predicted for a {} voxel grid", like.dims().len())));
    }
    let p = &probs.data()[b * c * v..(b + 1) * c * v];
    let data = (0..v)
        .map(|i| {
            let mut best = 0;
            for ch in 1..c {
                if p[ch * v + i] > p[best * v + i] {
                    best = ch;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMap::new(Grid::from_vec(like.dims(), like.spacing(), data)?)?)
}

/// Fraction of each foreground class among the labels, for logging.
pub fn class_fractions(labels: &LabelMap) -> [f64; 3] {
    let n = labels.data().len().max(1) as f64;
    Class::FOREGROUND.map(|c| labels.mask(c).count() as f64 / n)
}
