//! Synthetic inexpert annotations by shell corruption.
//!
//! Per class: split the mask into an eroded core and a boundary shell, drop
//! shell voxels (pepper) and add voxels of the outer band (salt) with
//! probability `p`, fill the holes of the corrupted shell slice by slice and
//! put the core back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Class, LabelMap, Mask};
use crate::metrics::{score_labels, ImageScores};
use crate::morphology::{dilate, erode, fill_holes, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseLevel {
    L1,
    L2,
}

impl NoiseLevel {
    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::L1 => "L1",
            NoiseLevel::L2 => "L2",
        }
    }
}

impl std::str::FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" => Ok(NoiseLevel::L1),
            "L2" | "l2" => Ok(NoiseLevel::L2),
            _ => Err(Error::InvalidParameter(format!("unknown noise level {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: NoiseLevel,
    /// Radius of the per-slice disk used to peel the shell, in voxels.
    pub erosion_radius: usize,
    /// Flip probability for shell (pepper) and outer band (salt) voxels.
    pub pepper_prob: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn l1() -> Self {
        NoiseSpec {
            level: NoiseLevel::L1,
            erosion_radius: 1,
            pepper_prob: 0.27,
            rng_seed: 7,
        }
    }

    pub fn l2() -> Self {
        NoiseSpec {
            level: NoiseLevel::L2,
            erosion_radius: 2,
            pepper_prob: 0.20,
            rng_seed: 7,
        }
    }

    pub fn for_level(level: NoiseLevel) -> Self {
        match level {
            NoiseLevel::L1 => Self::l1(),
            NoiseLevel::L2 => Self::l2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pepper_prob) {
            return Err(Error::InvalidParameter(format!("pepper_prob {} not in [0,1]", self.pepper_prob)));
        }
        if self.erosion_radius < 1 {
            return Err(Error::InvalidParameter("erosion_radius must be >= 1".into()));
        }
        Ok(())
    }

    /// These settings applied to image `index` of a corpus.
    pub fn for_image(&self, index: u64) -> Self {
        NoiseSpec {
            rng_seed: self.rng_seed ^ index,
            ..*self
        }
    }

    fn disk(&self) -> StructuringElement {
        StructuringElement::Disk(self.erosion_radius)
    }
}

/// `(core, shell)` with `core = erode(mask)` and `shell = mask − core`.
pub fn extract_shell(mask: &Mask, erosion_radius: usize) -> Result<(Mask, Mask)> {
    let core = erode(mask, StructuringElement::Disk(erosion_radius))?;
    let shell = mask.difference(&core);
    Ok((core, shell))
}

fn corrupt_object(mask: &Mask, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Mask> {
    let (core, shell) = extract_shell(mask, spec.erosion_radius)?;
    let reach = dilate(mask, spec.disk())?;
    let band = reach.difference(mask);
    let mut corrupted = shell.clone();
    for (i, &s) in shell.data().iter().enumerate() {
        if s && rng.random::<f64>() < spec.pepper_prob {
            corrupted.data_mut()[i] = false;
        }
    }
    for (i, &b) in band.data().iter().enumerate() {
        if b && rng.random::<f64>() < spec.pepper_prob {
            corrupted.data_mut()[i] = true;
        }
    }
    // Holes the clean object already has (the cavity of an annulus) are not
    // corruption and stay open.
    let own_holes = fill_holes(mask).difference(mask);
    let filled = fill_holes(&corrupted).intersection(&reach).difference(&own_holes);
    Ok(filled.union(&corrupted).union(&core))
}

/// Noisy labels from clean ones. Overlaps between corrupted classes go to
/// MYO, then LV, then RV.
pub fn synthesize_noisy(labels: &LabelMap, spec: &NoiseSpec) -> Result<LabelMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut noisy = [None, None, None];
    for (slot, class) in noisy.iter_mut().zip(Class::FOREGROUND) {
        *slot = Some(corrupt_object(&labels.mask(class), spec, &mut rng)?);
    }
    let [lv, rv, myo] = noisy.map(|m| m.expect("all classes corrupted"));
    let mut out = LabelMap::background(labels.dims(), labels.spacing());
    out.paint(&rv, Class::Rv);
    out.paint(&lv, Class::Lv);
    out.paint(&myo, Class::Myo);
    Ok(out)
}

/// Scores of the noisy labels against the clean ones: the noise ceiling.
pub fn upper_boundary(noisy: &LabelMap, clean: &LabelMap) -> Result<ImageScores> {
    if noisy.spacing() != clean.spacing() {
        return Err(Error::DimsMismatch("spacing differs".into()));
    }
    score_labels(noisy, clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, Grid, Spacing};

    fn square7() -> Mask {
        Grid::from_fn(Dims::new(9, 9, 1), Spacing::isotropic(), |x, y, _| {
            (1..8).contains(&x) && (1..8).contains(&y)
        })
    }

    #[test]
    fn shell_of_square() {
        let (core, shell) = extract_shell(&square7(), 1).unwrap();
        assert_eq!(core.count(), 25);
        assert_eq!(shell.count(), 24);
        assert!(core.intersection(&shell).is_empty_mask());
        assert_eq!(core.union(&shell), square7());
        let dot = Grid::from_fn(Dims::new(3, 3, 1), Spacing::isotropic(), |x, y, _| x == 1 && y == 1);
        let (c, s) = extract_shell(&dot, 1).unwrap();
        assert!(c.is_empty_mask());
        assert_eq!(s, dot);
        let e = Mask::empty(Dims::new(3, 3, 1), Spacing::isotropic());
        let (c, s) = extract_shell(&e, 2).unwrap();
        assert!(c.is_empty_mask() && s.is_empty_mask());
    }

    fn rings() -> LabelMap {
        let g = Grid::from_fn(Dims::new(24, 24, 2), Spacing::new(1.5, 1.5, 5.0).unwrap(), |x, y, _| {
            let d = ((x as f64 - 10.0).powi(2) + (y as f64 - 11.0).powi(2)).sqrt();
            if d <= 4.5 {
                1
            } else if d <= 7.5 {
                3
            } else if d <= 10.5 && x > 13 {
                2
            } else {
                0
            }
        });
        LabelMap::new(g).unwrap()
    }

    #[test]
    fn zero_probability_is_identity() {
        let labels = rings();
        for r in 1..=2 {
            let spec = NoiseSpec {
                pepper_prob: 0.0,
                erosion_radius: r,
                ..NoiseSpec::l1()
            };
            assert_eq!(synthesize_noisy(&labels, &spec).unwrap(), labels);
        }
    }

    #[test]
    fn invalid_spec() {
        let spec = NoiseSpec {
            pepper_prob: 1.5,
            ..NoiseSpec::l1()
        };
        assert!(synthesize_noisy(&rings(), &spec).is_err());
        let spec = NoiseSpec {
            erosion_radius: 0,
            ..NoiseSpec::l1()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn noisy_labels_stay_in_support_band() {
        let labels = rings();
        for spec in [NoiseSpec::l1(), NoiseSpec::l2(), NoiseSpec { pepper_prob: 1.0, ..NoiseSpec::l2() }] {
            for seed in 0..4 {
                let spec = spec.for_image(seed);
                let noisy = synthesize_noisy(&labels, &spec).unwrap();
                for class in Class::FOREGROUND {
                    let clean = labels.mask(class);
                    let n = noisy.mask(class);
                    assert!(n.is_subset_of(&dilate(&clean, spec.disk()).unwrap()));
                    assert!(erode(&clean, spec.disk()).unwrap().is_subset_of(&n));
                }
                assert_eq!(synthesize_noisy(&labels, &spec).unwrap(), noisy);
            }
        }
    }

    #[test]
    fn noise_lowers_dice() {
        let labels = rings();
        let noisy = synthesize_noisy(&labels, &NoiseSpec::l2()).unwrap();
        assert_ne!(noisy, labels);
        let scores = upper_boundary(&noisy, &labels).unwrap();
        assert!(scores.iter().all(|s| s.dice < 1.0 && s.dice > 0.3));
        let same = upper_boundary(&labels, &labels).unwrap();
        assert!(same.iter().all(|s| s.dice == 1.0 && s.hd_mm == Some(0.0)));
    }

    #[test]
    fn empty_noisy_class_scores_zero() {
        let labels = rings();
        let mut noisy = labels.clone();
        noisy.paint(&labels.mask(Class::Rv), Class::Background);
        let s = upper_boundary(&noisy, &labels).unwrap();
        assert_eq!(s[1].dice, 0.0);
        assert_eq!(s[1].hd_mm, None);
    }
}
