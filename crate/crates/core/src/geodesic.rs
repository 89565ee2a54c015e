//! Per-object geodesic maps composed into the multi-channel prior input.
//!
//! Each foreground class gets its own channel, in the order LV, RV, MYO. A
//! channel holds the within-object arrival time from the class seed set,
//! divided by its maximum over the object, and is zero outside the object.

use serde::{Deserialize, Serialize};

use crate::eikonal::{fast_march, fast_march_point_sources, SpeedField};
use crate::error::{Error, Result};
use crate::grid::{Class, Grid, LabelMap, Mask, MultiChannelMap, Spacing, Volume};
use crate::morphology::{center_of_mass, connected_components, skeletonize, Connectivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// One seed per 6-connected component, at its (snapped) centroid.
    CenterOfMass,
    /// Every voxel of the per-slice skeleton.
    Skeleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicies {
    pub lv: SeedPolicy,
    pub rv: SeedPolicy,
    pub myo: SeedPolicy,
}

impl Default for SeedPolicies {
    fn default() -> Self {
        SeedPolicies {
            lv: SeedPolicy::CenterOfMass,
            rv: SeedPolicy::CenterOfMass,
            myo: SeedPolicy::Skeleton,
        }
    }
}

impl SeedPolicies {
    pub fn for_class(&self, class: Class) -> SeedPolicy {
        match class {
            Class::Lv => self.lv,
            Class::Rv => self.rv,
            Class::Myo => self.myo,
            Class::Background => panic!("background has no seed policy"),
        }
    }
}

/// Seed voxels for one object.
///
/// Under the skeleton policy, a 6-connected component that contains no
/// skeleton voxel (possible when a slice piece only touches the rest
/// diagonally) also receives its centroid, so every object voxel is reachable.
pub fn build_seeds(mask: &Mask, policy: SeedPolicy) -> Result<Vec<[usize; 3]>> {
    if mask.is_empty_mask() {
        return Err(Error::EmptyMask);
    }
    let comps = connected_components(mask, Connectivity::Six);
    match policy {
        SeedPolicy::CenterOfMass => (1..=comps.count as u32)
            .map(|id| center_of_mass(&comps.mask_of(id)))
            .collect(),
        SeedPolicy::Skeleton => {
            let skel = skeletonize(mask);
            let mut seeds = skel.foreground();
            let mut covered = vec![false; comps.count + 1];
            for &[x, y, z] in &seeds {
                covered[*comps.labels.get(x, y, z) as usize] = true;
            }
            for id in 1..=comps.count {
                if !covered[id] {
                    seeds.push(center_of_mass(&comps.mask_of(id as u32))?);
                }
            }
            seeds.sort_by_key(|&[x, y, z]| mask.dims().index(x, y, z));
            Ok(seeds)
        }
    }
}

/// Raw within-object arrival times (`F ≡ 1`), `+∞` outside the object.
pub fn object_geodesic(mask: &Mask, policy: SeedPolicy, spacing: Spacing) -> Result<Grid<f64>> {
    let seeds = build_seeds(mask, policy)?;
    let times = match policy {
        SeedPolicy::CenterOfMass => fast_march_point_sources::<f64>(mask, &seeds, &SpeedField::Uniform, spacing)?,
        SeedPolicy::Skeleton => fast_march(mask, &seeds, &SpeedField::Uniform, spacing)?,
    };
    let unreached = times
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(t, &m)| m && !t.is_finite())
        .count();
    assert_eq!(unreached, 0, "per-component seeding leaves no object voxel unreached");
    Ok(times)
}

/// Geodesic prior input `G = F_geo(B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicMap {
    pub map: MultiChannelMap,
    /// Foreground classes absent from the labels; their channel is all zero.
    pub empty_classes: Vec<Class>,
}

fn normalized_channel(times: &Grid<f64>, mask: &Mask) -> Volume {
    let max = times
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|(&t, _)| t)
        .fold(0.0f64, f64::max);
    let data = times
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&t, &m)| if m && max > 0.0 { (t / max) as f32 } else { 0.0 })
        .collect();
    Grid::from_vec(mask.dims(), mask.spacing(), data).expect("same dims")
}

pub fn channel_roles() -> Vec<String> {
    Class::FOREGROUND.iter().map(|c| c.name().to_string()).collect()
}

/// One normalized geodesic channel per foreground class.
pub fn compose_channels(labels: &LabelMap, policies: &SeedPolicies, spacing: Spacing) -> Result<GeodesicMap> {
    let mut channels = Vec::with_capacity(3);
    let mut empty_classes = Vec::new();
    for class in Class::FOREGROUND {
        let mask = labels.mask(class);
        if mask.is_empty_mask() {
            log::warn!("class {class} is empty; its geodesic channel is all zero");
            empty_classes.push(class);
            channels.push(Grid::filled(labels.dims(), labels.spacing(), 0.0f32));
            continue;
        }
        let times = object_geodesic(&mask, policies.for_class(class), spacing)?;
        channels.push(normalized_channel(&times, &mask));
    }
    Ok(GeodesicMap {
        map: MultiChannelMap::new(channels, channel_roles())?,
        empty_classes,
    })
}

/// One binary channel per foreground class: the binary-prior input.
pub fn binary_channels(labels: &LabelMap) -> MultiChannelMap {
    let channels = Class::FOREGROUND
        .iter()
        .map(|&c| labels.mask(c).to_volume())
        .collect();
    MultiChannelMap::new(channels, channel_roles()).expect("same geometry")
}
