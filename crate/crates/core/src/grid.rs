//! Voxel grid containers.
//!
//! Every container stores its samples x-fastest, then y, then z (then channel
//! for multi-channel maps). [`linear_index`] is the only place that formula lives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.nx && y < self.ny && z < self.nz
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(*self, 0, x, y, z)
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / self.slice_len();
        [x, y, z]
    }
}

/// `idx = ((c·nz + z)·ny + y)·nx + x`.
#[inline]
pub fn linear_index(dims: Dims, c: usize, x: usize, y: usize, z: usize) -> usize {
    ((c * dims.nz + z) * dims.ny + y) * dims.nx + x
}

/// Millimetres per voxel along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let s = Spacing { sx, sy, sz };
        s.validate()?;
        Ok(s)
    }

    pub const fn isotropic() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidSpacing(a))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Spacing {
            sx: self.sx * s,
            sy: self.sy * s,
            sz: self.sz * s,
        }
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::isotropic()
    }
}

/// Physical position of a voxel centre in millimetres.
pub fn voxel_to_world(index: [usize; 3], dims: Dims, spacing: Spacing) -> Result<[f64; 3]> {
    let [i, j, k] = index;
    if !dims.contains(i, j, k) {
        return Err(Error::OutOfBounds {
            x: i,
            y: j,
            z: k,
            dims: dims.as_array(),
        });
    }
    Ok([
        i as f64 * spacing.sx,
        j as f64 * spacing.sy,
        k as f64 * spacing.sz,
    ])
}

/// A single-channel 3D grid of samples with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

/// Scalar field (images, probabilities, geodesic channels).
pub type Volume = Grid<f32>;

/// Binary mask.
pub type Mask = Grid<bool>;

impl<T> Grid<T> {
    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "payload has {} samples, dims {:?} need {}",
                data.len(),
                dims.as_array(),
                dims.len()
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            data,
        })
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Grid {
            dims,
            spacing,
            data,
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn checked_get(&self, x: usize, y: usize, z: usize) -> Result<&T> {
        if !self.dims.contains(x, y, z) {
            return Err(Error::OutOfBounds {
                x,
                y,
                z,
                dims: self.dims.as_array(),
            });
        }
        Ok(self.get(x, y, z))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_geometry<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn ensure_same_geometry<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::DimsMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.dims.as_array(),
                self.spacing.as_array(),
                other.dims.as_array(),
                other.spacing.as_array()
            )))
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Self {
        Grid {
            dims,
            spacing,
            data: vec![value; dims.len()],
        }
    }

    /// Copy of one z-slice as a row-major `ny × nx` buffer.
    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.dims.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [T] {
        let n = self.dims.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }
}

impl Volume {
    /// Builds a field and rejects NaN or infinite samples.
    pub fn finite(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Grid::from_vec(dims, spacing, data)
    }
}

impl Mask {
    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Grid::filled(dims, spacing, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    /// `self − other`.
    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        debug_assert_eq!(self.dims, other.dims);
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Foreground voxel coordinates in linear-index order.
    pub fn foreground(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.dims.coords(i))
            .collect()
    }

    pub fn to_volume(&self) -> Volume {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

/// Anatomical classes. Foreground classes appear in channel order LV, RV, MYO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Background = 0,
    Lv = 1,
    Rv = 2,
    Myo = 3,
}

impl Class {
    pub const FOREGROUND: [Class; 3] = [Class::Lv, Class::Rv, Class::Myo];
    pub const ALL: [Class; 4] = [Class::Background, Class::Lv, Class::Rv, Class::Myo];
    pub const COUNT: usize = 4;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "BG",
            Class::Lv => "LV",
            Class::Rv => "RV",
            Class::Myo => "MYO",
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-voxel class IDs in `{0, 1, 2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap(Grid<u8>);

impl LabelMap {
    pub fn new(grid: Grid<u8>) -> Result<Self> {
        if let Some((index, &value)) = grid
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= Class::COUNT)
        {
            return Err(Error::InvalidLabel { index, value });
        }
        Ok(LabelMap(grid))
    }

    pub fn background(dims: Dims, spacing: Spacing) -> Self {
        LabelMap(Grid::filled(dims, spacing, 0))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<u8> {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }

    pub fn data(&self) -> &[u8] {
        self.0.data()
    }

    pub fn class_at(&self, x: usize, y: usize, z: usize) -> Class {
        Class::from_id(*self.0.get(x, y, z)).expect("label invariant")
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, class: Class) {
        self.0.set(x, y, z, class.id());
    }

    /// Binary view `class == c`.
    pub fn mask(&self, class: Class) -> Mask {
        let id = class.id();
        self.0.map(|&v| v == id)
    }

    /// Paints `mask` with `class`, overwriting whatever was there.
    pub fn paint(&mut self, mask: &Mask, class: Class) {
        for (dst, &m) in self.0.data_mut().iter_mut().zip(mask.data()) {
            if m {
                *dst = class.id();
            }
        }
    }
}

/// Ordered channels sharing one geometry, each with a role name.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelMap {
    channels: Vec<Volume>,
    roles: Vec<String>,
}

impl MultiChannelMap {
    pub fn new(channels: Vec<Volume>, roles: Vec<String>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::DimsMismatch("multi-channel map needs at least one channel".into()));
        }
        if channels.len() != roles.len() {
            return Err(Error::DimsMismatch(format!(
                "{} channels but {} role names",
                channels.len(),
                roles.len()
            )));
        }
        for c in &channels[1..] {
            channels[0].ensure_same_geometry(c)?;
        }
        Ok(MultiChannelMap { channels, roles })
    }

    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &Volume {
        &self.channels[i]
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.channels[0].dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.channels[0].spacing()
    }

    /// Checks that channels sum to one at every voxel within `tol`.
    pub fn is_probability_map(&self, tol: f32) -> bool {
        let n = self.dims().len();
        (0..n).all(|i| {
            let s: f32 = self.channels.iter().map(|c| c.data()[i]).sum();
            (s - 1.0).abs() <= tol
        })
    }

    /// Channel-major concatenation of all samples.
    pub fn flat(&self) -> Vec<f32> {
        self.channels.iter().flat_map(|c| c.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn voxel_to_world_examples() {
        let d = Dims::new(8, 8, 8);
        let one = Spacing::isotropic();
        assert_eq!(voxel_to_world([0, 0, 0], d, one).unwrap(), [0.0, 0.0, 0.0]);
        let s = Spacing::new(2.0, 1.0, 1.0).unwrap();
        assert_eq!(voxel_to_world([3, 0, 0], d, s).unwrap(), [6.0, 0.0, 0.0]);
        let s = Spacing::new(1.5, 1.5, 5.0).unwrap();
        assert_eq!(voxel_to_world([1, 2, 3], d, s).unwrap(), [1.5, 3.0, 15.0]);
        assert!(matches!(
            voxel_to_world([8, 0, 0], d, one),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn spacing_must_be_positive() {
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, -1.0, 1.0).is_err());
        assert!(Spacing::new(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn payload_length_checked() {
        let r = Grid::from_vec(Dims::new(2, 2, 2), Spacing::isotropic(), vec![0u8; 7]);
        assert!(matches!(r, Err(Error::DimsMismatch(_))));
    }

    #[test]
    fn labels_reject_unknown_ids() {
        let g = Grid::from_vec(Dims::new(2, 1, 1), Spacing::isotropic(), vec![1u8, 4]).unwrap();
        assert!(matches!(
            LabelMap::new(g),
            Err(Error::InvalidLabel { index: 1, value: 4 })
        ));
    }

    #[test]
    fn volume_rejects_non_finite() {
        let r = Volume::finite(Dims::new(2, 1, 1), Spacing::isotropic(), vec![0.0, f32::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(1))));
    }

    #[test]
    fn multichannel_geometry_checked() {
        let a = Volume::filled(Dims::new(2, 2, 1), Spacing::isotropic(), 0.0);
        let b = Volume::filled(Dims::new(2, 1, 2), Spacing::isotropic(), 0.0);
        assert!(MultiChannelMap::new(vec![a.clone(), b], vec!["a".into(), "b".into()]).is_err());
        assert!(MultiChannelMap::new(vec![a], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn linear_index_is_a_bijection(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, nc in 1usize..4) {
            let dims = Dims::new(nx, ny, nz);
            let mut seen = vec![false; nx * ny * nz * nc];
            for c in 0..nc {
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let i = linear_index(dims, c, x, y, z);
                            prop_assert!(i < seen.len());
                            prop_assert!(!seen[i]);
                            seen[i] = true;
                            if c == 0 {
                                prop_assert_eq!(dims.coords(i), [x, y, z]);
                            }
                        }
                    }
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
