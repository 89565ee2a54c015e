//! Cardiac-like phantoms: LV disk, MYO annulus around it and an RV crescent
//! against the MYO, with a noisy intensity image.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Class, Dims, Grid, LabelMap, Spacing, Volume};
use crate::io::{load_volume, save_volume};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    /// LV radius on the basal slice, voxels.
    pub lv_radius: Range,
    pub myo_thickness: Range,
    /// How far the RV reaches beyond the MYO, voxels.
    pub rv_width: Range,
    /// RV disk radius relative to the MYO outer radius; larger means a
    /// wider angular extent.
    pub rv_radius_factor: Range,
    /// Direction from the LV centre to the RV, degrees in the x-y plane.
    pub rv_angle_deg: Range,
    /// Relative radius shrink from the first to the last slice.
    pub z_taper: f64,
    /// Mean intensity per class, indexed by class id.
    pub intensity_means: [f64; 4],
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    pub margin: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims::new(32, 32, 8),
            spacing: Spacing::new(1.5, 1.5, 5.0).expect("valid spacing"),
            lv_radius: Range::new(5.0, 9.0),
            myo_thickness: Range::new(2.0, 4.0),
            rv_width: Range::new(3.0, 6.0),
            rv_radius_factor: Range::new(0.8, 1.2),
            rv_angle_deg: Range::new(150.0, 210.0),
            z_taper: 0.3,
            intensity_means: [0.2, 0.8, 0.7, 0.4],
            noise_sigma: 0.05,
            bias_amplitude: 0.1,
            margin: 2,
            seed: 7,
        }
    }
}

const MAX_ATTEMPTS: usize = 1000;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.spacing.validate()?;
        let ranges = [
            ("lv_radius", self.lv_radius),
            ("myo_thickness", self.myo_thickness),
            ("rv_width", self.rv_width),
            ("rv_radius_factor", self.rv_radius_factor),
            ("rv_angle_deg", self.rv_angle_deg),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(Error::InvalidParameter(format!("{name} range {r:?}")));
            }
        }
        if self.lv_radius.min < 2.0 || self.myo_thickness.min < 2.0 || self.rv_width.min < 1.0 {
            return Err(Error::InvalidParameter("shapes too thin to stay connected".into()));
        }
        if self.rv_radius_factor.min <= 0.0 {
            return Err(Error::InvalidParameter("rv_radius_factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.z_taper) || self.lv_radius.min * (1.0 - self.z_taper) < 2.0 {
            return Err(Error::InvalidParameter(format!("z_taper {} leaves no LV cavity", self.z_taper)));
        }
        if self.noise_sigma < 0.0 || !(0.0..1.0).contains(&self.bias_amplitude) {
            return Err(Error::InvalidParameter("noise parameters out of range".into()));
        }
        if self.dims.is_empty() {
            return Err(Error::InvalidParameter("empty dims".into()));
        }
        Ok(())
    }

    /// The RNG seed of phantom `index`.
    pub fn image_seed(&self, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"phantom");
        h.update(self.seed.to_le_bytes());
        h.update(index.to_le_bytes());
        h.finalize().into()
    }
}

/// Sampled geometry of one phantom, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub center: [f64; 2],
    pub lv_radius: f64,
    pub myo_thickness: f64,
    pub rv_center_offset: f64,
    pub rv_radius: f64,
    pub rv_direction: [f64; 2],
}

impl Geometry {
    fn scale(&self, z: usize, nz: usize, taper: f64) -> f64 {
        if nz <= 1 {
            1.0
        } else {
            1.0 - taper * z as f64 / (nz - 1) as f64
        }
    }

    /// Class of the in-plane point `(x, y)` on slice `z`.
    pub fn class_at(&self, x: f64, y: f64, z: usize, nz: usize, taper: f64) -> Class {
        let s = self.scale(z, nz, taper);
        let r_lv = self.lv_radius * s;
        let r_out = r_lv + self.myo_thickness;
        let d = ((x - self.center[0]).powi(2) + (y - self.center[1]).powi(2)).sqrt();
        if d <= r_lv {
            return Class::Lv;
        }
        if d <= r_out {
            return Class::Myo;
        }
        let rv_c = [
            self.center[0] + self.rv_direction[0] * self.rv_center_offset * s,
            self.center[1] + self.rv_direction[1] * self.rv_center_offset * s,
        ];
        if ((x - rv_c[0]).powi(2) + (y - rv_c[1]).powi(2)).sqrt() <= self.rv_radius * s {
            return Class::Rv;
        }
        Class::Background
    }

    /// Axis-aligned extent relative to the centre on the basal slice:
    /// `[min_x, max_x, min_y, max_y]`.
    fn extent(&self) -> [f64; 4] {
        let r_out = self.lv_radius + self.myo_thickness;
        let rv = [
            self.rv_direction[0] * self.rv_center_offset,
            self.rv_direction[1] * self.rv_center_offset,
        ];
        [
            (-r_out).min(rv[0] - self.rv_radius),
            r_out.max(rv[0] + self.rv_radius),
            (-r_out).min(rv[1] - self.rv_radius),
            r_out.max(rv[1] + self.rv_radius),
        ]
    }
}

fn sample_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Geometry> {
    let m = spec.margin as f64;
    let (nx, ny) = (spec.dims.nx as f64, spec.dims.ny as f64);
    for _ in 0..MAX_ATTEMPTS {
        let lv_radius = spec.lv_radius.sample(rng);
        let myo_thickness = spec.myo_thickness.sample(rng);
        let r_out = lv_radius + myo_thickness;
        let rv_width = spec.rv_width.sample(rng);
        let rv_radius = r_out * spec.rv_radius_factor.sample(rng);
        let angle = spec.rv_angle_deg.sample(rng) * PI / 180.0;
        let mut g = Geometry {
            center: [0.0, 0.0],
            lv_radius,
            myo_thickness,
            // The RV disk reaches `rv_width` past the MYO along its axis.
            rv_center_offset: r_out + rv_width - rv_radius,
            rv_radius,
            rv_direction: [angle.cos(), angle.sin()],
        };
        let e = g.extent();
        let (lo_x, hi_x) = (m - e[0], nx - 1.0 - m - e[1]);
        let (lo_y, hi_y) = (m - e[2], ny - 1.0 - m - e[3]);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        g.center = [
            Range::new(lo_x, hi_x).sample(rng),
            Range::new(lo_y, hi_y).sample(rng),
        ];
        return Ok(g);
    }
    Err(Error::GeometryDoesNotFit(format!(
        "no phantom fits {:?} with margin {} after {MAX_ATTEMPTS} draws",
        spec.dims, spec.margin
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume,
    pub labels: LabelMap,
    pub geometry: Geometry,
}

pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::from_seed(spec.image_seed(index));
    let geometry = sample_geometry(spec, &mut rng)?;
    let dims = spec.dims;
    let nz = dims.nz;
    let label_grid = Grid::from_fn(dims, spec.spacing, |x, y, z| {
        geometry.class_at(x as f64, y as f64, z, nz, spec.z_taper).id()
    });
    let labels = LabelMap::new(label_grid)?;

    // Smooth bias: one low-frequency product of sinusoids per phantom.
    let freq = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.0..0.5)];
    let phase = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let n = [dims.nx as f64, dims.ny as f64, nz.max(1) as f64];
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut data = Vec::with_capacity(dims.len());
    for z in 0..nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [x as f64, y as f64, z as f64];
                let b: f64 = (0..3).map(|a| (2.0 * PI * freq[a] * p[a] / n[a] + phase[a]).sin()).product();
                let mean = spec.intensity_means[*labels.grid().get(x, y, z) as usize];
                let v = (mean + noise.sample(&mut rng)) * (1.0 + spec.bias_amplitude * b);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let image = Volume::finite(dims, spec.spacing, data)?;
    Ok(Phantom { image, labels, geometry })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub index: u64,
    /// Relative to the dataset directory.
    pub image_path: String,
    pub label_path: String,
    pub split: Split,
    pub seed_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: PhantomSpec,
    pub split: [usize; 3],
    pub entries: Vec<DatasetEntry>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("dataset manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn split_of(i: usize, split: [usize; 3]) -> Split {
    if i < split[0] {
        Split::Train
    } else if i < split[0] + split[1] {
        Split::Val
    } else {
        Split::Test
    }
}

pub fn image_file_name(index: u64) -> String {
    format!("image_{index:04}.gpv")
}

pub fn label_file_name(index: u64) -> String {
    format!("labels_{index:04}.gpv")
}

/// Generate `n = train + val + test` phantoms into `dir` with a manifest.
/// Indices `0..train` form the training set, then validation, then test.
pub fn make_dataset(spec: &PhantomSpec, n: usize, split: [usize; 3], dir: &Path) -> Result<DatasetManifest> {
    if split.iter().sum::<usize>() != n {
        return Err(Error::InvalidParameter(format!("split {split:?} does not sum to {n}")));
    }
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let index = i as u64;
        let p = generate_phantom(spec, index)?;
        let (image_path, label_path) = (image_file_name(index), label_file_name(index));
        save_volume(&p.image, dir.join(&image_path))?;
        save_volume(&p.labels, dir.join(&label_path))?;
        entries.push(DatasetEntry {
            index,
            image_path,
            label_path,
            split: split_of(i, split),
            seed_hex: hex(&spec.image_seed(index)),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        split,
        entries,
    };
    let path = dir.join(DATASET_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load the image and label volumes of one entry.
pub fn load_entry(dir: &Path, entry: &DatasetEntry) -> Result<(Volume, LabelMap)> {
    Ok((load_volume(dir.join(&entry.image_path))?, load_volume(dir.join(&entry.label_path))?))
}

/// SHA-256 over the listed files (path and contents, in the given order).
pub fn hash_files(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let path = root.join(f);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(f.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

/// Content hash of a dataset directory: manifest plus every listed volume.
pub fn dataset_hash(dir: &Path, manifest: &DatasetManifest) -> Result<String> {
    let mut files = vec![PathBuf::from(DATASET_MANIFEST)];
    for e in &manifest.entries {
        files.push(PathBuf::from(&e.image_path));
        files.push(PathBuf::from(&e.label_path));
    }
    hash_files(dir, &files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{slice_component_counts, slice_hole_counts};

    #[test]
    fn phantoms_are_well_formed() {
        let spec = PhantomSpec::default();
        for i in 0..40 {
            let p = generate_phantom(&spec, i).unwrap();
            let myo = p.labels.mask(Class::Myo);
            let lv = p.labels.mask(Class::Lv);
            assert!(slice_hole_counts(&myo).iter().all(|&h| h == 1), "phantom {i}");
            assert!(slice_component_counts(&myo).iter().all(|&c| c == 1));
            assert!(slice_component_counts(&lv).iter().all(|&c| c == 1));
            assert!(slice_hole_counts(&lv).iter().all(|&h| h == 0));
            assert!(!p.labels.mask(Class::Rv).is_empty_mask());
            // Margin of two voxels on every side.
            let dims = spec.dims;
            for [x, y, _] in p.labels.grid().map(|&v| v != 0).foreground() {
                assert!(x >= 2 && y >= 2 && x + 2 < dims.nx && y + 2 < dims.ny, "phantom {i}");
            }
            let mean = |c: Class| {
                let m = p.labels.mask(c);
                let (s, n) = p
                    .image
                    .data()
                    .iter()
                    .zip(m.data())
                    .filter(|(_, &b)| b)
                    .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
                s / n as f64
            };
            let means = [Class::Background, Class::Myo, Class::Rv, Class::Lv].map(mean);
            assert!(means.windows(2).all(|w| w[0] < w[1]), "phantom {i}: {means:?}");
            assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rv_touches_myo() {
        let spec = PhantomSpec::default();
        for i in 0..20 {
            let p = generate_phantom(&spec, i).unwrap();
            let rv = p.labels.mask(Class::Rv);
            let myo = p.labels.mask(Class::Myo);
            let touching = rv.foreground().iter().any(|&[x, y, z]| {
                [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0 && ny >= 0 && myo.dims().contains(nx as usize, ny as usize, z) && *myo.get(nx as usize, ny as usize, z)
                })
            });
            assert!(touching, "phantom {i}");
        }
    }

    #[test]
    fn indices_differ_and_repeat() {
        let spec = PhantomSpec::default();
        let a = generate_phantom(&spec, 0).unwrap();
        let b = generate_phantom(&spec, 1).unwrap();
        assert_ne!(a.labels, b.labels);
        assert_eq!(a, generate_phantom(&spec, 0).unwrap());
        let other = PhantomSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_phantom(&other, 0).unwrap().labels, a.labels);
    }

    #[test]
    fn impossible_spec_is_rejected() {
        let spec = PhantomSpec {
            dims: Dims::new(16, 16, 2),
            ..PhantomSpec::default()
        };
        assert!(matches!(generate_phantom(&spec, 0), Err(Error::GeometryDoesNotFit(_))));
        let spec = PhantomSpec {
            z_taper: 0.9,
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&spec, 0).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::default();
        let m = make_dataset(&spec, 6, [3, 1, 2], dir.path()).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert_eq!(m.entries(Split::Train).count(), 3);
        assert_eq!(m.entries(Split::Val).count(), 1);
        assert_eq!(m.entries(Split::Test).count(), 2);
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        let (img, labels) = load_entry(dir.path(), &m.entries[4]).unwrap();
        let p = generate_phantom(&spec, 4).unwrap();
        assert_eq!(img, p.image);
        assert_eq!(labels, p.labels);
        let h1 = dataset_hash(dir.path(), &m).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = make_dataset(&spec, 6, [3, 1, 2], dir2.path()).unwrap();
        assert_eq!(h1, dataset_hash(dir2.path(), &m2).unwrap());
        assert!(make_dataset(&spec, 5, [3, 1, 2], dir.path()).is_err());
    }
}
