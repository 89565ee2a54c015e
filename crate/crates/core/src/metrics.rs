//! Dice index, Hausdorff distance and corpus-level aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Class, Grid, LabelMap, Mask, Spacing};

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)`, 1 when both are empty.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<f64> {
    check_dims(pred, reference)?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        a += p as usize;
        b += r as usize;
        inter += (p && r) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest
/// foreground voxel of `mask`; `+∞` everywhere if the mask is empty.
pub fn squared_distance_transform(mask: &Mask, spacing: Spacing) -> Grid<f64> {
    let dims = mask.dims();
    let mut d: Vec<f64> = mask
        .data()
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();
    let n = [dims.nx, dims.ny, dims.nz];
    let stride = [1, dims.nx, dims.nx * dims.ny];
    let h = spacing.as_array();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let len = n[axis];
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for j in 0..n[a2] {
            for i in 0..n[a1] {
                let base = i * stride[a1] + j * stride[a2];
                line.clear();
                line.extend((0..len).map(|k| d[base + k * stride[axis]]));
                lower_envelope(&line, h[axis], &mut out);
                for (k, &v) in out.iter().enumerate() {
                    d[base + k * stride[axis]] = v;
                }
            }
        }
    }
    Grid::from_vec(dims, spacing, d).expect("same dims")
}

/// One pass of the Felzenszwalb–Huttenlocher lower envelope of parabolas
/// `f(q) + (h·(p − q))²`.
fn lower_envelope(f: &[f64], h: f64, out: &mut Vec<f64>) {
    out.clear();
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.resize(f.len(), f64::INFINITY);
        return;
    }
    let key = |q: usize| f[q] + (h * q as f64).powi(2);
    let meet = |p: usize, q: usize| (key(q) - key(p)) / (2.0 * h * h * (q as f64 - p as f64));
    let mut v = vec![sites[0]; sites.len()];
    let mut z = vec![f64::INFINITY; sites.len() + 1];
    z[0] = f64::NEG_INFINITY;
    let mut k = 0;
    for &q in &sites[1..] {
        let mut s = meet(v[k], q);
        while s <= z[k] {
            k -= 1;
            s = meet(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for p in 0..f.len() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        out.push(f[q] + (h * (p as f64 - q as f64)).powi(2));
    }
}

fn directed_hausdorff(from: &Mask, to_sq_dist: &Grid<f64>) -> f64 {
    from.data()
        .iter()
        .zip(to_sq_dist.data())
        .filter(|(&m, _)| m)
        .map(|(_, &d)| d)
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance in mm between foreground voxel sets;
/// `None` when either set is empty.
pub fn hausdorff(pred: &Mask, reference: &Mask, spacing: Spacing) -> Result<Option<f64>> {
    check_dims(pred, reference)?;
    spacing.validate()?;
    if pred.is_empty_mask() || reference.is_empty_mask() {
        return Ok(None);
    }
    let to_ref = squared_distance_transform(reference, spacing);
    let to_pred = squared_distance_transform(pred, spacing);
    Ok(Some(directed_hausdorff(pred, &to_ref).max(directed_hausdorff(reference, &to_pred))))
}

/// Quadratic pairwise Hausdorff distance, kept as a reference implementation.
pub fn hausdorff_brute_force(pred: &Mask, reference: &Mask, spacing: Spacing) -> Result<Option<f64>> {
    check_dims(pred, reference)?;
    if pred.is_empty_mask() || reference.is_empty_mask() {
        return Ok(None);
    }
    let h = spacing.as_array();
    let world = |p: &[usize; 3]| [p[0] as f64 * h[0], p[1] as f64 * h[1], p[2] as f64 * h[2]];
    let a: Vec<[f64; 3]> = pred.foreground().iter().map(world).collect();
    let b: Vec<[f64; 3]> = reference.foreground().iter().map(world).collect();
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
            .sqrt()
    };
    Ok(Some(directed(&a, &b).max(directed(&b, &a))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub dice: f64,
    /// `None` when prediction or reference is empty for the class.
    pub hd_mm: Option<f64>,
}

/// Per-class scores of one image, in the order LV, RV, MYO.
pub type ImageScores = [ClassScore; 3];

pub fn score_labels(pred: &LabelMap, reference: &LabelMap) -> Result<ImageScores> {
    if pred.dims() != reference.dims() {
        return Err(Error::DimsMismatch(format!("{:?} vs {:?}", pred.dims(), reference.dims())));
    }
    let spacing = reference.spacing();
    let mut out = [ClassScore { dice: 0.0, hd_mm: None }; 3];
    for (slot, class) in out.iter_mut().zip(Class::FOREGROUND) {
        let (p, r) = (pred.mask(class), reference.mask(class));
        *slot = ClassScore {
            dice: dice(&p, &r)?,
            hd_mm: hausdorff(&p, &r, spacing)?,
        };
    }
    Ok(out)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub noise_level: String,
    pub class: String,
    #[serde(rename = "DI_mean")]
    pub di_mean: f64,
    #[serde(rename = "DI_std")]
    pub di_std: f64,
    #[serde(rename = "HD_mean_mm")]
    pub hd_mean_mm: Option<f64>,
    #[serde(rename = "HD_std_mm")]
    pub hd_std_mm: Option<f64>,
    pub n_images: usize,
    #[serde(rename = "n_undefined_HD")]
    pub n_undefined_hd: usize,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn row(method: &str, noise: &str, class: &str, di: &[f64], hd: &[Option<f64>]) -> SummaryRow {
    let defined: Vec<f64> = hd.iter().flatten().copied().collect();
    let (di_mean, di_std) = mean_std(di).unwrap_or((f64::NAN, f64::NAN));
    let hd_stats = mean_std(&defined);
    SummaryRow {
        method: method.to_string(),
        noise_level: noise.to_string(),
        class: class.to_string(),
        di_mean,
        di_std,
        hd_mean_mm: hd_stats.map(|s| s.0),
        hd_std_mm: hd_stats.map(|s| s.1),
        n_images: di.len(),
        n_undefined_hd: hd.len() - defined.len(),
    }
}

/// Rows LV, RV, MYO and `Ave.` over a set of images.
///
/// The average row aggregates per-image class means; its HD per image is the
/// mean over the classes whose HD is defined, undefined if none is.
pub fn summarize(method: &str, noise_level: &str, scores: &[ImageScores]) -> Result<Vec<SummaryRow>> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no images to summarize".into()));
    }
    let mut rows = Vec::with_capacity(4);
    for (c, class) in Class::FOREGROUND.iter().enumerate() {
        let di: Vec<f64> = scores.iter().map(|s| s[c].dice).collect();
        let hd: Vec<Option<f64>> = scores.iter().map(|s| s[c].hd_mm).collect();
        rows.push(row(method, noise_level, class.name(), &di, &hd));
    }
    let di: Vec<f64> = scores.iter().map(|s| s.iter().map(|c| c.dice).sum::<f64>() / 3.0).collect();
    let hd: Vec<Option<f64>> = scores
        .iter()
        .map(|s| {
            let d: Vec<f64> = s.iter().filter_map(|c| c.hd_mm).collect();
            (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
        })
        .collect();
    rows.push(row(method, noise_level, "Ave.", &di, &hd));
    Ok(rows)
}

/// CSV with a header line; undefined HD statistics are empty fields.
pub fn write_csv<W: Write>(rows: &[SummaryRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> std::result::Result<Vec<SummaryRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use proptest::prelude::*;

    fn rect(dims: Dims, x0: usize, x1: usize, y0: usize, y1: usize) -> Mask {
        Grid::from_fn(dims, Spacing::isotropic(), |x, y, _| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn dice_examples() {
        let d = Dims::new(6, 4, 1);
        let a = rect(d, 0, 2, 0, 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &rect(d, 3, 5, 0, 2)).unwrap(), 0.0);
        assert_eq!(dice(&a, &rect(d, 1, 3, 0, 2)).unwrap(), 0.5);
        let e = Mask::empty(d, Spacing::isotropic());
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &Mask::empty(Dims::new(2, 2, 1), Spacing::isotropic())).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let d = Dims::new(10, 5, 1);
        let a = rect(d, 0, 3, 0, 3);
        let b = rect(d, 3, 6, 0, 3);
        let iso = Spacing::isotropic();
        assert_eq!(hausdorff(&a, &a, iso).unwrap(), Some(0.0));
        assert_eq!(hausdorff(&a, &b, iso).unwrap(), Some(3.0));
        assert_eq!(hausdorff_brute_force(&a, &b, iso).unwrap(), Some(3.0));
        let sx = Spacing::new(2.0, 1.0, 1.0).unwrap();
        assert_eq!(hausdorff(&a, &b, sx).unwrap(), Some(6.0));
        assert_eq!(hausdorff_brute_force(&a, &b, sx).unwrap(), Some(6.0));
        assert_eq!(hausdorff(&a, &Mask::empty(d, iso), iso).unwrap(), None);
    }

    #[test]
    fn summary_rows() {
        let s1 = [
            ClassScore { dice: 1.0, hd_mm: Some(0.0) },
            ClassScore { dice: 0.5, hd_mm: Some(2.0) },
            ClassScore { dice: 0.0, hd_mm: None },
        ];
        let s2 = [
            ClassScore { dice: 0.0, hd_mm: Some(4.0) },
            ClassScore { dice: 0.5, hd_mm: Some(2.0) },
            ClassScore { dice: 0.3, hd_mm: None },
        ];
        let rows = summarize("seg", "clean", &[s1, s2]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].di_mean, 0.5);
        assert!((rows[0].di_std - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[1].di_std, 0.0);
        assert_eq!(rows[2].hd_mean_mm, None);
        assert_eq!(rows[2].n_undefined_hd, 2);
        assert_eq!(rows[3].class, "Ave.");
        assert!((rows[3].di_mean - (0.5 + 0.5 + 0.15) / 3.0).abs() < 1e-12);
        assert_eq!(rows[3].hd_mean_mm, Some(2.0));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "method,noise_level,class,DI_mean,DI_std,HD_mean_mm,HD_std_mm,n_images,n_undefined_HD\n"
        ));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
        assert!(summarize("seg", "clean", &[]).is_err());
    }

    fn mask_strategy() -> impl Strategy<Value = (Mask, Mask, [f64; 3])> {
        (1usize..7, 1usize..7, 1usize..4).prop_flat_map(|(nx, ny, nz)| {
            let n = nx * ny * nz;
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
                [0.5f64..3.0, 0.5f64..3.0, 0.5f64..6.0],
            )
                .prop_map(move |(a, b, h)| {
                    let s = Spacing::new(h[0], h[1], h[2]).unwrap();
                    let d = Dims::new(nx, ny, nz);
                    (Grid::from_vec(d, s, a).unwrap(), Grid::from_vec(d, s, b).unwrap(), h)
                })
        })
    }

    proptest! {
        #[test]
        fn distance_transform_hausdorff_matches_brute_force((a, b, h) in mask_strategy()) {
            let s = Spacing::new(h[0], h[1], h[2]).unwrap();
            let fast = hausdorff(&a, &b, s).unwrap();
            let slow = hausdorff_brute_force(&a, &b, s).unwrap();
            match (fast, slow) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn metrics_are_symmetric((a, b, h) in mask_strategy()) {
            let s = Spacing::new(h[0], h[1], h[2]).unwrap();
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(hausdorff(&a, &b, s).unwrap(), hausdorff(&b, &a, s).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
            let d = dice(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            if !a.is_empty_mask() {
                prop_assert_eq!(hausdorff(&a, &a, s).unwrap(), Some(0.0));
            }
        }
    }
}
