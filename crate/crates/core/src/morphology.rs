//! Binary morphology on [`Mask`] grids.
//!
//! The 2D variants (`Cross4`, `Disk`) and the hole filling / thinning routines
//! work slice by slice in the x-y plane.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuringElement {
    /// 3D axis neighbours.
    Cross6,
    /// 3D Euclidean ball of integer radius.
    Ball(usize),
    /// In-plane axis neighbours.
    Cross4,
    /// In-plane Euclidean disk of integer radius.
    Disk(usize),
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement::Disk(1)
    }
}

impl StructuringElement {
    /// Offsets `(dx, dy, dz)` including the origin.
    pub fn offsets(self) -> Result<Vec<[isize; 3]>> {
        let ball = |r: usize, planar: bool| -> Result<Vec<[isize; 3]>> {
            if r == 0 {
                return Err(Error::InvalidParameter("structuring element radius must be >= 1".into()));
            }
            let r = r as isize;
            let zr = if planar { 0 } else { r };
            let mut out = Vec::new();
            for dz in -zr..=zr {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy + dz * dz <= r * r {
                            out.push([dx, dy, dz]);
                        }
                    }
                }
            }
            Ok(out)
        };
        match self {
            StructuringElement::Cross6 => Ok(vec![
                [0, 0, 0],
                [-1, 0, 0],
                [1, 0, 0],
                [0, -1, 0],
                [0, 1, 0],
                [0, 0, -1],
                [0, 0, 1],
            ]),
            StructuringElement::Cross4 => Ok(vec![[0, 0, 0], [-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0]]),
            StructuringElement::Ball(r) => ball(r, false),
            StructuringElement::Disk(r) => ball(r, true),
        }
    }
}

#[inline]
fn shifted(dims: Dims, x: usize, y: usize, z: usize, o: [isize; 3]) -> Option<usize> {
    let nx = x as isize + o[0];
    let ny = y as isize + o[1];
    let nz = z as isize + o[2];
    if nx < 0 || ny < 0 || nz < 0 {
        return None;
    }
    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
    dims.contains(nx, ny, nz).then(|| dims.index(nx, ny, nz))
}

/// Keeps a voxel iff every structuring-element neighbour is foreground.
/// Neighbours outside the grid count as background.
pub fn erode(mask: &Mask, se: StructuringElement) -> Result<Mask> {
    let offs = se.offsets()?;
    let dims = mask.dims();
    let src = mask.data();
    Ok(Grid::from_fn(dims, mask.spacing(), |x, y, z| {
        src[dims.index(x, y, z)]
            && offs
                .iter()
                .all(|&o| shifted(dims, x, y, z, o).is_some_and(|i| src[i]))
    }))
}

/// Sets a voxel iff any structuring-element neighbour is foreground.
pub fn dilate(mask: &Mask, se: StructuringElement) -> Result<Mask> {
    let offs = se.offsets()?;
    let dims = mask.dims();
    let src = mask.data();
    Ok(Grid::from_fn(dims, mask.spacing(), |x, y, z| {
        offs.iter()
            .any(|&o| shifted(dims, x, y, z, [-o[0], -o[1], -o[2]]).is_some_and(|i| src[i]))
    }))
}

/// Fills, per z-slice, every background region not 4-connected to the slice border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let dims = mask.dims();
    let (nx, ny) = (dims.nx, dims.ny);
    let mut out = mask.clone();
    let mut outside = vec![false; nx * ny];
    let mut queue = VecDeque::new();
    for z in 0..dims.nz {
        let slice = mask.slice(z);
        outside.iter_mut().for_each(|v| *v = false);
        for y in 0..ny {
            for x in 0..nx {
                let border = x == 0 || y == 0 || x + 1 == nx || y + 1 == ny;
                let i = y * nx + x;
                if border && !slice[i] && !outside[i] {
                    outside[i] = true;
                    queue.push_back((x, y));
                }
            }
        }
        while let Some((x, y)) = queue.pop_front() {
            for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (qx, qy) = (x as isize + dx, y as isize + dy);
                if qx < 0 || qy < 0 || qx >= nx as isize || qy >= ny as isize {
                    continue;
                }
                let j = qy as usize * nx + qx as usize;
                if !slice[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back((qx as usize, qy as usize));
                }
            }
        }
        for (o, &bg_outside) in out.slice_mut(z).iter_mut().zip(&outside) {
            *o = !bg_outside;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component IDs `1..=count` (0 is background), numbered in linear-index order
/// of each component's first voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Grid<u32>,
    pub count: usize,
}

impl Components {
    pub fn mask_of(&self, id: u32) -> Mask {
        self.labels.map(|&l| l == id)
    }
}

pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Components {
    let dims = mask.dims();
    let offs = connectivity.offsets();
    let src = mask.data();
    let mut labels = vec![0u32; dims.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..dims.len() {
        if !src[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let [x, y, z] = dims.coords(i);
            for &o in &offs {
                if let Some(j) = shifted(dims, x, y, z, o) {
                    if src[j] && labels[j] == 0 {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    Components {
        labels: Grid::from_vec(dims, mask.spacing(), labels).expect("same dims"),
        count: count as usize,
    }
}

/// Number of 8-connected foreground components in each z-slice.
pub fn slice_component_counts(mask: &Mask) -> Vec<usize> {
    let dims = mask.dims();
    (0..dims.nz)
        .map(|z| {
            let single = Grid::from_vec(
                Dims::new(dims.nx, dims.ny, 1),
                mask.spacing(),
                mask.slice(z).to_vec(),
            )
            .expect("slice dims");
            connected_components(&single, Connectivity::TwentySix).count
        })
        .collect()
}

/// Number of enclosed background regions (4-connected) in each z-slice.
pub fn slice_hole_counts(mask: &Mask) -> Vec<usize> {
    let filled = fill_holes(mask);
    let holes = filled.difference(mask);
    let dims = mask.dims();
    (0..dims.nz)
        .map(|z| {
            let single = Grid::from_vec(
                Dims::new(dims.nx, dims.ny, 1),
                mask.spacing(),
                holes.slice(z).to_vec(),
            )
            .expect("slice dims");
            connected_components(&single, Connectivity::Six).count
        })
        .collect()
}

/// Exact arithmetic mean of the foreground voxel indices.
pub fn centroid(mask: &Mask) -> Result<[f64; 3]> {
    let dims = mask.dims();
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for (i, &b) in mask.data().iter().enumerate() {
        if b {
            let c = dims.coords(i);
            for a in 0..3 {
                sum[a] += c[a] as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum.map(|s| s / n as f64))
}

/// Arithmetic mean of the foreground indices, rounded. When that voxel is
/// background the nearest foreground voxel (in index space) to the exact mean
/// is returned instead, ties going to the lowest linear index.
pub fn center_of_mass(mask: &Mask) -> Result<[usize; 3]> {
    let dims = mask.dims();
    let mean = centroid(mask)?;
    let rounded = [0, 1, 2].map(|a| (mean[a].round() as usize).min(dims.as_array()[a] - 1));
    if *mask.get(rounded[0], rounded[1], rounded[2]) {
        return Ok(rounded);
    }
    let mut best = (f64::INFINITY, 0usize);
    for (i, &b) in mask.data().iter().enumerate() {
        if b {
            let c = dims.coords(i);
            let d: f64 = (0..3).map(|a| (c[a] as f64 - mean[a]).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
    }
    Ok(dims.coords(best.1))
}

/// Per-slice thinning to a one-voxel-wide skeleton.
///
/// Two alternating sub-iterations mark boundary pixels with the usual
/// Zhang–Suen conditions (end points are never marked); marked pixels are then
/// deleted one at a time, and only if the pixel is still a simple point
/// (8-connected foreground, 4-connected background) at that moment. This keeps
/// the number of components and holes of every slice unchanged.
pub fn skeletonize(mask: &Mask) -> Mask {
    let dims = mask.dims();
    let mut out = mask.clone();
    for z in 0..dims.nz {
        thin_slice(out.slice_mut(z), dims.nx, dims.ny);
    }
    out
}

/// Neighbours P2..P9 clockwise from north, in Zhang–Suen order.
#[inline]
fn ring(img: &[bool], nx: usize, ny: usize, x: usize, y: usize) -> [bool; 8] {
    let at = |dx: isize, dy: isize| -> bool {
        let (qx, qy) = (x as isize + dx, y as isize + dy);
        qx >= 0 && qy >= 0 && (qx as usize) < nx && (qy as usize) < ny && img[qy as usize * nx + qx as usize]
    };
    [
        at(0, -1),
        at(1, -1),
        at(1, 0),
        at(1, 1),
        at(0, 1),
        at(-1, 1),
        at(-1, 0),
        at(-1, -1),
    ]
}

/// 8-connectivity number (Yokoi): number of foreground 8-arcs in the ring.
/// A pixel is simple iff this equals 1.
#[inline]
fn connectivity_number(p: &[bool; 8]) -> usize {
    let inv = |i: usize| !p[i % 8] as usize;
    (0..4)
        .map(|k| {
            let i = 2 * k;
            inv(i) - inv(i) * inv(i + 1) * inv(i + 2)
        })
        .sum()
}

fn thin_slice(img: &mut [bool], nx: usize, ny: usize) {
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            candidates.clear();
            for y in 0..ny {
                for x in 0..nx {
                    if !img[y * nx + x] {
                        continue;
                    }
                    let p = ring(img, nx, ny, x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if transitions != 1 {
                        continue;
                    }
                    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(n && e && s) && !(e && s && w)
                    } else {
                        !(n && e && w) && !(n && s && w)
                    };
                    if ok {
                        candidates.push((x, y));
                    }
                }
            }
            for &(x, y) in &candidates {
                let p = ring(img, nx, ny, x, y);
                if connectivity_number(&p) == 1 {
                    img[y * nx + x] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Spacing;
    use proptest::prelude::*;

    fn mask2d(nx: usize, ny: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        Grid::from_fn(Dims::new(nx, ny, 1), Spacing::isotropic(), |x, y, _| f(x, y))
    }

    fn annulus(n: usize, c: f64, r_in: f64, r_out: f64) -> Mask {
        mask2d(n, n, |x, y| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            d >= r_in && d <= r_out
        })
    }

    #[test]
    fn erode_square_with_disk() {
        let m = mask2d(7, 7, |x, y| (1..6).contains(&x) && (1..6).contains(&y));
        let e = erode(&m, StructuringElement::Disk(1)).unwrap();
        let expect = mask2d(7, 7, |x, y| (2..5).contains(&x) && (2..5).contains(&y));
        assert_eq!(e, expect);
        // Touching the border: outside counts as background.
        let full = mask2d(5, 5, |_, _| true);
        let e = erode(&full, StructuringElement::Disk(1)).unwrap();
        assert_eq!(e.count(), 9);
        assert!(*e.get(2, 2, 0) && !*e.get(0, 2, 0));
    }

    #[test]
    fn erode_edge_cases() {
        let empty = Mask::empty(Dims::new(4, 4, 2), Spacing::isotropic());
        assert!(erode(&empty, StructuringElement::Disk(1)).unwrap().is_empty_mask());
        let single = mask2d(3, 3, |x, y| x == 1 && y == 1);
        assert!(erode(&single, StructuringElement::Cross4).unwrap().is_empty_mask());
        assert!(StructuringElement::Disk(0).offsets().is_err());
    }

    #[test]
    fn ball_and_cross6_are_3d() {
        let m = Grid::from_fn(Dims::new(5, 5, 5), Spacing::isotropic(), |x, y, z| {
            (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z)
        });
        let e = erode(&m, StructuringElement::Cross6).unwrap();
        assert_eq!(e.foreground(), vec![[2, 2, 2]]);
        assert_eq!(StructuringElement::Ball(1).offsets().unwrap().len(), 7);
        let d = dilate(&e, StructuringElement::Ball(1)).unwrap();
        assert_eq!(d.count(), 7);
    }

    #[test]
    fn fill_annulus_gives_disk() {
        let a = annulus(21, 10.0, 3.0, 6.0);
        let disk = mask2d(21, 21, |x, y| ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)).sqrt() <= 6.0);
        assert_eq!(fill_holes(&a), disk);
        assert_eq!(fill_holes(&disk), disk);
        let full = mask2d(6, 6, |_, _| true);
        assert_eq!(fill_holes(&full), full);
        // Background touching the border is not a hole.
        let bar = mask2d(6, 6, |x, _| x == 2);
        assert_eq!(fill_holes(&bar), bar);
    }

    #[test]
    fn component_counts() {
        let two = Grid::from_fn(Dims::new(8, 4, 4), Spacing::isotropic(), |x, y, z| {
            (x < 2 || (5..7).contains(&x)) && y < 2 && z < 2
        });
        let c = connected_components(&two, Connectivity::Six);
        assert_eq!(c.count, 2);
        assert_eq!(*c.labels.get(0, 0, 0), 1);
        assert_eq!(*c.labels.get(6, 1, 1), 2);
        let empty = Mask::empty(Dims::new(3, 3, 3), Spacing::isotropic());
        assert_eq!(connected_components(&empty, Connectivity::Six).count, 0);
        let one = mask2d(3, 3, |x, y| x == 2 && y == 0);
        let c = connected_components(&one, Connectivity::TwentySix);
        assert_eq!((c.count, *c.labels.get(2, 0, 0)), (1, 1));
        let diag = mask2d(3, 3, |x, y| x == y);
        assert_eq!(connected_components(&diag, Connectivity::Six).count, 3);
        assert_eq!(connected_components(&diag, Connectivity::TwentySix).count, 1);
    }

    #[test]
    fn center_of_mass_examples() {
        let sq = mask2d(11, 11, |x, y| (4..7).contains(&x) && (4..7).contains(&y));
        assert_eq!(center_of_mass(&sq).unwrap(), [5, 5, 0]);
        // Two voxels: the mean is the midpoint; that voxel is background, so
        // the seed snaps to the nearest foreground voxel (tie -> lowest index).
        let pair = mask2d(3, 1, |x, _| x != 1);
        assert_eq!(centroid(&pair).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(center_of_mass(&pair).unwrap(), [0, 0, 0]);
        assert_eq!(center_of_mass(&pair).unwrap(), nearest_brute(&pair));
        let bar = mask2d(4, 1, |x, _| x <= 2);
        assert_eq!(center_of_mass(&bar).unwrap(), [1, 0, 0]);
        assert!(matches!(
            center_of_mass(&Mask::empty(Dims::new(2, 2, 1), Spacing::isotropic())),
            Err(Error::EmptyMask)
        ));
    }

    /// Independent oracle: exact mean, then exhaustive nearest foreground voxel.
    fn nearest_brute(m: &Mask) -> [usize; 3] {
        let fg = m.foreground();
        let n = fg.len() as f64;
        let mean: Vec<f64> = (0..3).map(|a| fg.iter().map(|p| p[a] as f64).sum::<f64>() / n).collect();
        let rounded: Vec<usize> = mean.iter().map(|v| v.round() as usize).collect();
        if *m.get(rounded[0], rounded[1], rounded[2]) {
            return [rounded[0], rounded[1], rounded[2]];
        }
        let mut best = fg[0];
        let mut bd = f64::INFINITY;
        for p in &fg {
            let d: f64 = (0..3).map(|a| (p[a] as f64 - mean[a]).powi(2)).sum();
            if d < bd {
                bd = d;
                best = *p;
            }
        }
        best
    }

    #[test]
    fn crescent_centroid_snaps_to_foreground() {
        // Thin crescent: half annulus, centroid inside the empty bowl.
        let m = mask2d(21, 21, |x, y| {
            let d = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)).sqrt();
            (5.0..=6.0).contains(&d) && y >= 10
        });
        let c = center_of_mass(&m).unwrap();
        assert!(*m.get(c[0], c[1], c[2]));
        assert_eq!(c, nearest_brute(&m));
    }

    #[test]
    fn skeleton_of_annulus_is_medial_ring() {
        let a = annulus(21, 10.0, 3.0, 6.0);
        let s = skeletonize(&a);
        assert!(s.is_subset_of(&a));
        assert_eq!(slice_component_counts(&s), vec![1]);
        assert_eq!(slice_hole_counts(&s), vec![1]);
        // Medial radius from the pixel set itself, by brute force over
        // distances to the nearest background pixel.
        let bg: Vec<[usize; 3]> = a.map(|&b| !b).foreground();
        let dist_to_bg = |p: [usize; 3]| {
            bg.iter()
                .map(|q| ((p[0] as f64 - q[0] as f64).powi(2) + (p[1] as f64 - q[1] as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let ridge: Vec<[usize; 3]> = {
            let fg = a.foreground();
            let best = fg.iter().map(|&p| dist_to_bg(p)).fold(0.0, f64::max);
            fg.into_iter().filter(|&p| dist_to_bg(p) >= best - 1e-9).collect()
        };
        let radius = |p: &[usize; 3]| ((p[0] as f64 - 10.0).powi(2) + (p[1] as f64 - 10.0).powi(2)).sqrt();
        let medial = ridge.iter().map(radius).sum::<f64>() / ridge.len() as f64;
        for p in s.foreground() {
            assert!((radius(&p) - medial).abs() <= 1.0 + 1e-9, "{p:?} at {} vs {medial}", radius(&p));
        }
        // One voxel wide: no 2x2 foreground block.
        for y in 0..20 {
            for x in 0..20 {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
                assert!(!block.iter().all(|&(i, j)| *s.get(i, j, 0)));
            }
        }
    }

    #[test]
    fn skeleton_thin_and_empty_cases() {
        let line = mask2d(9, 5, |x, y| y == 2 && (1..8).contains(&x));
        assert_eq!(skeletonize(&line), line);
        let empty = Mask::empty(Dims::new(5, 5, 2), Spacing::isotropic());
        assert_eq!(skeletonize(&empty), empty);
        let block = mask2d(4, 4, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
        let s = skeletonize(&block);
        assert!(!s.is_empty_mask());
    }

    proptest! {
        #[test]
        fn morphology_inclusions(bits in proptest::collection::vec(any::<bool>(), 8 * 8 * 2), r in 1usize..3) {
            let m = Grid::from_vec(Dims::new(8, 8, 2), Spacing::isotropic(), bits).unwrap();
            let se = StructuringElement::Disk(r);
            let e = erode(&m, se).unwrap();
            prop_assert!(e.is_subset_of(&m));
            prop_assert!(m.is_subset_of(&fill_holes(&m)));
            let shell = m.difference(&e);
            prop_assert_eq!(e.union(&shell), m.clone());
            prop_assert!(m.is_subset_of(&dilate(&m, se).unwrap()));
            let s = skeletonize(&m);
            prop_assert!(s.is_subset_of(&m));
            prop_assert_eq!(slice_component_counts(&s), slice_component_counts(&m));
            for z in 0..2 {
                let nonempty = m.slice(z).iter().any(|&b| b);
                prop_assert_eq!(s.slice(z).iter().any(|&b| b), nonempty);
            }
        }
    }
}
