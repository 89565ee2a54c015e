//! First-order fast marching for `F(x)·|∇T(x)| = 1` with `T = 0` on a seed set,
//! restricted to a masked domain with anisotropic spacing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid, Mask, Spacing};
use crate::scalar::{lit, Scalar};

/// Arrival times; `+∞` marks voxels the front never reached.
pub type TimeMap<T> = Grid<T>;

/// Propagation speed inside the domain.
#[derive(Debug, Clone)]
pub enum SpeedField<T> {
    /// `F ≡ 1`: arrival time is geodesic distance.
    Uniform,
    /// Per-voxel speed, positive on the domain.
    Field(Grid<T>),
}

impl<T: Scalar> SpeedField<T> {
    #[inline]
    fn at(&self, i: usize) -> T {
        match self {
            SpeedField::Uniform => T::one(),
            SpeedField::Field(g) => g.data()[i],
        }
    }
}

/// Largest root of `Σ ((t − vᵢ)/hᵢ)² = 1/f²` over the upwind neighbours.
///
/// `neighbors[a]` is the smaller accepted value along axis `a` (if any) and
/// `h[a]` the spacing along that axis. Axes are admitted in increasing order of
/// their value; an axis is only used if the candidate built from the smaller
/// ones exceeds its value.
pub fn godunov_update<T: Scalar>(neighbors: [Option<T>; 3], h: [T; 3], f: T) -> Result<T> {
    let mut avail: Vec<(T, T)> = neighbors
        .iter()
        .zip(h)
        .filter_map(|(v, h)| v.map(|v| (v, h)))
        .collect();
    if avail.is_empty() {
        return Err(Error::NoAcceptedNeighbor);
    }
    avail.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let rhs = T::one() / (f * f);
    let (v0, h0) = avail[0];
    let mut t = v0 + h0 / f;
    let (mut qa, mut qb, mut qc) = (T::zero(), T::zero(), -rhs);
    for (k, &(v, hk)) in avail.iter().enumerate() {
        if k > 0 && t <= v {
            break;
        }
        let w = T::one() / (hk * hk);
        qa += w;
        qb += lit::<T>(-2.0) * v * w;
        qc += v * v * w;
        if k == 0 {
            continue;
        }
        let disc = qb * qb - lit::<T>(4.0) * qa * qc;
        t = (-qb + disc.max(T::zero()).sqrt()) / (lit::<T>(2.0) * qa);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Accepted,
}

/// Heap entry ordered so that `BinaryHeap` pops the smallest time first and,
/// among equal times, the smallest linear index.
#[derive(Debug, Clone, Copy)]
struct Entry<T> {
    t: T,
    idx: usize,
}

impl<T: Scalar> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Entry<T> {}
impl<T: Scalar> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .partial_cmp(&self.t)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Result of a march together with the order in which voxels were finalized.
#[derive(Debug, Clone)]
pub struct March<T> {
    pub times: TimeMap<T>,
    pub accepted: Vec<usize>,
}

fn check_seeds(domain: &Mask, seeds: &[[usize; 3]]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let dims = domain.dims();
    for &[x, y, z] in seeds {
        if !dims.contains(x, y, z) || !*domain.get(x, y, z) {
            return Err(Error::SeedOutsideDomain(x, y, z));
        }
    }
    Ok(())
}

#[inline]
fn axis_neighbors(dims: Dims, idx: usize) -> [[Option<usize>; 2]; 3] {
    let [x, y, z] = dims.coords(idx);
    let sx = 1;
    let sy = dims.nx;
    let sz = dims.slice_len();
    [
        [(x > 0).then(|| idx - sx), (x + 1 < dims.nx).then(|| idx + sx)],
        [(y > 0).then(|| idx - sy), (y + 1 < dims.ny).then(|| idx + sy)],
        [(z > 0).then(|| idx - sz), (z + 1 < dims.nz).then(|| idx + sz)],
    ]
}

/// Upwind values from accepted axis neighbours of `idx`.
fn upwind<T: Scalar>(dims: Dims, idx: usize, times: &[T], state: &[State]) -> [Option<T>; 3] {
    axis_neighbors(dims, idx).map(|pair| {
        pair.iter()
            .flatten()
            .filter(|&&j| state[j] == State::Accepted)
            .map(|&j| times[j])
            .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
    })
}

/// Fast marching from `seeds` over the 6-connected `domain`.
pub fn fast_march<T: Scalar>(
    domain: &Mask,
    seeds: &[[usize; 3]],
    speed: &SpeedField<T>,
    spacing: Spacing,
) -> Result<TimeMap<T>> {
    fast_march_traced(domain, seeds, speed, spacing).map(|m| m.times)
}

/// As [`fast_march`], also returning the acceptance order.
pub fn fast_march_traced<T: Scalar>(
    domain: &Mask,
    seeds: &[[usize; 3]],
    speed: &SpeedField<T>,
    spacing: Spacing,
) -> Result<March<T>> {
    march(domain, seeds, speed, spacing, None)
}

/// Fast marching from a single point seed with source factoring.
///
/// Inside the region visible from the seed (the straight segment to the seed
/// stays in the domain) the solver marches on `τ = T / |x − s|` instead of `T`,
/// which removes the point-source singularity of the first-order scheme: for
/// `F ≡ 1` the visible region is solved exactly. Voxels outside that region
/// use the plain upwind update.
pub fn fast_march_point<T: Scalar>(
    domain: &Mask,
    seed: [usize; 3],
    speed: &SpeedField<T>,
    spacing: Spacing,
) -> Result<March<T>> {
    check_seeds(domain, &[seed])?;
    let visible = line_of_sight(domain, seed);
    march(domain, &[seed], speed, spacing, Some(Factoring { seed, visible }))
}

/// Pointwise minimum of [`fast_march_point`] over several point seeds.
pub fn fast_march_point_sources<T: Scalar>(
    domain: &Mask,
    seeds: &[[usize; 3]],
    speed: &SpeedField<T>,
    spacing: Spacing,
) -> Result<TimeMap<T>> {
    check_seeds(domain, seeds)?;
    let mut best: Option<TimeMap<T>> = None;
    for &s in seeds {
        let t = fast_march_point(domain, s, speed, spacing)?.times;
        best = Some(match best {
            None => t,
            Some(mut b) => {
                for (dst, &v) in b.data_mut().iter_mut().zip(t.data()) {
                    if v < *dst {
                        *dst = v;
                    }
                }
                b
            }
        });
    }
    Ok(best.expect("non-empty seeds"))
}

/// Voxels whose centre sees `seed` along a straight segment inside `domain`.
pub fn line_of_sight(domain: &Mask, seed: [usize; 3]) -> Vec<bool> {
    let dims = domain.dims();
    let inside = domain.data();
    (0..dims.len())
        .map(|i| {
            if !inside[i] {
                return false;
            }
            let q = dims.coords(i);
            let d = [0, 1, 2].map(|a| q[a] as f64 - seed[a] as f64);
            let span = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let steps = (span * 4.0).ceil() as usize;
            (1..steps).all(|k| {
                let f = k as f64 / steps as f64;
                let p = [0, 1, 2].map(|a| (seed[a] as f64 + d[a] * f).round() as usize);
                inside[dims.index(p[0], p[1], p[2])]
            })
        })
        .collect()
}

struct Factoring {
    seed: [usize; 3],
    visible: Vec<bool>,
}

/// Factored local solve at `q`: `T = T₀·τ` with `T₀ = |q − s|` in millimetres.
/// Every subset of the available upwind axes is tried and the smallest
/// candidate consistent with its upwind neighbours wins.
fn factored_update<T: Scalar>(
    dims: Dims,
    q: usize,
    seed: [usize; 3],
    h: [T; 3],
    times: &[T],
    state: &[State],
    f: T,
) -> Option<T> {
    let c = dims.coords(q);
    let rel = [0, 1, 2].map(|a| lit::<T>(c[a] as f64 - seed[a] as f64) * h[a]);
    let t0 = rel.iter().map(|&r| r * r).sum::<T>().sqrt();
    if t0 <= T::zero() {
        return None;
    }
    let tau_of = |j: usize| -> T {
        let cj = dims.coords(j);
        let r = [0, 1, 2].map(|a| lit::<T>(cj[a] as f64 - seed[a] as f64) * h[a]);
        let d = r.iter().map(|&v| v * v).sum::<T>().sqrt();
        if d > T::zero() {
            times[j] / d
        } else {
            T::one()
        }
    };
    let grad = rel.map(|r| r / t0);
    // Per axis: (neighbour index, sigma) of the smallest accepted neighbour.
    let nb = axis_neighbors(dims, q);
    let mut upwind: [Option<(usize, T)>; 3] = [None; 3];
    for a in 0..3 {
        for (side, j) in nb[a].iter().enumerate() {
            if let Some(j) = *j {
                if state[j] == State::Accepted && upwind[a].is_none_or(|(k, _)| times[j] < times[k]) {
                    // Neighbour at q − σ·e_a: the lower side has σ = +1.
                    let sigma = if side == 0 { T::one() } else { -T::one() };
                    upwind[a] = Some((j, sigma));
                }
            }
        }
    }
    let rhs = T::one() / (f * f);
    let mut best: Option<T> = None;
    for subset in 1u8..8 {
        if (0..3).any(|a| subset & (1 << a) != 0 && upwind[a].is_none()) {
            continue;
        }
        let (mut qa, mut qb, mut qc) = (T::zero(), T::zero(), -rhs);
        for a in 0..3 {
            if subset & (1 << a) != 0 {
                let (j, sigma) = upwind[a].unwrap();
                let alpha = grad[a] + sigma * t0 / h[a];
                let beta = sigma * t0 * tau_of(j) / h[a];
                qa += alpha * alpha;
                qb += alpha * beta;
                qc += beta * beta;
            } else {
                qa += grad[a] * grad[a];
            }
        }
        let disc = qb * qb - qa * qc;
        if qa <= T::zero() || disc < T::zero() {
            continue;
        }
        let tau = (qb + disc.sqrt()) / qa;
        let t = t0 * tau;
        let consistent = (0..3).all(|a| subset & (1 << a) == 0 || t >= times[upwind[a].unwrap().0]);
        if consistent && tau > T::zero() && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

fn march<T: Scalar>(
    domain: &Mask,
    seeds: &[[usize; 3]],
    speed: &SpeedField<T>,
    spacing: Spacing,
    factoring: Option<Factoring>,
) -> Result<March<T>> {
    spacing.validate()?;
    check_seeds(domain, seeds)?;
    let dims = domain.dims();
    if let SpeedField::Field(f) = speed {
        if f.dims() != dims {
            return Err(Error::DimsMismatch("speed field and domain differ in extent".into()));
        }
        for (i, (&inside, &v)) in domain.data().iter().zip(f.data()).enumerate() {
            if inside && !(v > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "speed must be positive inside the domain (voxel {i})"
                )));
            }
        }
    }
    let h = spacing.as_array().map(lit::<T>);
    let inside = domain.data();
    let n = dims.len();
    let mut times = vec![T::infinity(); n];
    let mut state = vec![State::Far; n];
    let mut heap = BinaryHeap::new();
    for &[x, y, z] in seeds {
        let i = dims.index(x, y, z);
        times[i] = T::zero();
        if state[i] != State::Trial {
            state[i] = State::Trial;
            heap.push(Entry { t: T::zero(), idx: i });
        }
    }
    let mut accepted = Vec::with_capacity(n);
    let mut last = T::neg_infinity();
    while let Some(Entry { t, idx }) = heap.pop() {
        if state[idx] == State::Accepted || t > times[idx] {
            continue;
        }
        debug_assert!(t >= last, "non-monotone acceptance: {t:?} after {last:?}");
        last = t;
        state[idx] = State::Accepted;
        accepted.push(idx);
        for pair in axis_neighbors(dims, idx) {
            for j in pair.into_iter().flatten() {
                if !inside[j] || state[j] == State::Accepted {
                    continue;
                }
                let factored = factoring
                    .as_ref()
                    .filter(|fac| fac.visible[j])
                    .and_then(|fac| factored_update(dims, j, fac.seed, h, &times, &state, speed.at(j)));
                let cand = match factored {
                    Some(t) => t,
                    None => godunov_update(upwind(dims, j, &times, &state), h, speed.at(j))?,
                };
                // Exact updates never undercut the voxel just accepted;
                // rounding in the local solve can, by an ulp.
                let cand = cand.max(t);
                if cand < times[j] {
                    times[j] = cand;
                    state[j] = State::Trial;
                    heap.push(Entry { t: cand, idx: j });
                }
            }
        }
    }
    Ok(March {
        times: Grid::from_vec(dims, spacing, times)?,
        accepted,
    })
}

/// Recomputes the upwind update at an accepted, non-seed voxel from its
/// neighbours with smaller time. Used to check causality of a finished march.
pub fn recompute_at<T: Scalar>(times: &TimeMap<T>, idx: usize, speed: T) -> Result<T> {
    let dims = times.dims();
    let t = times.data();
    let me = t[idx];
    let nb = axis_neighbors(dims, idx).map(|pair| {
        pair.iter()
            .flatten()
            .map(|&j| t[j])
            .filter(|&v| v < me)
            .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
    });
    godunov_update(nb, times.spacing().as_array().map(lit::<T>), speed)
}

/// Exact shortest-path lengths on the 26-neighbour voxel graph with Euclidean
/// edge lengths in millimetres. Test oracle for [`fast_march`].
pub fn dijkstra_oracle(domain: &Mask, seeds: &[[usize; 3]], spacing: Spacing) -> Result<TimeMap<f64>> {
    spacing.validate()?;
    check_seeds(domain, seeds)?;
    let dims = domain.dims();
    let mut dist = vec![f64::INFINITY; dims.len()];
    let mut done = vec![false; dims.len()];
    let mut heap = BinaryHeap::new();
    for &[x, y, z] in seeds {
        let i = dims.index(x, y, z);
        dist[i] = 0.0;
        heap.push(Entry { t: 0.0f64, idx: i });
    }
    let mut steps = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    let len = ((dx as f64 * spacing.sx).powi(2)
                        + (dy as f64 * spacing.sy).powi(2)
                        + (dz as f64 * spacing.sz).powi(2))
                    .sqrt();
                    steps.push(([dx, dy, dz], len));
                }
            }
        }
    }
    while let Some(Entry { t, idx }) = heap.pop() {
        if done[idx] || t > dist[idx] {
            continue;
        }
        done[idx] = true;
        let c = dims.coords(idx);
        for &(o, len) in &steps {
            let q = [0, 1, 2].map(|a| c[a] as isize + o[a]);
            if q.iter().any(|&v| v < 0) {
                continue;
            }
            let q = q.map(|v| v as usize);
            if !dims.contains(q[0], q[1], q[2]) {
                continue;
            }
            let j = dims.index(q[0], q[1], q[2]);
            if domain.data()[j] && t + len < dist[j] {
                dist[j] = t + len;
                heap.push(Entry { t: t + len, idx: j });
            }
        }
    }
    Grid::from_vec(dims, spacing, dist)
}

/// Finite-payload version of a time map: unreached voxels become `f32::MAX`.
pub fn to_storable<T: Scalar>(times: &TimeMap<T>) -> Grid<f32> {
    times.map(|&t| {
        if t.is_finite() {
            t.to_f64_lossy() as f32
        } else {
            f32::MAX
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(dims: Dims) -> Mask {
        Mask::filled(dims, Spacing::isotropic(), true)
    }

    #[test]
    fn godunov_examples() {
        let one = [1.0f64; 3];
        assert_eq!(godunov_update([Some(0.0), None, None], one, 1.0).unwrap(), 1.0);
        let t = godunov_update([Some(1.0), Some(1.0), None], one, 1.0).unwrap();
        assert!((t - (1.0 + 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((t - 1.70711).abs() < 1e-5);
        assert_eq!(godunov_update([Some(0.0), Some(10.0), None], one, 1.0).unwrap(), 1.0);
        assert!(matches!(
            godunov_update::<f64>([None, None, None], one, 1.0),
            Err(Error::NoAcceptedNeighbor)
        ));
        // Three equal neighbours: 3(t - a)^2 = 1.
        let t = godunov_update([Some(2.0), Some(2.0), Some(2.0)], one, 1.0).unwrap();
        assert!((t - (2.0 + 1.0 / 3f64.sqrt())).abs() < 1e-12);
        // Speed 2 halves the one-sided step.
        assert_eq!(godunov_update([None, Some(1.0), None], one, 2.0).unwrap(), 1.5);
        // Anisotropic spacing on the one-sided branch.
        assert_eq!(godunov_update([None, None, Some(1.0)], [1.0, 1.0, 5.0], 1.0).unwrap(), 6.0);
    }

    #[test]
    fn godunov_result_exceeds_used_values() {
        let one = [1.0f32; 3];
        for (a, b, c) in [(0.0f32, 0.3, 0.9), (1.0, 1.2, 1.4), (0.0, 0.0, 0.0), (3.0, 0.5, 7.0)] {
            let t = godunov_update([Some(a), Some(b), Some(c)], one, 1.0).unwrap();
            assert!(t > a.min(b).min(c));
        }
    }

    #[test]
    fn seed_errors() {
        let d = full(Dims::new(4, 4, 1));
        let s = Spacing::isotropic();
        assert!(matches!(
            fast_march::<f64>(&d, &[], &SpeedField::Uniform, s),
            Err(Error::EmptySeeds)
        ));
        let mut m = d.clone();
        m.set(0, 0, 0, false);
        assert!(matches!(
            fast_march::<f64>(&m, &[[0, 0, 0]], &SpeedField::Uniform, s),
            Err(Error::SeedOutsideDomain(0, 0, 0))
        ));
        assert!(dijkstra_oracle(&m, &[[0, 0, 0]], s).is_err());
    }

    #[test]
    fn planar_front_is_exact() {
        let dims = Dims::new(16, 8, 4);
        let seeds: Vec<[usize; 3]> = (0..4).flat_map(|z| (0..8).map(move |y| [0, y, z])).collect();
        let t = fast_march::<f64>(&full(dims), &seeds, &SpeedField::Uniform, Spacing::isotropic()).unwrap();
        for i in 0..dims.len() {
            let [x, _, _] = dims.coords(i);
            assert!((t.data()[i] - x as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn masking_leaves_outside_unreached() {
        let dims = Dims::new(9, 3, 1);
        let m = Grid::from_fn(dims, Spacing::isotropic(), |x, _, _| x != 4);
        let t = fast_march::<f64>(&m, &[[0, 1, 0]], &SpeedField::Uniform, Spacing::isotropic()).unwrap();
        for i in 0..dims.len() {
            let [x, _, _] = dims.coords(i);
            assert_eq!(t.data()[i].is_finite(), x < 4);
        }
        let stored = to_storable(&t);
        assert_eq!(*stored.get(8, 0, 0), f32::MAX);
    }

    #[test]
    fn dijkstra_examples() {
        let dims = Dims::new(10, 1, 1);
        let d = dijkstra_oracle(&full(dims), &[[0, 0, 0]], Spacing::isotropic()).unwrap();
        assert_eq!(*d.get(9, 0, 0), 9.0);
        let dims = Dims::new(2, 2, 1);
        let d = dijkstra_oracle(&full(dims), &[[0, 0, 0]], Spacing::isotropic()).unwrap();
        assert!((*d.get(1, 1, 0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn speed_field_scales_times() {
        let dims = Dims::new(6, 1, 1);
        let speed = SpeedField::Field(Grid::filled(dims, Spacing::isotropic(), 2.0f64));
        let t = fast_march(&full(dims), &[[0, 0, 0]], &speed, Spacing::isotropic()).unwrap();
        assert_eq!(*t.get(5, 0, 0), 2.5);
        let bad = SpeedField::Field(Grid::filled(dims, Spacing::isotropic(), 0.0f64));
        assert!(fast_march(&full(dims), &[[0, 0, 0]], &bad, Spacing::isotropic()).is_err());
    }

    #[test]
    fn ties_pop_in_index_order() {
        let dims = Dims::new(3, 3, 1);
        let m = fast_march_traced::<f64>(&full(dims), &[[1, 1, 0]], &SpeedField::Uniform, Spacing::isotropic()).unwrap();
        assert_eq!(&m.accepted[..5], &[4, 1, 3, 5, 7]);
    }
}
