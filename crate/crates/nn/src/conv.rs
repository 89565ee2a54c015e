//! 3×3×3 "same" convolution.
//!
//! Each sample is copied once into a zero-padded buffer. For a kernel offset
//! the padded input, read at a constant linear shift, lines up with the
//! output on the padded grid, so all 27 taps come out of one matrix product
//! with a `[27·cout, cin]` weight matrix followed by shifted sums. Results at
//! halo positions are junk and discarded.

use crate::error::{Error, Result};
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tensor::Tensor;

pub const TAPS: usize = 27;

struct Padded {
    py: usize,
    px: usize,
    vp: usize,
    /// Padded index of the first interior voxel.
    i0: usize,
    /// Length of the padded range from first to last interior voxel.
    n: usize,
    spatial: [usize; 3],
}

impl Padded {
    fn new(spatial: [usize; 3]) -> Self {
        let [nz, ny, nx] = spatial;
        let (pz, py, px) = (nz + 2, ny + 2, nx + 2);
        let i0 = py * px + px + 1;
        let last = nz * py * px + ny * px + nx;
        Padded {
            py,
            px,
            vp: pz * py * px,
            i0,
            n: last - i0 + 1,
            spatial,
        }
    }

    fn shift(&self, tap: usize) -> isize {
        let (dz, dy, dx) = ((tap / 9) as isize - 1, ((tap / 3) % 3) as isize - 1, (tap % 3) as isize - 1);
        dz * (self.py * self.px) as isize + dy * self.px as isize + dx
    }

    fn start(&self, tap: usize) -> usize {
        (self.i0 as isize + self.shift(tap)) as usize
    }

    fn index(&self, z: usize, y: usize, x: usize) -> usize {
        ((z + 1) * self.py + y + 1) * self.px + x + 1
    }

    /// Copy `c` channels of one sample into the interior of `dst`.
    fn pad<T: Real>(&self, src: &[T], c: usize, dst: &mut [T]) {
        let [nz, ny, nx] = self.spatial;
        for ch in 0..c {
            for z in 0..nz {
                for y in 0..ny {
                    let s = ((ch * nz + z) * ny + y) * nx;
                    let d = ch * self.vp + self.index(z, y, 0);
                    dst[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
    }

    /// Read the interior of a `[c, range]` buffer (offset by `i0`) into a
    /// dense sample, adding the result of `f(channel)`.
    fn unpad_range<T: Real>(&self, src: &[T], stride: usize, base: usize, c: usize, dst: &mut [T], add: impl Fn(usize) -> T) {
        let [nz, ny, nx] = self.spatial;
        for ch in 0..c {
            let bias = add(ch);
            for z in 0..nz {
                for y in 0..ny {
                    let s = ch * stride + self.index(z, y, 0) - base;
                    let d = ((ch * nz + z) * ny + y) * nx;
                    for (o, &v) in dst[d..d + nx].iter_mut().zip(&src[s..s + nx]) {
                        *o = v + bias;
                    }
                }
            }
        }
    }
}

pub fn check_shapes<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    let ws = w.shape();
    if ws[1] != x.channels() || ws[2..] != [3, 3, 3] {
        return Err(Error::Shape(format!("conv3d weight {ws:?} for input {:?}", x.shape())));
    }
    if let Some(b) = b {
        if b.len() != ws[0] {
            return Err(Error::Shape(format!("conv3d bias of {} for {} filters", b.len(), ws[0])));
        }
    }
    Ok(())
}

/// Weights as a `[27·cout, cin]` matrix with row `tap·cout + co`.
fn stack_weights<T: Real>(w: &Tensor<T>) -> Vec<T> {
    let [cout, cin, ..] = w.shape();
    let mut out = vec![T::zero(); TAPS * cout * cin];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..TAPS {
                out[(tap * cout + co) * cin + ci] = w.data()[(co * cin + ci) * TAPS + tap];
            }
        }
    }
    out
}

/// Padded columns handled per block, keeping a `[rows, block]` tile in cache.
fn block_len(rows: usize) -> usize {
    (32768 / rows).max(128)
}

/// Interior planes of the padded grid, the only columns with nonzero input.
fn interior_columns(p: &Padded) -> std::ops::Range<usize> {
    let plane = p.py * p.px;
    plane..(p.spatial[0] + 1) * plane
}

pub fn forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_shapes(x, w, b)?;
    let [nb, cin, nz, ny, nx] = x.shape();
    let cout = w.shape()[0];
    let p = Padded::new([nz, ny, nx]);
    let v = nz * ny * nx;
    let rows = TAPS * cout;
    let ws = stack_weights(w);
    let blk = block_len(rows);
    let mut out = Tensor::zeros([nb, cout, nz, ny, nx]);
    let mut xpad = vec![T::zero(); cin * p.vp];
    let mut y = vec![T::zero(); rows * blk];
    let mut acc = vec![T::zero(); cout * p.n];
    for s in 0..nb {
        p.pad(&x.data()[s * cin * v..(s + 1) * cin * v], cin, &mut xpad);
        acc.iter_mut().for_each(|a| *a = T::zero());
        let cols = interior_columns(&p);
        let mut j0 = cols.start;
        while j0 < cols.end {
            let len = blk.min(cols.end - j0);
            // Response of every tap to input columns j0..j0+len; column `j`
            // feeds output `j − shift(tap)`.
            gemm(
                rows,
                cin,
                len,
                T::one(),
                MatRef::new(&ws, 0, cin, 1),
                MatRef::new(&xpad, j0, p.vp, 1),
                T::zero(),
                MatMut::new(&mut y, 0, len, 1),
            );
            for tap in 0..TAPS {
                let first = p.start(tap);
                let lo = j0.max(first);
                let hi = (j0 + len).min(first + p.n);
                if lo >= hi {
                    continue;
                }
                for co in 0..cout {
                    let src = &y[(tap * cout + co) * len + lo - j0..][..hi - lo];
                    let dst = &mut acc[co * p.n + lo - first..][..hi - lo];
                    for (a, &t) in dst.iter_mut().zip(src) {
                        *a += t;
                    }
                }
            }
            j0 += len;
        }
        let dst = &mut out.data_mut()[s * cout * v..(s + 1) * cout * v];
        p.unpad_range(&acc, p.n, p.i0, cout, dst, |c| b.map_or(T::zero(), |b| b.data()[c]));
    }
    Ok(out)
}

pub struct Grads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Vec<T>,
}

pub fn backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dout: &[T], need_dx: bool, need_dw: bool) -> Grads<T> {
    let [nb, cin, nz, ny, nx] = x.shape();
    let cout = w.shape()[0];
    let p = Padded::new([nz, ny, nx]);
    let v = nz * ny * nx;
    let rows = TAPS * cout;
    let mut db = vec![T::zero(); cout];
    for s in 0..nb {
        for (c, d) in db.iter_mut().enumerate() {
            let o = (s * cout + c) * v;
            *d += dout[o..o + v].iter().copied().sum::<T>();
        }
    }
    if !need_dx && !need_dw {
        return Grads { dx: None, dw: None, db };
    }
    let ws = if need_dx { stack_weights(w) } else { Vec::new() };
    let blk = block_len(rows);
    let mut xpad = vec![T::zero(); if need_dw { cin * p.vp } else { 0 }];
    let mut dpad = vec![T::zero(); cout * p.vp];
    // Row `tap·cout + co`, column `j`: the output gradient at `j − shift(tap)`.
    let mut dstack = vec![T::zero(); rows * blk];
    let mut dxpad = vec![T::zero(); if need_dx { cin * p.vp } else { 0 }];
    let mut dws = need_dw.then(|| vec![T::zero(); rows * cin]);
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    for s in 0..nb {
        // Halo entries of `dpad` stay zero, so junk outputs contribute nothing.
        p.pad(&dout[s * cout * v..(s + 1) * cout * v], cout, &mut dpad);
        if need_dw {
            p.pad(&x.data()[s * cin * v..(s + 1) * cin * v], cin, &mut xpad);
        }
        let cols = interior_columns(&p);
        let mut j0 = cols.start;
        while j0 < cols.end {
            let len = blk.min(cols.end - j0);
            for tap in 0..TAPS {
                let shift = p.shift(tap);
                for co in 0..cout {
                    let row = &mut dstack[(tap * cout + co) * len..][..len];
                    let src = &dpad[co * p.vp..(co + 1) * p.vp];
                    // Source indices j0 − shift + k, clipped to the grid.
                    let from = j0 as isize - shift;
                    let k0 = (-from).clamp(0, len as isize) as usize;
                    let k1 = (p.vp as isize - from).clamp(k0 as isize, len as isize) as usize;
                    row[..k0].iter_mut().for_each(|r| *r = T::zero());
                    if k1 > k0 {
                        let a = (from + k0 as isize) as usize;
                        row[k0..k1].copy_from_slice(&src[a..a + k1 - k0]);
                    }
                    row[k1..].iter_mut().for_each(|r| *r = T::zero());
                }
            }
            if let Some(dws) = dws.as_mut() {
                gemm(
                    rows,
                    len,
                    cin,
                    T::one(),
                    MatRef::new(&dstack, 0, len, 1),
                    MatRef::new(&xpad, j0, 1, p.vp),
                    T::one(),
                    MatMut::new(dws, 0, cin, 1),
                );
            }
            if need_dx {
                gemm(
                    cin,
                    rows,
                    len,
                    T::one(),
                    MatRef::new(&ws, 0, 1, cin),
                    MatRef::new(&dstack, 0, len, 1),
                    T::zero(),
                    MatMut::new(&mut dxpad, j0, p.vp, 1),
                );
            }
            j0 += len;
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[s * cin * v..(s + 1) * cin * v];
            p.unpad_range(&dxpad, p.vp, 0, cin, dst, |_| T::zero());
        }
    }
    let dw = dws.map(|dws| {
        let mut dw = vec![T::zero(); w.len()];
        for co in 0..cout {
            for ci in 0..cin {
                for tap in 0..TAPS {
                    dw[(co * cin + ci) * TAPS + tap] = dws[(tap * cout + co) * cin + ci];
                }
            }
        }
        dw
    });
    Grads { dx, dw, db }
}

/// Direct nested-loop convolution, used as a reference in tests.
pub fn forward_naive<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_shapes(x, w, b)?;
    let [nb, cin, nz, ny, nx] = x.shape();
    let cout = w.shape()[0];
    let mut out = Tensor::zeros([nb, cout, nz, ny, nx]);
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for s in 0..nb {
        for co in 0..cout {
            for z in 0..nz {
                for y in 0..ny {
                    for xx in 0..nx {
                        let mut acc = b.map_or(T::zero(), |b| b.data()[co]);
                        for ci in 0..cin {
                            for tap in 0..TAPS {
                                let (zz, yy, xs) = (
                                    z as isize + (tap / 9) as isize - 1,
                                    y as isize + ((tap / 3) % 3) as isize - 1,
                                    xx as isize + (tap % 3) as isize - 1,
                                );
                                if zz < 0 || yy < 0 || xs < 0 || zz >= nz as isize || yy >= ny as isize || xs >= nx as isize {
                                    continue;
                                }
                                let xi = (((s * cin + ci) * nz + zz as usize) * ny + yy as usize) * nx + xs as usize;
                                acc += wd[(co * cin + ci) * TAPS + tap] * xd[xi];
                            }
                        }
                        od[(((s * cout + co) * nz + z) * ny + y) * nx + xx] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}
