//! Dense loops shared by the forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] = out[i * k + p] + dot(g_row, b_row);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + a_ip * gv;
            }
        }
    }
}

/// Geometry of a stride-1 "same" convolution over an `H×W×C` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.k / 2
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Rows of the unfolded input, one per (tap, input channel).
    fn taps(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// For kernel offset `(ky, kx)`, calls `f(out_start, in_start, len)` for
    /// each output row segment whose shifted input lies inside the image.
    #[inline]
    fn for_each_span(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w, pad) = (self.height, self.width, self.pad());
        let x_lo = pad.saturating_sub(kx);
        let x_hi = (w + pad).saturating_sub(kx).min(w);
        if x_lo >= x_hi {
            return;
        }
        for y in 0..h {
            let iy = y + ky;
            if iy < pad || iy - pad >= h {
                continue;
            }
            let iy = iy - pad;
            f(y * w + x_lo, iy * w + x_lo + kx - pad, x_hi - x_lo);
        }
    }

    /// Unfolds an `H×W×Cin` image into `taps × pixels` columns (zero
    /// padded), so the convolution becomes one matrix product.
    fn unfold<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (cin, n) = (self.cin, self.pixels());
        let mut cols = vec![T::zero(); self.taps() * n];
        for ky in 0..self.k {
            for kx in 0..self.k {
                let tap = ky * self.k + kx;
                self.for_each_span(ky, kx, |out, inp, len| {
                    for ci in 0..cin {
                        let row = &mut cols[(tap * cin + ci) * n..(tap * cin + ci + 1) * n];
                        for (j, v) in row[out..out + len].iter_mut().enumerate() {
                            *v = x[(inp + j) * cin + ci];
                        }
                    }
                });
            }
        }
        cols
    }

    /// Adjoint of [`ConvGeom::unfold`]: scatters column gradients back onto
    /// the image.
    fn fold_add<T: Scalar>(&self, cols: &[T], grad_x: &mut [T]) {
        let (cin, n) = (self.cin, self.pixels());
        for ky in 0..self.k {
            for kx in 0..self.k {
                let tap = ky * self.k + kx;
                self.for_each_span(ky, kx, |out, inp, len| {
                    for ci in 0..cin {
                        let row = &cols[(tap * cin + ci) * n..(tap * cin + ci + 1) * n];
                        for (j, &v) in row[out..out + len].iter().enumerate() {
                            let gx = &mut grad_x[(inp + j) * cin + ci];
                            *gx = *gx + v;
                        }
                    }
                });
            }
        }
    }
}

/// `m×n` row-major to `n×m` row-major.
fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order, so the compiler can vectorise it without changing the result
/// between runs.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Pixel block width for the unfolded products; keeps the working set of
/// one block in cache.
const BLOCK: usize = 128;

pub(crate) fn conv2d_forward<T: Scalar>(g: ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (cout, n, taps) = (g.cout, g.pixels(), g.taps());
    let cols = g.unfold(x);
    let wt = transpose(w, taps, cout);
    let mut out_t = vec![T::zero(); cout * n];
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        for co in 0..cout {
            let o = &mut out_t[co * n + start..co * n + end];
            for (r, &wv) in wt[co * taps..(co + 1) * taps].iter().enumerate() {
                for (ov, &cv) in o.iter_mut().zip(&cols[r * n + start..r * n + end]) {
                    *ov = *ov + wv * cv;
                }
            }
        }
    }
    for (p, px) in out.chunks_exact_mut(cout).enumerate() {
        for (co, o) in px.iter_mut().enumerate() {
            *o = out_t[co * n + p] + b[co];
        }
    }
}

/// Accumulates kernel, bias and (optionally) input gradients.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: ConvGeom,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_x: Option<&mut [T]>,
) {
    let (cout, n, taps) = (g.cout, g.pixels(), g.taps());
    let cols = g.unfold(x);
    let grad_t = transpose(grad_out, n, cout);
    for (co, row) in grad_t.chunks_exact(n).enumerate() {
        grad_b[co] = grad_b[co] + row.iter().fold(T::zero(), |a, &v| a + v);
    }
    let mut grad_wt = vec![T::zero(); cout * taps];
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        for co in 0..cout {
            let gr = &grad_t[co * n + start..co * n + end];
            for r in 0..taps {
                let gw = &mut grad_wt[co * taps + r];
                *gw = *gw + dot(gr, &cols[r * n + start..r * n + end]);
            }
        }
    }
    for (r, gw) in grad_w.chunks_exact_mut(cout).enumerate() {
        for (co, v) in gw.iter_mut().enumerate() {
            *v = *v + grad_wt[co * taps + r];
        }
    }
    if let Some(gx) = grad_x {
        let mut grad_cols = vec![T::zero(); taps * n];
        for start in (0..n).step_by(BLOCK) {
            let end = (start + BLOCK).min(n);
            for r in 0..taps {
                let gc = &mut grad_cols[r * n + start..r * n + end];
                for (co, &wv) in w[r * cout..(r + 1) * cout].iter().enumerate() {
                    for (cv, &gv) in gc.iter_mut().zip(&grad_t[co * n + start..co * n + end]) {
                        *cv = *cv + wv * gv;
                    }
                }
            }
        }
        g.fold_add(&grad_cols, gx);
    }
}
