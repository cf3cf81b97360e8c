//! Raw loops over row-major slices. Every kernel accumulates into `out`.

use crate::scalar::Scalar;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += aᵀ · b` with `a: [k,m]`, `b: [k,n]`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a · bᵀ` with `a: [m,k]`, `b: [n,k]`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Geometry of a strided, zero-padded 2D window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline(always)]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfold `img: [C,H,W]` into `cols: [C·KH·KW, OH·OW]` (overwrites `cols`).
pub(crate) fn im2col<T: Scalar>(w: &Window, img: &[T], cols: &mut [T]) {
    let ohw = w.col_cols();
    for c in 0..w.channels {
        for ki in 0..w.kernel_h {
            for kj in 0..w.kernel_w {
                let row = (c * w.kernel_h + ki) * w.kernel_w + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oh in 0..w.out_h {
                    let src_row = w.source(oh, ki, w.height);
                    for ow in 0..w.out_w {
                        dst[oh * w.out_w + ow] = match (src_row, w.source(ow, kj, w.width)) {
                            (Some(y), Some(x)) => img[(c * w.height + y) * w.width + x],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `img: [C,H,W]`.
pub(crate) fn col2im<T: Scalar>(w: &Window, cols: &[T], img: &mut [T]) {
    let ohw = w.col_cols();
    for c in 0..w.channels {
        for ki in 0..w.kernel_h {
            for kj in 0..w.kernel_w {
                let row = (c * w.kernel_h + ki) * w.kernel_w + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oh in 0..w.out_h {
                    let Some(y) = w.source(oh, ki, w.height) else { continue };
                    for ow in 0..w.out_w {
                        if let Some(x) = w.source(ow, kj, w.width) {
                            img[(c * w.height + y) * w.width + x] += src[oh * w.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // [3,4]
        let mut direct = vec![0.0; 8];
        gemm(2, 3, 4, &a, &b, &mut direct);

        let at: Vec<f64> = (0..6).map(|i| a[(i % 2) * 3 + i / 2]).collect(); // [3,2]
        let mut via_tn = vec![0.0; 8];
        gemm_tn(2, 3, 4, &at, &b, &mut via_tn);

        let bt: Vec<f64> = (0..12).map(|i| b[(i % 3) * 4 + i / 3]).collect(); // [4,3]
        let mut via_nt = vec![0.0; 8];
        gemm_nt(2, 3, 4, &a, &bt, &mut via_nt);

        assert_eq!(direct, via_tn);
        assert_eq!(direct, via_nt);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let w = Window {
            channels: 2,
            height: 5,
            width: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
            out_h: 3,
            out_w: 2,
        };
        let img: Vec<f64> = (0..40).map(|v| ((v * 7) % 11) as f64).collect();
        let probe: Vec<f64> = (0..w.col_rows() * w.col_cols()).map(|v| ((v * 5) % 13) as f64).collect();
        let mut cols = vec![0.0; probe.len()];
        im2col(&w, &img, &mut cols);
        let mut back = vec![0.0; img.len()];
        col2im(&w, &probe, &mut back);
        let lhs: f64 = cols.iter().zip(&probe).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
