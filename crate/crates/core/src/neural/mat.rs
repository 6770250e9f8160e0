//! Minimal row-major dense matrix used by the MLP stack.
//!
//! Batched matrix ops keep the message-passing forward/backward passes in
//! cache-friendly loops; nothing here is aware of graphs or gradients.

/// Row-major `rows x cols` matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// New matrix whose row k is `self.row(idx[k])`.
    pub fn gather_rows(&self, idx: &[u32]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i as usize));
        }
        out
    }

    /// `dst.row(idx[k]) += self.row(k)` for every k.
    pub fn scatter_add_rows(&self, dst: &mut Mat, idx: &[u32]) {
        assert_eq!(self.rows, idx.len());
        assert_eq!(self.cols, dst.cols);
        for (k, &i) in idx.iter().enumerate() {
            let src = self.row(k);
            let d = dst.row_mut(i as usize);
            for (dv, sv) in d.iter_mut().zip(src) {
                *dv += sv;
            }
        }
    }

    /// Horizontal concatenation; all blocks must share the row count.
    pub fn hcat(blocks: &[&Mat]) -> Mat {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let orow = out.row_mut(r);
            let mut at = 0;
            for b in blocks {
                orow[at..at + b.cols].copy_from_slice(b.row(r));
                at += b.cols;
            }
        }
        out
    }

    /// Vertical concatenation; all blocks must share the column count.
    pub fn vcat(blocks: &[&Mat]) -> Mat {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut at = 0;
        for b in blocks {
            assert_eq!(b.cols, cols);
            out.data[at..at + b.data.len()].copy_from_slice(&b.data);
            at += b.data.len();
        }
        out
    }

    /// Copy of the column range `[lo, hi)`.
    pub fn col_slice(&self, lo: usize, hi: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, hi - lo);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[lo..hi]);
        }
        out
    }

    /// Copy of the row range `[lo, hi)`.
    pub fn row_slice(&self, lo: usize, hi: usize) -> Mat {
        Mat {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `y = x * W^T + b` where `w` is row-major `out_w x in_w`.
pub fn affine_forward(x: &Mat, w: &[f64], b: &[f64], out_w: usize) -> Mat {
    let in_w = x.cols;
    debug_assert_eq!(w.len(), out_w * in_w);
    debug_assert_eq!(b.len(), out_w);
    let mut y = Mat::zeros(x.rows, out_w);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..out_w {
            let wrow = &w[o * in_w..(o + 1) * in_w];
            let mut acc = b[o];
            for i in 0..in_w {
                acc += wrow[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
    y
}

/// Backward of [`affine_forward`]: accumulates `dw`/`db` and returns `dx`.
pub fn affine_backward(x: &Mat, w: &[f64], dy: &Mat, dw: &mut [f64], db: &mut [f64]) -> Mat {
    let in_w = x.cols;
    let out_w = dy.cols;
    debug_assert_eq!(x.rows, dy.rows);
    let mut dx = Mat::zeros(x.rows, in_w);
    for r in 0..x.rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let dxr = dx.row_mut(r);
        for o in 0..out_w {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &w[o * in_w..(o + 1) * in_w];
            let dwrow = &mut dw[o * in_w..(o + 1) * in_w];
            for i in 0..in_w {
                dwrow[i] += g * xr[i];
                dxr[i] += g * wrow[i];
            }
        }
    }
    dx
}
