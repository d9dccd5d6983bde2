//! Depthwise (per-channel) temporal convolution with same-length output and
//! zero padding, in the four kernel variants used by the encoders.
//!
//! Tap `j` of a width-`K` kernel reads input row `t - past + j` for output row
//! `t`, where `past = (K - 1) / 2` for centered kernels and `K - 1` for causal
//! ones (which therefore never read rows after `t`).

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelType {
    /// Independent centered kernel per channel.
    #[default]
    Default,
    /// Kernel over the current and past rows only.
    Causal,
    /// Centered kernel applied as `|w|`.
    Positive,
    /// One centered kernel shared by every channel.
    Tied,
}

impl KernelType {
    pub const ALL: [KernelType; 4] = [
        KernelType::Default,
        KernelType::Causal,
        KernelType::Positive,
        KernelType::Tied,
    ];

    /// Rows of the stored kernel for `channels` channels.
    pub fn stored_rows(self, channels: usize) -> usize {
        match self {
            KernelType::Tied => 1,
            _ => channels,
        }
    }

    /// Number of past and future rows one output row depends on.
    pub fn reach(self, width: usize) -> (usize, usize) {
        if width == 0 {
            return (0, 0);
        }
        match self {
            KernelType::Causal => (width - 1, 0),
            _ => ((width - 1) / 2, width - 1 - (width - 1) / 2),
        }
    }

    /// Tap that reads the output row itself; a one-hot kernel on it is the identity.
    pub fn identity_tap(self, width: usize) -> usize {
        self.reach(width).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthwiseConv {
    pub kind: KernelType,
    pub width: usize,
    pub channels: usize,
}

/// Effective taps laid out `[K x channels]` so inner loops run over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps(Matrix);

impl Taps {
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

impl DepthwiseConv {
    pub fn new(kind: KernelType, width: usize, channels: usize) -> Self {
        Self {
            kind,
            width,
            channels,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.width == 0
    }

    /// Stored kernel shape `[rows x K]`.
    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.kind.stored_rows(self.channels), self.width)
    }

    /// One-hot kernel on the identity tap.
    pub fn delta_kernel(&self) -> Matrix {
        let (rows, width) = self.kernel_shape();
        let mut k = Matrix::zeros(rows, width);
        if width > 0 {
            let tap = self.kind.identity_tap(width);
            for r in 0..rows {
                k[(r, tap)] = 1.0;
            }
        }
        k
    }

    /// Kernel actually applied: tied rows broadcast, positive kernels as `|w|`.
    pub fn taps(&self, raw: &Matrix) -> Taps {
        debug_assert_eq!(raw.shape(), self.kernel_shape());
        let tied = self.kind == KernelType::Tied;
        Taps(Matrix::from_fn(self.width, self.channels, |j, c| {
            let w = raw[(if tied { 0 } else { c }, j)];
            if self.kind == KernelType::Positive {
                libm::fabs(w)
            } else {
                w
            }
        }))
    }

    /// Output rows `[out_start, out_start + out_len)` of the convolution of an
    /// input whose rows `[z_start, z_start + z.rows())` are given (zero elsewhere).
    pub fn forward(
        &self,
        taps: &Taps,
        z: &Matrix,
        z_start: usize,
        out_start: usize,
        out_len: usize,
    ) -> Matrix {
        debug_assert_eq!(z.cols(), self.channels);
        if self.is_identity() {
            return self.copy_rows(z, z_start, out_start, out_len);
        }
        let (past, _) = self.kind.reach(self.width);
        let mut out = Matrix::zeros(out_len, self.channels);
        for i in 0..out_len {
            let t = out_start + i;
            let out_row = out.row_mut(i);
            for j in 0..self.width {
                let Some(u) = (t + j).checked_sub(past) else {
                    continue;
                };
                if u < z_start || u >= z_start + z.rows() {
                    continue;
                }
                let z_row = z.row(u - z_start);
                for ((o, w), x) in out_row.iter_mut().zip(taps.0.row(j)).zip(z_row) {
                    *o += w * x;
                }
            }
        }
        out
    }

    /// Gradients w.r.t. the input rows held in `z` and w.r.t. the effective taps.
    pub fn backward(
        &self,
        taps: &Taps,
        z: &Matrix,
        z_start: usize,
        out_start: usize,
        d_out: &Matrix,
    ) -> (Matrix, Taps) {
        let mut d_z = Matrix::zeros(z.rows(), self.channels);
        let mut d_taps = Matrix::zeros(self.width, self.channels);
        if self.is_identity() {
            for i in 0..d_out.rows() {
                let u = out_start + i;
                if u >= z_start && u < z_start + z.rows() {
                    d_z.row_mut(u - z_start).copy_from_slice(d_out.row(i));
                }
            }
            return (d_z, Taps(d_taps));
        }
        let (past, _) = self.kind.reach(self.width);
        for i in 0..d_out.rows() {
            let t = out_start + i;
            let g_row = d_out.row(i);
            for j in 0..self.width {
                let Some(u) = (t + j).checked_sub(past) else {
                    continue;
                };
                if u < z_start || u >= z_start + z.rows() {
                    continue;
                }
                let r = u - z_start;
                for ((dz, w), g) in d_z.row_mut(r).iter_mut().zip(taps.0.row(j)).zip(g_row) {
                    *dz += w * g;
                }
                for ((dt, x), g) in d_taps.row_mut(j).iter_mut().zip(z.row(r)).zip(g_row) {
                    *dt += x * g;
                }
            }
        }
        (d_z, Taps(d_taps))
    }

    /// Chain rule from effective taps back to the stored kernel.
    pub fn kernel_grad(&self, raw: &Matrix, d_taps: &Taps) -> Matrix {
        let (rows, width) = self.kernel_shape();
        let mut g = Matrix::zeros(rows, width);
        for j in 0..width {
            for c in 0..self.channels {
                let d = d_taps.0[(j, c)];
                match self.kind {
                    KernelType::Tied => g[(0, j)] += d,
                    // d|w|/dw = sign(w), taken as +1 at w = 0
                    KernelType::Positive => g[(c, j)] += d * libm::copysign(1.0, raw[(c, j)]),
                    _ => g[(c, j)] += d,
                }
            }
        }
        g
    }

    fn copy_rows(&self, z: &Matrix, z_start: usize, out_start: usize, out_len: usize) -> Matrix {
        let mut out = Matrix::zeros(out_len, self.channels);
        for i in 0..out_len {
            let u = out_start + i;
            if u >= z_start && u < z_start + z.rows() {
                out.row_mut(i).copy_from_slice(z.row(u - z_start));
            }
        }
        out
    }
}

/// Input row range `[lo, hi)` needed to produce output rows `[start, end)` of a
/// series with `trs` rows.
pub fn context_range(
    kind: KernelType,
    width: usize,
    start: usize,
    end: usize,
    trs: usize,
) -> (usize, usize) {
    let (past, future) = kind.reach(width);
    (start.saturating_sub(past), (end + future).min(trs))
}

/// Convolution of a single full series, used by tests as a sliding-window oracle.
pub fn convolve_full(conv: &DepthwiseConv, raw: &Matrix, z: &Matrix) -> Matrix {
    conv.forward(&conv.taps(raw), z, 0, 0, z.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Direct sliding-window convolution of one channel.
    fn sliding(z: &[f64], taps: &[f64], past: usize) -> Vec<f64> {
        (0..z.len())
            .map(|t| {
                let mut acc = 0.0;
                for (j, w) in taps.iter().enumerate() {
                    let u = t as isize - past as isize + j as isize;
                    if u >= 0 && (u as usize) < z.len() {
                        acc += w * z[u as usize];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn single_channel_matches_sliding_window() {
        let z = Matrix::from_vec(5, 1, vec![1., 2., 3., 4., 5.]).unwrap();
        let raw = Matrix::from_vec(1, 3, vec![1., 2., 3.]).unwrap();
        let conv = DepthwiseConv::new(KernelType::Default, 3, 1);
        let out = convolve_full(&conv, &raw, &z);
        // out[t] = 1*z[t-1] + 2*z[t] + 3*z[t+1]
        assert_eq!(out.column(0), vec![8., 14., 20., 26., 14.]);
        assert_eq!(out.column(0), sliding(z.as_slice(), raw.as_slice(), 1));

        let causal = DepthwiseConv::new(KernelType::Causal, 3, 1);
        let out = convolve_full(&causal, &raw, &z);
        assert_eq!(out.column(0), vec![3., 8., 14., 20., 26.]);
        assert_eq!(out.column(0), sliding(z.as_slice(), raw.as_slice(), 2));
    }

    #[test]
    fn delta_kernel_is_identity_for_every_type() {
        let z = Matrix::from_fn(11, 3, |i, j| (i * 7 + j * 3) as f64 % 5.0 - 2.0);
        for kind in KernelType::ALL {
            for width in [1, 3, 9] {
                let conv = DepthwiseConv::new(kind, width, 3);
                assert_eq!(
                    convolve_full(&conv, &conv.delta_kernel(), &z),
                    z,
                    "{kind:?} K={width}"
                );
            }
        }
        let conv = DepthwiseConv::new(KernelType::Default, 45, 2);
        let k = conv.delta_kernel();
        assert!((0..45).all(|j| k[(0, j)] == if j == 22 { 1.0 } else { 0.0 }));
    }

    #[test]
    fn partial_input_with_context_matches_full_series() {
        let z = Matrix::from_fn(30, 2, |i, j| ((i * 13 + j * 5) % 11) as f64 - 5.0);
        for kind in KernelType::ALL {
            let conv = DepthwiseConv::new(kind, 7, 2);
            let raw = Matrix::from_fn(kind.stored_rows(2), 7, |i, j| {
                (i + 1) as f64 * 0.1 - j as f64 * 0.05
            });
            let full = convolve_full(&conv, &raw, &z);
            let (lo, hi) = context_range(kind, 7, 10, 20, 30);
            let part = conv.forward(&conv.taps(&raw), &z.slice_rows(lo, hi), lo, 10, 10);
            assert_eq!(part, full.slice_rows(10, 20), "{kind:?}");
        }
    }

    #[test]
    fn positive_and_tied_taps() {
        let raw = Matrix::from_vec(2, 2, vec![-1.0, 2.0, 3.0, -4.0]).unwrap();
        let conv = DepthwiseConv::new(KernelType::Positive, 2, 2);
        assert!(conv
            .taps(&raw)
            .as_matrix()
            .as_slice()
            .iter()
            .all(|&w| w >= 0.0));

        let tied = DepthwiseConv::new(KernelType::Tied, 3, 4);
        let raw = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let z = Matrix::from_fn(9, 4, |i, _| i as f64);
        let out = convolve_full(&tied, &raw, &z);
        for r in 0..9 {
            assert!(out.row(r).iter().all(|&v| v == out[(r, 0)]));
        }
    }
}
