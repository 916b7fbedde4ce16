//! Strided 2-D convolution and transposed convolution on channel-last frames.
//!
//! Frames are `[y][x][c]` slices. Weights are stored tap-major as
//! `[ky][kx][in][out]` so the innermost loops run over contiguous output
//! channels. Every routine iterates over *input* positions, which lets the
//! forward pass and the weight gradient skip silent inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    TransposedConv,
}

/// Geometry of one spatial operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialOp {
    pub kind: OpKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_padding: usize,
}

/// One input coordinate's contributions along a single axis: `(tap, output coordinate)`.
type AxisTaps = Vec<Vec<(usize, usize)>>;

impl SpatialOp {
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, i: usize, o: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + i) * self.out_channels + o
    }

    /// Output length along one axis.
    pub fn out_size(&self, n: usize) -> Result<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let size = match self.kind {
            OpKind::Conv => {
                if n + 2 * p < k {
                    return Err(Error::Shape(format!("input size {n} smaller than kernel {k}")));
                }
                (n + 2 * p - k) / s + 1
            }
            OpKind::TransposedConv => {
                let full = (n.max(1) - 1) * s + k + self.output_padding;
                if full < 2 * p {
                    return Err(Error::Shape(format!("padding {p} too large for input {n}")));
                }
                full - 2 * p
            }
        };
        Ok(size)
    }

    fn axis_taps(&self, n_in: usize, n_out: usize) -> AxisTaps {
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        (0..n_in as isize)
            .map(|i| {
                (0..k)
                    .filter_map(|t| {
                        let o = match self.kind {
                            OpKind::Conv => {
                                let num = i + p - t;
                                if num < 0 || num % s != 0 {
                                    return None;
                                }
                                num / s
                            }
                            OpKind::TransposedConv => s * i - p + t,
                        };
                        (o >= 0 && o < n_out as isize).then_some((t as usize, o as usize))
                    })
                    .collect()
            })
            .collect()
    }

    /// Number of synapses leaving one input neuron at `(y, x)`.
    pub fn fan_out(&self, in_hw: (usize, usize), y: usize, x: usize) -> Result<usize> {
        let taps = Taps::new(self, in_hw)?;
        Ok(taps.rows[y].len() * taps.cols[x].len() * self.out_channels)
    }

    /// Synapses feeding one output neuron, averaged over positions, ignoring borders.
    pub fn nominal_fan_in(&self) -> f64 {
        let k2 = (self.kernel * self.kernel) as f64;
        match self.kind {
            OpKind::Conv => self.in_channels as f64 * k2,
            OpKind::TransposedConv => {
                self.in_channels as f64 * k2 / (self.stride * self.stride) as f64
            }
        }
    }
}

/// Precomputed tap tables for a fixed input size.
#[derive(Debug, Clone)]
pub struct Taps {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    rows: AxisTaps,
    cols: AxisTaps,
}

impl Taps {
    pub fn new(op: &SpatialOp, in_hw: (usize, usize)) -> Result<Self> {
        let out_hw = (op.out_size(in_hw.0)?, op.out_size(in_hw.1)?);
        Ok(Taps {
            in_hw,
            out_hw,
            rows: op.axis_taps(in_hw.0, out_hw.0),
            cols: op.axis_taps(in_hw.1, out_hw.1),
        })
    }

    /// Sum over input neurons of their fan-out: the dense MAC count of one step.
    pub fn dense_macs(&self, op: &SpatialOp) -> u64 {
        let rows: usize = self.rows.iter().map(Vec::len).sum();
        let cols: usize = self.cols.iter().map(Vec::len).sum();
        (rows * cols * op.in_channels * op.out_channels) as u64
    }

    pub fn fan_out(&self, op: &SpatialOp, y: usize, x: usize) -> usize {
        self.rows[y].len() * self.cols[x].len() * op.out_channels
    }
}

/// `out += op(input)`. With `skip_silent`, zero inputs are skipped; the sum is
/// bitwise identical either way since adding a zero product leaves it unchanged.
pub fn forward(op: &SpatialOp, taps: &Taps, weights: &[f64], input: &[f64], out: &mut [f64], skip_silent: bool) {
    let (ci, co) = (op.in_channels, op.out_channels);
    let out_w = taps.out_hw.1;
    for (yi, row_taps) in taps.rows.iter().enumerate() {
        for (xi, col_taps) in taps.cols.iter().enumerate() {
            let base = (yi * taps.in_hw.1 + xi) * ci;
            let px = &input[base..base + ci];
            if skip_silent && px.iter().all(|&a| a == 0.0) {
                continue;
            }
            for &(ky, yo) in row_taps {
                for &(kx, xo) in col_taps {
                    let dst = &mut out[(yo * out_w + xo) * co..(yo * out_w + xo + 1) * co];
                    for (i, &a) in px.iter().enumerate() {
                        if skip_silent && a == 0.0 {
                            continue;
                        }
                        let w0 = op.weight_index(ky, kx, i, 0);
                        for (d, &w) in dst.iter_mut().zip(&weights[w0..w0 + co]) {
                            *d += a * w;
                        }
                    }
                }
            }
        }
    }
}

/// `grad_in += op^T(grad_out)`: the adjoint of [`forward`].
pub fn backward_input(op: &SpatialOp, taps: &Taps, weights: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let (ci, co) = (op.in_channels, op.out_channels);
    let out_w = taps.out_hw.1;
    for (yi, row_taps) in taps.rows.iter().enumerate() {
        for (xi, col_taps) in taps.cols.iter().enumerate() {
            let base = (yi * taps.in_hw.1 + xi) * ci;
            let dst = &mut grad_in[base..base + ci];
            for &(ky, yo) in row_taps {
                for &(kx, xo) in col_taps {
                    let g = &grad_out[(yo * out_w + xo) * co..(yo * out_w + xo + 1) * co];
                    for (i, d) in dst.iter_mut().enumerate() {
                        let w0 = op.weight_index(ky, kx, i, 0);
                        *d += weights[w0..w0 + co]
                            .iter()
                            .zip(g)
                            .map(|(w, g)| w * g)
                            .sum::<f64>();
                    }
                }
            }
        }
    }
}

/// `grad_w += d<grad_out, op_w(input)>/dw`; silent inputs contribute nothing.
pub fn accumulate_weight_grad(op: &SpatialOp, taps: &Taps, input: &[f64], grad_out: &[f64], grad_w: &mut [f64]) {
    let (ci, co) = (op.in_channels, op.out_channels);
    let out_w = taps.out_hw.1;
    for (yi, row_taps) in taps.rows.iter().enumerate() {
        for (xi, col_taps) in taps.cols.iter().enumerate() {
            let base = (yi * taps.in_hw.1 + xi) * ci;
            let px = &input[base..base + ci];
            if px.iter().all(|&a| a == 0.0) {
                continue;
            }
            for &(ky, yo) in row_taps {
                for &(kx, xo) in col_taps {
                    let g = &grad_out[(yo * out_w + xo) * co..(yo * out_w + xo + 1) * co];
                    for (i, &a) in px.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let w0 = op.weight_index(ky, kx, i, 0);
                        for (d, &g) in grad_w[w0..w0 + co].iter_mut().zip(g) {
                            *d += a * g;
                        }
                    }
                }
            }
        }
    }
}

/// Reorders `[out][in][ky][kx]` weights into the tap-major storage layout.
pub fn from_oihw(op: &SpatialOp, oihw: &[f64]) -> Vec<f64> {
    let k = op.kernel;
    let mut w = vec![0.0; op.weight_len()];
    for o in 0..op.out_channels {
        for i in 0..op.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    w[op.weight_index(ky, kx, i, o)] =
                        oihw[((o * op.in_channels + i) * k + ky) * k + kx];
                }
            }
        }
    }
    w
}

/// Inverse of [`from_oihw`].
pub fn to_oihw(op: &SpatialOp, w: &[f64]) -> Vec<f64> {
    let k = op.kernel;
    let mut oihw = vec![0.0; op.weight_len()];
    for o in 0..op.out_channels {
        for i in 0..op.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    oihw[((o * op.in_channels + i) * k + ky) * k + kx] =
                        w[op.weight_index(ky, kx, i, o)];
                }
            }
        }
    }
    oihw
}
