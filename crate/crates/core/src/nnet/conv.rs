use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::{slice, slice_mut, Parameterized};
use crate::error::{Error, Result};

/// Time-axis convolution with "same" zero padding. Kernel shape is
/// `(C_out, C_in, k)` with `k` odd; tap `j` reads frame `t + j - k/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
    pub x: Array2<f64>,
}

impl Conv1d {
    pub fn zeros(c_in: usize, c_out: usize, width: usize) -> Self {
        Self {
            kernel: Array3::zeros((c_out, c_in, width)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn width(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        conv1d_forward(self.kernel.view(), self.bias.view(), x)
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&[f64]> {
        vec![slice(&self.kernel), slice(&self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_mut(&mut self.kernel), slice_mut(&mut self.bias)]
    }
}

/// `T x (C_in * k)` patch matrix; column `c * k + j` holds channel `c` at
/// tap `j`, zero where the tap falls outside the sequence.
pub fn im2col(x: ArrayView2<f64>, width: usize) -> Array2<f64> {
    let (t_len, c_in) = x.dim();
    let r = (width / 2) as isize;
    let mut cols = Array2::zeros((t_len, c_in * width));
    for t in 0..t_len {
        let mut row = cols.row_mut(t);
        for j in 0..width {
            let src = t as isize + j as isize - r;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let xs = x.row(src as usize);
            for c in 0..c_in {
                row[c * width + j] = xs[c];
            }
        }
    }
    cols
}

fn check(kernel: &ArrayView3<f64>, bias_len: usize, x: &ArrayView2<f64>) -> Result<usize> {
    let (c_out, c_in, width) = kernel.dim();
    if width % 2 == 0 {
        return Err(Error::EvenKernel(width));
    }
    if x.ncols() != c_in || bias_len != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: kernel {:?}, bias {bias_len}, x {:?}",
            kernel.shape(),
            x.shape()
        )));
    }
    Ok(width)
}

fn flat_kernel<'a>(kernel: &'a ArrayView3<'a, f64>) -> ArrayView2<'a, f64> {
    let (c_out, c_in, width) = kernel.dim();
    kernel
        .view()
        .into_shape_with_order((c_out, c_in * width))
        .expect("kernel is contiguous")
}

/// Linear output; callers apply their own nonlinearity.
pub fn conv1d_forward(
    kernel: ArrayView3<f64>,
    bias: ArrayView1<f64>,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let width = check(&kernel, bias.len(), &x)?;
    let kernel = kernel.as_standard_layout();
    let k = kernel.view();
    let mut y = im2col(x, width).dot(&flat_kernel(&k).t());
    y += &bias;
    Ok(y)
}

pub fn conv1d_backward(
    kernel: ArrayView3<f64>,
    x: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> Result<ConvGrads> {
    let (c_out, c_in, width) = kernel.dim();
    check(&kernel, c_out, &x)?;
    if dy.dim() != (x.nrows(), c_out) {
        return Err(Error::ShapeMismatch(format!(
            "conv1d backward: dy {:?}, expected ({}, {c_out})",
            dy.shape(),
            x.nrows()
        )));
    }
    let kernel = kernel.as_standard_layout();
    let k = kernel.view();
    let cols = im2col(x, width);
    let dk = dy.t().dot(&cols);
    let dcols = dy.dot(&flat_kernel(&k));
    let t_len = x.nrows();
    let r = (width / 2) as isize;
    let mut dx = Array2::zeros((t_len, c_in));
    for t in 0..t_len {
        let row = dcols.row(t);
        for j in 0..width {
            let src = t as isize + j as isize - r;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let mut dxs = dx.row_mut(src as usize);
            for c in 0..c_in {
                dxs[c] += row[c * width + j];
            }
        }
    }
    Ok(ConvGrads {
        kernel: dk.into_shape_with_order((c_out, c_in, width)).unwrap(),
        bias: dy.sum_axis(Axis(0)),
        x: dx,
    })
}
