use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{slice, slice_mut, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = act(x Wᵀ + b)` with `W: O x I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub x: Array2<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, act: Activation) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        dense_forward(self.w.view(), self.b.view(), x, self.act)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&[f64]> {
        vec![slice(&self.w), slice(&self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_mut(&mut self.w), slice_mut(&mut self.b)]
    }
}

pub fn dense_forward(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView2<f64>,
    act: Activation,
) -> Result<Array2<f64>> {
    if x.ncols() != w.ncols() || b.len() != w.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "dense: W {:?}, b {}, x {:?}",
            w.shape(),
            b.len(),
            x.shape()
        )));
    }
    let mut y = x.dot(&w.t());
    y += &b;
    if act != Activation::Linear {
        y.mapv_inplace(|v| act.apply(v));
    }
    Ok(y)
}

/// Gradients given the forward input `x`, output `y` and upstream `dy`.
pub fn dense_backward(
    w: ArrayView2<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    act: Activation,
) -> Result<DenseGrads> {
    if y.shape() != dy.shape() || x.nrows() != y.nrows() || y.ncols() != w.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "dense backward: x {:?}, y {:?}, dy {:?}",
            x.shape(),
            y.shape(),
            dy.shape()
        )));
    }
    let dz = if act == Activation::Linear {
        dy.to_owned()
    } else {
        let mut dz = dy.to_owned();
        dz.zip_mut_with(&y, |d, &out| *d *= act.derivative_at_output(out));
        dz
    };
    Ok(DenseGrads {
        w: dz.t().dot(&x),
        b: dz.sum_axis(Axis(0)),
        x: dz.dot(&w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, RngStream};
    use ndarray::array;

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut d = Dense::zeros(3, 2, Activation::Linear);
        d.b = array![1.5, -2.0];
        let y = d.forward(Array2::from_elem((4, 3), 7.0).view()).unwrap();
        for r in y.rows() {
            assert_eq!(r, d.b);
        }
    }

    #[test]
    fn hand_arithmetic() {
        let y = dense_forward(
            array![[1.0, 2.0]].view(),
            array![0.0].view(),
            array![[3.0, 4.0]].view(),
            Activation::Linear,
        )
        .unwrap();
        assert_eq!(y, array![[11.0]]);
    }

    #[test]
    fn shape_mismatch() {
        let d = Dense::zeros(3, 2, Activation::Tanh);
        assert!(matches!(
            d.forward(Array2::zeros((1, 4)).view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (case, act) in [Activation::Linear, Activation::Tanh, Activation::Relu]
            .into_iter()
            .enumerate()
        {
            let mut rng = RngStream::new(100 + case as u64);
            let (t, i, o) = (5, 4, 3);
            let x = Array2::from_shape_fn((t, i), |_| rng.uniform(-1.0, 1.0));
            let r = Array2::from_shape_fn((t, o), |_| rng.uniform(-1.0, 1.0));
            let mut d = Dense::zeros(i, o, act);
            d.w.mapv_inplace(|_| rng.uniform(-1.0, 1.0));
            d.b.mapv_inplace(|_| rng.uniform(-0.5, 0.5));
            let loss = |d: &Dense, x: &Array2<f64>| (d.forward(x.view()).unwrap() * &r).sum();

            let y = d.forward(x.view()).unwrap();
            let g = dense_backward(d.w.view(), x.view(), y.view(), r.view(), act).unwrap();
            let analytic = [g.w.as_slice().unwrap(), g.b.as_slice().unwrap()].concat();
            let err = grad_check(
                |p| {
                    let mut dd = d.clone();
                    dd.set_flat(p);
                    loss(&dd, &x)
                },
                &d.flat(),
                &analytic,
                1e-5,
            );
            assert!(err <= 1e-6, "{act:?} params: {err}");
            let err = grad_check(
                |p| loss(&d, &Array2::from_shape_vec((t, i), p.to_vec()).unwrap()),
                x.as_slice().unwrap(),
                g.x.as_slice().unwrap(),
                1e-5,
            );
            assert!(err <= 1e-6, "{act:?} input: {err}");
        }
    }
}
