//! Fully connected layers, optionally in MLP-DenseNet form.
//!
//! A plain layer maps `x -> act(W x + b)`. A DenseNet block keeps its input and
//! appends the activated output, `x -> [x | act(W x + b)]`, so each block grows the
//! feature dimension by its width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::matrix::{gemm, Matrix, Op, Scalar};
use crate::error::{Error, Result};

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    He,
    /// Uniform in `±1 / sqrt(fan_in)`.
    FanIn,
    /// Uniform in `±limit`.
    Uniform(f64),
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    in_dim: usize,
    width: usize,
    activation: Activation,
    concat: bool,
    /// Row-major `width x in_dim`.
    weights: Vec<T>,
    bias: Vec<T>,
}

/// Values recorded by a forward pass of one layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerRecord<T> {
    pub input: Matrix<T>,
    pub pre: Matrix<T>,
    pub post: Matrix<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        width: usize,
        activation: Activation,
        concat: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || width == 0 {
            return Err(Error::Config(format!(
                "layer dimensions must be positive (in {in_dim}, width {width})"
            )));
        }
        let limit = match init {
            Init::He => (6.0 / in_dim as f64).sqrt(),
            Init::FanIn => 1.0 / (in_dim as f64).sqrt(),
            Init::Uniform(l) => l,
            Init::Zeros => 0.0,
        };
        let weights = (0..in_dim * width)
            .map(|_| {
                if limit > 0.0 {
                    T::lit(rng.gen_range(-limit..limit))
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(Self {
            in_dim,
            width,
            activation,
            concat,
            weights,
            bias: vec![T::zero(); width],
        })
    }

    /// Builds a layer from explicit parameters.
    pub fn from_parts(
        in_dim: usize,
        width: usize,
        activation: Activation,
        concat: bool,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if weights.len() != in_dim * width || bias.len() != width {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{width} needs {} weights and {width} biases, got {} and {}",
                in_dim * width,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            width,
            activation,
            concat,
            weights,
            bias,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Output dimension: `in_dim + width` for a DenseNet block, `width` otherwise.
    #[inline]
    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.in_dim + self.width
        } else {
            self.width
        }
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn is_dense_block(&self) -> bool {
        self.concat
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "layer expects input width {}, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    fn affine(&self, x: &Matrix<T>) -> Matrix<T> {
        let batch = x.rows();
        let mut z = Matrix::zeros(batch, self.width);
        for r in 0..batch {
            z.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            batch,
            self.in_dim,
            self.width,
            x.as_slice(),
            Op::N,
            &self.weights,
            Op::T,
            T::one(),
            z.as_mut_slice(),
        );
        z
    }

    fn assemble(&self, x: &Matrix<T>, y: &Matrix<T>) -> Matrix<T> {
        if self.concat {
            x.hcat(y).expect("row counts agree")
        } else {
            y.clone()
        }
    }

    /// Batched forward pass (one sample per row).
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let act = self.activation;
        let mut z = self.affine(x);
        for v in z.as_mut_slice() {
            *v = act.apply(*v);
        }
        Ok(if self.concat { x.hcat(&z)? } else { z })
    }

    pub(crate) fn forward_recorded(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LayerRecord<T>)> {
        self.check_input(x)?;
        let pre = self.affine(x);
        let act = self.activation;
        let post = pre.map(|v| act.apply(v));
        let out = self.assemble(x, &post);
        Ok((
            out,
            LayerRecord {
                input: x.clone(),
                pre,
                post,
            },
        ))
    }

    /// Backpropagates `grad_out` (gradient w.r.t. this layer's output).
    ///
    /// Returns `(dW, db, dX)`; parameter gradients are skipped when `want_params` is false.
    pub(crate) fn backward(
        &self,
        rec: &LayerRecord<T>,
        grad_out: &Matrix<T>,
        want_params: bool,
    ) -> (Option<(Vec<T>, Vec<T>)>, Matrix<T>) {
        let batch = rec.input.rows();
        let act = self.activation;
        let (grad_direct, grad_post) = if self.concat {
            (
                Some(grad_out.columns(0, self.in_dim)),
                grad_out.columns(self.in_dim, self.in_dim + self.width),
            )
        } else {
            (None, grad_out.clone())
        };

        let mut dz = grad_post;
        for ((g, &z), &y) in dz
            .as_mut_slice()
            .iter_mut()
            .zip(rec.pre.as_slice())
            .zip(rec.post.as_slice())
        {
            *g = *g * act.derivative(z, y);
        }

        let params = want_params.then(|| {
            let mut dw = vec![T::zero(); self.width * self.in_dim];
            gemm(
                self.width,
                batch,
                self.in_dim,
                dz.as_slice(),
                Op::T,
                rec.input.as_slice(),
                Op::N,
                T::zero(),
                &mut dw,
            );
            let mut db = vec![T::zero(); self.width];
            for r in 0..batch {
                for (acc, &g) in db.iter_mut().zip(dz.row(r)) {
                    *acc = *acc + g;
                }
            }
            (dw, db)
        });

        let mut dx = grad_direct.unwrap_or_else(|| Matrix::zeros(batch, self.in_dim));
        gemm(
            batch,
            self.width,
            self.in_dim,
            dz.as_slice(),
            Op::N,
            &self.weights,
            Op::N,
            T::one(),
            dx.as_mut_slice(),
        );
        (params, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity2(activation: Activation, bias: Vec<f64>) -> Layer<f64> {
        Layer::from_parts(2, 2, activation, false, vec![1.0, 0.0, 0.0, 1.0], bias).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let l = identity2(Activation::Identity, vec![0.0, 0.0]);
        let y = l.forward(&Matrix::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let l = identity2(Activation::Relu, vec![-3.0, 0.0]);
        let y = l.forward(&Matrix::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn random_layer_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut l = Layer::<f64>::new(3, 4, Activation::Identity, false, Init::He, &mut rng).unwrap();
        for b in l.bias_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let y = l.forward(&x).unwrap();
        for r in 0..5 {
            for o in 0..4 {
                let mut s = l.bias()[o];
                for i in 0..3 {
                    s += l.weights()[o * 3 + i] * x.get(r, i);
                }
                assert!((y.get(r, o) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_block_prefix_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Layer::<f32>::new(3, 10, Activation::Swish, true, Init::He, &mut rng).unwrap();
        let x = Matrix::row_vector(&[0.3f32, -1.2, 2.5]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.cols(), 13);
        assert_eq!(&y.as_slice()[..3], x.as_slice());
    }

    #[test]
    fn zero_weight_swish_block_appends_swish_of_bias() {
        let bias: Vec<f64> = vec![-1.0, 0.0, 0.5, 2.0];
        let l = Layer::from_parts(3, 4, Activation::Swish, true, vec![0.0; 12], bias.clone()).unwrap();
        let y = l.forward(&Matrix::row_vector(&[9.0, -9.0, 4.0])).unwrap();
        for (k, b) in bias.iter().enumerate() {
            let expected = b / (1.0 + (-b).exp());
            assert!((y.get(0, 3 + k) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let l = identity2(Activation::Identity, vec![0.0, 0.0]);
        assert!(matches!(
            l.forward(&Matrix::row_vector(&[1.0, 2.0, 3.0])),
            Err(Error::Shape(_))
        ));
    }
}
