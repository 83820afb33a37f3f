//! Layer stacks with recorded forward passes and exact reverse-mode gradients.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

use super::activation::Activation;
use super::adam::Adam;
use super::layer::{Init, Layer, LayerRecord};
use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// A sequential stack of (plain or DenseNet) layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

/// Forward values recorded for one pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    records: Vec<LayerRecord<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parameter gradients, laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views in declared order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layouts differ".into()));
        }
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            if w.len() != ow.len() || b.len() != ob.len() {
                return Err(Error::Shape("gradient layouts differ".into()));
            }
            w.iter_mut().zip(ow).for_each(|(a, &v)| *a = *a + v);
            b.iter_mut().zip(ob).for_each(|(a, &v)| *a = *a + v);
        }
        Ok(())
    }
}

impl<T: Scalar> Network<T> {
    /// Validates that consecutive layers chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Plain MLP: He-initialized hidden layers, fan-in scaled output layer.
    pub fn mlp<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::mlp_with_output_init(in_dim, hidden, out_dim, hidden_activation, output_activation, Init::FanIn, rng)
    }

    /// As [`Network::mlp`] with a chosen output-layer initialization.
    pub fn mlp_with_output_init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        output_init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(Layer::new(prev, h, hidden_activation, false, Init::He, rng)?);
            prev = h;
        }
        layers.push(Layer::new(
            prev,
            out_dim,
            output_activation,
            false,
            output_init,
            rng,
        )?);
        Self::from_layers(layers)
    }

    /// `blocks` MLP-DenseNet blocks of width `width` on an `in_dim` input.
    pub fn densenet<R: Rng + ?Sized>(
        in_dim: usize,
        blocks: usize,
        width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::Config("a DenseNet stack needs at least one block".into()));
        }
        let layers = (0..blocks)
            .map(|i| Layer::new(in_dim + i * width, width, activation, true, Init::He, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameter tensors in declared order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights(), l.bias()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let (w, b) = l.params_mut();
                [w, b]
            })
            .collect()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Forward pass that records everything needed by [`Network::backward`].
    pub fn forward_taped(&self, x: &Matrix<T>, tape: &mut Tape<T>) -> Result<Matrix<T>> {
        tape.records.clear();
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, rec) = layer.forward_recorded(&h)?;
            tape.records.push(rec);
            h = out;
        }
        Ok(h)
    }

    fn check_tape(&self, tape: &Tape<T>, grad_out: &Matrix<T>) -> Result<()> {
        if tape.records.len() != self.layers.len() {
            return Err(Error::Shape(
                "tape was not recorded by this network".into(),
            ));
        }
        let batch = tape.records[0].input.rows();
        if grad_out.rows() != batch || grad_out.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                batch,
                self.out_dim()
            )));
        }
        if !grad_out.all_finite() {
            return Err(Error::Numeric("output gradient contains non-finite values".into()));
        }
        Ok(())
    }

    /// Reverse-mode pass: parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Matrix<T>) -> Result<(Gradients<T>, Matrix<T>)> {
        self.check_tape(tape, grad_out)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (layer, rec) in self.layers.iter().zip(&tape.records).rev() {
            let (p, dx) = layer.backward(rec, &g, true);
            grads.push(p.expect("requested"));
            g = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }

    /// Gradient w.r.t. the input only; parameters are treated as constants.
    pub fn backward_input(&self, tape: &Tape<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_tape(tape, grad_out)?;
        let mut g = grad_out.clone();
        for (layer, rec) in self.layers.iter().zip(&tape.records).rev() {
            g = layer.backward(rec, &g, false).1;
        }
        Ok(g)
    }

    /// Gradient of a scalar loss. `loss` must be the finite value computed from this tape.
    pub fn backprop_loss(
        &self,
        tape: &Tape<T>,
        loss: T,
        grad_out: &Matrix<T>,
    ) -> Result<(Gradients<T>, Matrix<T>)> {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss:?}")));
        }
        self.backward(tape, grad_out)
    }

    /// One optimizer step; rejects non-finite gradients before touching parameters.
    pub fn apply_gradients(&mut self, opt: &mut Adam<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numeric("gradient contains non-finite values".into()));
        }
        opt.step(self.params_mut(), grads.tensors())?;
        if !self.params().iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        Ok(())
    }

    /// `self = tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Network<T>, tau: T) -> Result<()> {
        if self.num_params() != source.num_params() {
            return Err(Error::Shape("soft update between different architectures".into()));
        }
        let keep = T::one() - tau;
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = tau * s + keep * *d;
            }
        }
        Ok(())
    }

    /// Hash of the exact parameter bits, for freeze checks.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params() {
            for v in p {
                v.to_f64().unwrap_or(f64::NAN).to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights().len()], vec![T::zero(); l.bias().len()]))
                .collect(),
        }
    }

    /// Same architecture and parameters in another float type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect()
        };
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    Layer::from_parts(
                        l.in_dim(),
                        l.width(),
                        l.activation(),
                        l.is_dense_block(),
                        conv(l.weights()),
                        conv(l.bias()),
                    )
                    .expect("same shapes")
                })
                .collect(),
        }
    }
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = T::from_usize(pred.as_slice().len().max(1)).expect("count fits");
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss = loss + d * d;
        *g = two * d / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("mse loss is {loss:?}")));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stacked_blocks_grow_by_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f32>::densenet(3, 2, 10, Activation::Swish, &mut rng).unwrap();
        assert_eq!(net.out_dim(), 23);
        let x = Matrix::row_vector(&[0.1f32, 0.2, 0.3]);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.cols(), 23);
        assert_eq!(&y.as_slice()[..3], x.as_slice());
    }

    #[test]
    fn linear_scalar_gradient() {
        // loss = w * x with x = 2
        let layer = Layer::from_parts(1, 1, Activation::Identity, false, vec![0.7f64], vec![0.0]).unwrap();
        let net = Network::from_layers(vec![layer]).unwrap();
        let mut tape = Tape::new();
        let y = net.forward_taped(&Matrix::row_vector(&[2.0]), &mut tape).unwrap();
        let (g, _) = net
            .backprop_loss(&tape, y.get(0, 0), &Matrix::row_vector(&[1.0]))
            .unwrap();
        assert_eq!(g.tensors()[0], &[2.0]);
        assert_eq!(g.tensors()[1], &[1.0]);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let layer =
            Layer::from_parts(2, 1, Activation::Identity, false, vec![0.5f64, -1.0], vec![0.25]).unwrap();
        let net = Network::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let target = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let y = net.forward_taped(&x, &mut tape).unwrap();
        let (loss, dl) = mse(&y, &target).unwrap();
        let (g, _) = net.backprop_loss(&tape, loss, &dl).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let layer = Layer::from_parts(1, 1, Activation::Identity, false, vec![1.0f64], vec![0.0]).unwrap();
        let net = Network::from_layers(vec![layer]).unwrap();
        let mut tape = Tape::new();
        net.forward_taped(&Matrix::row_vector(&[1.0]), &mut tape).unwrap();
        let r = net.backprop_loss(&tape, f64::NAN, &Matrix::row_vector(&[1.0]));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Layer::<f32>::new(3, 4, Activation::Relu, false, Init::He, &mut rng).unwrap();
        let b = Layer::<f32>::new(5, 1, Activation::Identity, false, Init::He, &mut rng).unwrap();
        assert!(matches!(Network::from_layers(vec![a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn soft_update_with_tau_one_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = Network::<f32>::mlp(4, &[8], 2, Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let mut dst = Network::<f32>::mlp(4, &[8], 2, Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        assert_ne!(src.checksum(), dst.checksum());
        dst.soft_update_from(&src, 1.0).unwrap();
        assert_eq!(src, dst);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::<f32>::densenet(5, 3, 7, Activation::Swish, &mut rng).unwrap();
        let x = Matrix::from_vec(4, 5, (0..20).map(|v| v as f32 * 0.1).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let b = net.forward_taped(&x, &mut tape).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
