//! Central finite-difference verification of network gradients.
//!
//! The numeric side only ever calls `Network::forward`, so it shares no code with
//! the backward pass it checks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::matrix::Matrix;
use super::network::{mse, Network, Tape};
use crate::error::Result;

/// Random DenseNet + linear head, MSE against a random target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSpec {
    pub in_dim: usize,
    pub blocks: usize,
    pub width: usize,
    pub out_dim: usize,
    pub batch: usize,
    /// Number of parameter coordinates sampled (all of them if the net is smaller).
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Negative control: perturb the analytic gradient before comparing.
    #[serde(default)]
    pub corrupt_gradient: bool,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            in_dim: 3,
            blocks: 2,
            width: 10,
            out_dim: 3,
            batch: 8,
            coordinates: 200,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: (usize, usize),
    pub passed: bool,
}

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `net` on `(input, target)` at `coordinates` random parameter positions.
pub fn check_network(
    net: &Network<f64>,
    input: &Matrix<f64>,
    target: &Matrix<f64>,
    coordinates: usize,
    step: f64,
    tolerance: f64,
    corrupt: bool,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let pred = net.forward_taped(input, &mut tape)?;
    let (loss, dl) = mse(&pred, target)?;
    let (mut grads, _) = net.backprop_loss(&tape, loss, &dl)?;
    if corrupt {
        for t in grads.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * 1.5 + 1e-3;
            }
        }
    }

    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if coordinates >= total {
        (0..total).collect()
    } else {
        let mut v = sample(rng, total, coordinates).into_vec();
        v.sort_unstable();
        v
    };

    let analytic_tensors = grads.tensors();
    let mut probe = net.clone();
    let mut max_err = 0.0f64;
    let mut worst = (0, 0);
    for flat in &picks {
        let (mut tensor, mut idx) = (0, *flat);
        while idx >= sizes[tensor] {
            idx -= sizes[tensor];
            tensor += 1;
        }
        let original = probe.params()[tensor][idx];
        probe.params_mut()[tensor][idx] = original + step;
        let plus = mse(&probe.forward(input)?, target)?.0;
        probe.params_mut()[tensor][idx] = original - step;
        let minus = mse(&probe.forward(input)?, target)?.0;
        probe.params_mut()[tensor][idx] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic_tensors[tensor][idx], numeric);
        if err > max_err || err.is_nan() {
            max_err = err;
            worst = (tensor, idx);
        }
    }
    Ok(GradCheckReport {
        num_params: total,
        checked: picks.len(),
        max_rel_error: max_err,
        worst_coordinate: worst,
        passed: max_err < tolerance,
    })
}

/// Builds the network described by `spec` from `seed` and checks it.
pub fn run_gradcheck(spec: &GradCheckSpec, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = Network::<f64>::densenet(spec.in_dim, spec.blocks, spec.width, Activation::Swish, &mut rng)?;
    let head = Network::<f64>::mlp(body.out_dim(), &[], spec.out_dim, Activation::Identity, Activation::Identity, &mut rng)?;
    let mut layers = body.layers().to_vec();
    layers.extend_from_slice(head.layers());
    let mut net = Network::from_layers(layers)?;
    // Nonzero biases so every activation regime is exercised.
    for layer in net.layers_mut() {
        for b in layer.bias_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let input = Matrix::from_vec(
        spec.batch,
        spec.in_dim,
        (0..spec.batch * spec.in_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )?;
    let target = Matrix::from_vec(
        spec.batch,
        spec.out_dim,
        (0..spec.batch * spec.out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    check_network(
        &net,
        &input,
        &target,
        spec.coordinates,
        spec.step,
        spec.tolerance,
        spec.corrupt_gradient,
        &mut rng,
    )
}
