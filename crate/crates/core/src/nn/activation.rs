use serde::{Deserialize, Serialize};

use super::matrix::Scalar;

/// Element-wise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Swish,
    Tanh,
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Swish => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`, given `y = apply(z)`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (T::one() - s)
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [Activation::Identity, Activation::Swish, Activation::Tanh, Activation::Relu] {
            for &z in &[-2.3f64, -0.4, 0.7, 1.9] {
                let numeric = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                let analytic = act.derivative(z, act.apply(z));
                assert!((numeric - analytic).abs() < 1e-8, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn swish_at_zero_is_zero() {
        assert_eq!(Activation::Swish.apply(0.0f64), 0.0);
    }
}
