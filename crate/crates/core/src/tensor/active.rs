use serde::{Deserialize, Serialize};

use super::Real;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const ELU_ALPHA: f64 = 1.0;

/// The three searchable nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Elu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Elu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Elu => "elu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        if x >= T::zero() {
            return x;
        }
        match self {
            ActivationKind::Relu => T::zero(),
            ActivationKind::LeakyRelu => T::lit(LEAKY_SLOPE) * x,
            ActivationKind::Elu => T::lit(ELU_ALPHA) * (x.exp() - T::one()),
        }
    }

    /// Derivative given input `x` and output `y`; at 0 the positive side wins.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        if x >= T::zero() {
            return T::one();
        }
        match self {
            ActivationKind::Relu => T::zero(),
            ActivationKind::LeakyRelu => T::lit(LEAKY_SLOPE),
            ActivationKind::Elu => y + T::lit(ELU_ALPHA),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        let r: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|&x| ActivationKind::Relu.apply(x)).collect();
        assert_eq!(r, vec![0.0, 0.0, 2.0]);
        assert!((ActivationKind::LeakyRelu.apply(-1.0f64) + 0.01).abs() < 1e-15);
        assert_eq!(ActivationKind::LeakyRelu.apply(2.0f64), 2.0);
        assert!((ActivationKind::Elu.apply(-1.0f64) - (-0.6321205588)).abs() < 1e-9);
    }

    #[test]
    fn kink_derivative_from_positive_side() {
        for k in ActivationKind::ALL {
            assert_eq!(k.derivative(0.0f64, 0.0), 1.0);
        }
    }
}
