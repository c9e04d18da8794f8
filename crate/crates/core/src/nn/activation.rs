use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu_derivative(x),
            Activation::Identity => 1.0,
        }
    }
}

/// ELU with unit scale: `x` for positive inputs, `exp(x) - 1` otherwise.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.5), 2.5);
        // exp(-1) - 1 to 12 significant digits
        assert!((elu(-1.0) - (-0.632120558828558)).abs() < 1e-14);
        assert_eq!(elu_derivative(3.0), 1.0);
        assert!((elu_derivative(-1.0) - 0.36787944117144233).abs() < 1e-16);
    }
}
