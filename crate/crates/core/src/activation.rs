use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity of a dense network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `e^x - 1` for `x <= 0`, identity for `x > 0`.
    Elu,
    Sigmoid,
    Tanh,
    Relu,
    /// Identity; turns the network into an affine map.
    Linear,
}

impl Activation {
    /// The `order`-th derivative at `x`, for `order` in `0..=3`.
    ///
    /// ELU derivatives at exactly 0 take the left branch (`e^0 = 1`), so the
    /// second derivative there is 1.
    pub fn derivative(self, x: f64, order: u8) -> f64 {
        match self {
            Activation::Linear => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
            Activation::Elu => {
                if x > 0.0 {
                    match order {
                        0 => x,
                        1 => 1.0,
                        _ => 0.0,
                    }
                } else {
                    let e = libm::exp(x);
                    if order == 0 {
                        e - 1.0
                    } else {
                        e
                    }
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                let d1 = s * (1.0 - s);
                match order {
                    0 => s,
                    1 => d1,
                    2 => d1 * (1.0 - 2.0 * s),
                    _ => d1 * (1.0 - 6.0 * s + 6.0 * s * s),
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(x);
                let d1 = 1.0 - t * t;
                match order {
                    0 => t,
                    1 => d1,
                    2 => -2.0 * t * d1,
                    _ => d1 * (6.0 * t * t - 2.0),
                }
            }
            Activation::Relu => match order {
                0 => x.max(0.0),
                1 => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            },
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// Whether second-order derivative propagation is meaningful for this activation.
    pub fn has_second_derivative(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "elu" => Activation::Elu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "linear" => Activation::Linear,
            other => return Err(Error::Domain(alloc::format!("unknown activation '{other}'"))),
        })
    }
}
