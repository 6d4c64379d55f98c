use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Pointwise nonlinearity of a shallow layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    ReLU,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative, with the subgradient of ReLU at 0 fixed to 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    /// `(σ(z), σ'(z))` sharing the exponential for the sigmoid.
    #[inline]
    pub fn value_and_derivative(self, z: f64) -> (f64, f64) {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
        }
    }

    pub(crate) fn apply_slice(self, z: &mut [f64]) {
        match self {
            Activation::ReLU => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Compile-time activation, so the batched kernels can be specialized per nonlinearity.
pub(crate) trait Act {
    fn value(z: f64) -> f64;
    fn value_and_derivative(z: f64) -> (f64, f64);
}

pub(crate) struct Relu;
pub(crate) struct Sig;

impl Act for Relu {
    #[inline(always)]
    fn value(z: f64) -> f64 {
        z.max(0.0)
    }
    #[inline(always)]
    fn value_and_derivative(z: f64) -> (f64, f64) {
        let on = f64::from(u8::from(z > 0.0));
        (z.max(0.0), on)
    }
}

impl Act for Sig {
    #[inline(always)]
    fn value(z: f64) -> f64 {
        sigmoid(z)
    }
    #[inline(always)]
    fn value_and_derivative(z: f64) -> (f64, f64) {
        let s = sigmoid(z);
        (s, s * (1.0 - s))
    }
}

#[inline(always)]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + exp(-z))
}

/// `e^x` without branches or calls, so lane loops over it vectorize. Arguments are
/// clamped to `[-708, 709]`; relative error stays within a few ulp of `f64::exp`.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    let x = x.clamp(-708.0, 709.0);
    let shifted = x * std::f64::consts::LOG2_E + ROUND;
    let k = shifted - ROUND;
    let ki = shifted.to_bits() as i64 - ROUND.to_bits() as i64;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to r^13; |r| ≤ ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(((ki + 1023) << 52) as u64)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::ReLU),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_kink() {
        assert_eq!(Activation::ReLU.apply(-2.0), 0.0);
        assert_eq!(Activation::ReLU.apply(3.0), 3.0);
        assert_eq!(Activation::ReLU.derivative(0.0), 0.0);
        assert_eq!(Activation::ReLU.derivative(1e-300), 1.0);
    }

    #[test]
    fn sigmoid_derivative_identity() {
        for &z in &[-5.0, -0.3, 0.0, 0.7, 12.0] {
            let s = Activation::Sigmoid.apply(z);
            assert_eq!(Activation::Sigmoid.derivative(z), s * (1.0 - s));
            let h = 1e-6;
            let fd = (Activation::Sigmoid.apply(z + h) - Activation::Sigmoid.apply(z - h)) / (2.0 * h);
            assert!((fd - Activation::Sigmoid.derivative(z)).abs() < 1e-9);
        }
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn branchless_exp_matches_std() {
        let mut worst = 0.0f64;
        for i in -70_000..=70_000 {
            let x = i as f64 * 0.01 + 0.003_7;
            let (a, b) = (exp(x), x.exp());
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "{worst:e}");
        assert_eq!(exp(0.0), 1.0);
        assert!((exp(1.0) - std::f64::consts::E).abs() <= 2.0 * f64::EPSILON);
        assert!(exp(-1e4) > 0.0 && exp(-1e4) < 1e-307);
        assert!(exp(1e4).is_finite());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::ReLU);
        assert_eq!("sigmoid".parse::<Activation>().unwrap(), Activation::Sigmoid);
        assert!("tanh".parse::<Activation>().is_err());
    }
}
