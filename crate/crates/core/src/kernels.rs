//! Regularized Dirac deltas and Heaviside steps.
//!
//! Each delta family is a nascent delta with a finite width parameter:
//!
//! | family          | closed form                         | width |
//! |-----------------|-------------------------------------|-------|
//! | `Gaussian`      | `exp(-x²/2σ²) / (√(2π) σ)`          | σ     |
//! | `Lorentzian`    | `γ / (π (x² + γ²))`                 | γ     |
//! | `Sinc`          | `sin(L x) / (π x)`                  | 1/L   |
//! | `Box`           | `χ[-ε, ε](x) / 2ε`                  | ε     |
//! | `ExpOneSided`   | `λ exp(-λ x) H(x)`                  | 1/λ   |

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Lorentzian,
    Sinc,
    Box,
    ExpOnesided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaKernel {
    pub family: KernelFamily,
    pub width: f64,
}

impl DeltaKernel {
    pub fn new(family: KernelFamily, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!(
                "kernel width must be positive and finite, got {width}"
            )));
        }
        Ok(Self { family, width })
    }

    pub fn gaussian(width: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width)
    }

    /// Default kernel: Gaussian with width three times the finest cell.
    pub fn default_for_cell(finest_cell: f64) -> Result<Self> {
        Self::gaussian(3.0 * finest_cell)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w = self.width;
        match self.family {
            KernelFamily::Gaussian => {
                let z = x / w;
                (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * w)
            }
            KernelFamily::Lorentzian => w / (PI * (x * x + w * w)),
            KernelFamily::Sinc => {
                let l = 1.0 / w;
                let lx = l * x;
                if lx.abs() < 1e-8 {
                    l / PI * (1.0 - lx * lx / 6.0)
                } else {
                    lx.sin() / (PI * x)
                }
            }
            KernelFamily::Box => {
                if x.abs() <= w {
                    0.5 / w
                } else {
                    0.0
                }
            }
            KernelFamily::ExpOnesided => {
                if x >= 0.0 {
                    (-x / w).exp() / w
                } else {
                    0.0
                }
            }
        }
    }

    /// Value at the origin; the finite stand-in for δ(0).
    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }

    /// Half-width outside of which the kernel is treated as zero. `None` for
    /// families whose tails must not be cut (Lorentzian, sinc).
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Gaussian => Some(8.0 * self.width),
            KernelFamily::Box => Some(self.width),
            KernelFamily::ExpOnesided => Some(40.0 * self.width),
            KernelFamily::Lorentzian | KernelFamily::Sinc => None,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.family, self.width * factor)
    }
}

/// Heaviside step, hard (`width == 0`) or logistic of the given width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepKernel {
    pub width: f64,
}

impl StepKernel {
    pub fn hard() -> Self {
        Self { width: 0.0 }
    }

    pub fn smooth(width: f64) -> Result<Self> {
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("step width must be >= 0, got {width}")));
        }
        Ok(Self { width })
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.width == 0.0 {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 / (1.0 + (-x / self.width).exp())
        }
    }
}
