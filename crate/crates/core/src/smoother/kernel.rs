use std::fmt;
use std::str::FromStr;

/// Second-order kernels. The compact ones vanish outside `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Uniform,
    Gaussian,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Uniform => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => 0.398_942_280_401_432_7 * (-0.5 * u * u).exp(),
        }
    }

    /// Half-width of the support in units of `u`, `None` for unbounded.
    pub fn support(self) -> Option<f64> {
        match self {
            Kernel::Epanechnikov | Kernel::Uniform => Some(1.0),
            Kernel::Gaussian => None,
        }
    }

    /// `int K(u)^2 du`.
    pub fn roughness(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.6,
            Kernel::Uniform => 0.5,
            Kernel::Gaussian => 1.0 / (2.0 * std::f64::consts::PI.sqrt()),
        }
    }

    /// `int u^2 K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.2,
            Kernel::Uniform => 1.0 / 3.0,
            Kernel::Gaussian => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Uniform => "uniform",
            Kernel::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "uniform" | "box" => Ok(Kernel::Uniform),
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            other => Err(format!("unknown kernel '{other}'")),
        }
    }
}
