//! Model parameters of the two-species activator-inhibitor system and the
//! pointwise right-hand side shared by the grid solver and the PINN residual.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("beta must be non-zero (it divides the alpha*r1 coupling)")]
    ZeroBeta,
    #[error("parameter {name} is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("gamma must equal -alpha (got gamma={gamma}, alpha={alpha})")]
    GammaTie { gamma: f64, alpha: f64 },
    #[error("unknown pattern id {0:?}; expected one of P, Q, R")]
    UnknownPattern(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
}

/// Identifies one scalar of [`RdParams`]. `gamma` is absent on purpose: it is
/// always `-alpha` and never addressed on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    D1,
    D2,
    Alpha,
    Beta,
    R1,
    R2,
}

impl ParamId {
    pub const ALL: [ParamId; 6] = [
        ParamId::D1,
        ParamId::D2,
        ParamId::Alpha,
        ParamId::Beta,
        ParamId::R1,
        ParamId::R2,
    ];

    /// The five parameters an inverse run can ever train, in flat-vector order.
    pub const TRAINABLE: [ParamId; 5] = [
        ParamId::D1,
        ParamId::D2,
        ParamId::Alpha,
        ParamId::Beta,
        ParamId::R1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::D1 => "D1",
            ParamId::D2 => "D2",
            ParamId::Alpha => "alpha",
            ParamId::Beta => "beta",
            ParamId::R1 => "r1",
            ParamId::R2 => "r2",
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamId {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(ParamId::D1),
            "d2" => Ok(ParamId::D2),
            "alpha" => Ok(ParamId::Alpha),
            "beta" => Ok(ParamId::Beta),
            "r1" => Ok(ParamId::R1),
            "r2" => Ok(ParamId::R2),
            _ => Err(ParamError::UnknownParam(s.to_string())),
        }
    }
}

/// The seven model parameters. `gamma` is not stored; it is derived as
/// `-alpha` so the tie cannot be broken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RdParamsRepr", into = "RdParamsRepr")]
pub struct RdParams {
    d1: f64,
    d2: f64,
    alpha: f64,
    beta: f64,
    r1: f64,
    r2: f64,
}

impl RdParams {
    pub fn new(d1: f64, d2: f64, alpha: f64, beta: f64, r1: f64, r2: f64) -> Result<Self, ParamError> {
        let p = RdParams { d1, d2, alpha, beta, r1, r2 };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), ParamError> {
        for id in ParamId::ALL {
            let value = self.get(id);
            if !value.is_finite() {
                return Err(ParamError::NonFinite { name: id.name(), value });
            }
        }
        if self.beta == 0.0 {
            return Err(ParamError::ZeroBeta);
        }
        Ok(())
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }
    pub fn d2(&self) -> f64 {
        self.d2
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        -self.alpha
    }
    pub fn r1(&self) -> f64 {
        self.r1
    }
    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::D1 => self.d1,
            ParamId::D2 => self.d2,
            ParamId::Alpha => self.alpha,
            ParamId::Beta => self.beta,
            ParamId::R1 => self.r1,
            ParamId::R2 => self.r2,
        }
    }

    /// Returns a copy with one parameter replaced, re-checking the invariants.
    pub fn with(&self, id: ParamId, value: f64) -> Result<Self, ParamError> {
        let mut p = *self;
        match id {
            ParamId::D1 => p.d1 = value,
            ParamId::D2 => p.d2 = value,
            ParamId::Alpha => p.alpha = value,
            ParamId::Beta => p.beta = value,
            ParamId::R1 => p.r1 = value,
            ParamId::R2 => p.r2 = value,
        }
        p.check()?;
        Ok(p)
    }

    /// Effective diffusivity of `u`, i.e. the coefficient of its Laplacian.
    pub fn diffusion_u(&self) -> f64 {
        self.d1 * self.d2
    }

    /// Effective diffusivity of `v`.
    pub fn diffusion_v(&self) -> f64 {
        self.d2
    }
}

impl fmt::Display for RdParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "D1={} D2={} alpha={} beta={} gamma={} r1={} r2={}",
            self.d1,
            self.d2,
            self.alpha,
            self.beta,
            self.gamma(),
            self.r1,
            self.r2
        )
    }
}

/// Serialized form. `gamma` is written for readability and, when present on
/// input, must agree with `-alpha`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RdParamsRepr {
    d1: f64,
    d2: f64,
    alpha: f64,
    beta: f64,
    #[serde(default)]
    gamma: Option<f64>,
    r1: f64,
    r2: f64,
}

impl TryFrom<RdParamsRepr> for RdParams {
    type Error = ParamError;

    fn try_from(r: RdParamsRepr) -> Result<Self, Self::Error> {
        if let Some(gamma) = r.gamma {
            if gamma != -r.alpha {
                return Err(ParamError::GammaTie { gamma, alpha: r.alpha });
            }
        }
        RdParams::new(r.d1, r.d2, r.alpha, r.beta, r.r1, r.r2)
    }
}

impl From<RdParams> for RdParamsRepr {
    fn from(p: RdParams) -> Self {
        RdParamsRepr {
            d1: p.d1,
            d2: p.d2,
            alpha: p.alpha,
            beta: p.beta,
            gamma: Some(p.gamma()),
            r1: p.r1,
            r2: p.r2,
        }
    }
}

/// The three published reference patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternId {
    /// Stripes, dominant mode 0.42.
    P,
    /// Stripes, dominant mode 0.60.
    Q,
    /// Spots, dominant mode 0.42.
    R,
}

impl PatternId {
    pub const ALL: [PatternId; 3] = [PatternId::P, PatternId::Q, PatternId::R];

    /// Published dominant wavenumber of the pattern.
    pub fn reference_mode(self) -> f64 {
        match self {
            PatternId::P | PatternId::R => 0.42,
            PatternId::Q => 0.60,
        }
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PatternId::P => "P",
            PatternId::Q => "Q",
            PatternId::R => "R",
        };
        f.write_str(s)
    }
}

impl FromStr for PatternId {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "P" | "p" => Ok(PatternId::P),
            "Q" | "q" => Ok(PatternId::Q),
            "R" | "r" => Ok(PatternId::R),
            other => Err(ParamError::UnknownPattern(other.to_string())),
        }
    }
}

/// Published parameter set that generates the named pattern.
pub fn params_for_pattern(id: PatternId) -> RdParams {
    let (d1, d2, alpha, beta, r1, r2) = match id {
        PatternId::P => (0.516, 2.0, 0.899, -0.91, 3.50, 0.0),
        PatternId::Q => (0.300, 2.0, 0.700, -0.75, 3.50, 0.0),
        PatternId::R => (0.516, 2.0, 0.899, -0.91, 0.02, 0.2),
    };
    RdParams { d1, d2, alpha, beta, r1, r2 }
}

/// Looks a pattern up by its textual id.
pub fn params_for_pattern_name(name: &str) -> Result<RdParams, ParamError> {
    name.parse().map(params_for_pattern)
}

/// Time derivatives of `(u, v)` at one point given the local Laplacians.
#[inline]
pub fn reaction_rhs(u: f64, v: f64, lap_u: f64, lap_v: f64, p: &RdParams) -> (f64, f64) {
    let du = p.d1 * p.d2 * lap_u + p.alpha * u * (1.0 - p.r1 * v * v) + v * (1.0 - p.r2 * u);
    let dv = p.d2 * lap_v
        + p.beta * v * (1.0 + (p.alpha * p.r1 / p.beta) * u * v)
        + u * (p.gamma() + p.r2 * v);
    (du, dv)
}
