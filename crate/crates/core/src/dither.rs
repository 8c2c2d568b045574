//! Torus oscillator, probe extraction, demodulation signals and the periodic
//! quadrature used to check the dither averaging identities.
//!
//! The oscillator state `μ ∈ 𝕋ⁿ ⊂ ℝ²ⁿ` is stored as `n` consecutive blocks
//! `(μ_{i,1}, μ_{i,2})`, each rotating with angular rate `2πθᵢ/ε₁`:
//!
//! ```text
//! μ̇_{i,1} =  (2π/ε₁)·θᵢ·μ_{i,2}
//! μ̇_{i,2} = −(2π/ε₁)·θᵢ·μ_{i,1}
//! ```
//!
//! The probe `μ̃` is the first entry of each block; it perturbs the plant input
//! and drives the demodulation signals
//!
//! ```text
//! M(μ) = (2/a)·μ̃
//! N_ii = (16/a²)(μ̃ᵢ² − 1/2),   N_ij = (4/a²)·μ̃ᵢμ̃ⱼ
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_integer::Integer;
use thiserror::Error;

use crate::exec::Execution;
use crate::params::{ratio_to_f64, Rational};

/// Unit-norm tolerance for torus blocks.
pub const TORUS_TOL: f64 = 1e-9;

/// Panels per common period used by the averaging oracles.
pub const QUADRATURE_PANELS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DitherError {
    #[error("torus vector must have even length, got {0}")]
    OddLength(usize),
    #[error("torus block {block} has norm {norm}, expected 1")]
    OffTorus { block: usize, norm: f64 },
    #[error("integral {integrand:?} requires distinct indices, got i = j = {index}")]
    IndicesMustDiffer {
        integrand: MomentIntegrand,
        index: usize,
    },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("expected {expected} frequencies, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A point on the torus `𝕋ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusState(Vec<f64>);

impl TorusState {
    pub fn new(mu: Vec<f64>) -> Result<Self, DitherError> {
        if !mu.len().is_multiple_of(2) {
            return Err(DitherError::OddLength(mu.len()));
        }
        for (block, pair) in mu.chunks_exact(2).enumerate() {
            let norm = pair[0].hypot(pair[1]);
            if (norm - 1.0).abs() > TORUS_TOL {
                return Err(DitherError::OffTorus { block, norm });
            }
        }
        Ok(Self(mu))
    }

    /// Every block at `(1, 0)`: pure cosine probes.
    pub fn cosine(n: usize) -> Self {
        Self([1.0, 0.0].repeat(n))
    }

    /// Block `i` at `(cos ψᵢ, sin ψᵢ)`.
    pub fn from_angles(angles: &[f64]) -> Self {
        Self(
            angles
                .iter()
                .flat_map(|psi| [psi.cos(), psi.sin()])
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn block(&self, i: usize) -> (f64, f64) {
        (self.0[2 * i], self.0[2 * i + 1])
    }
}

/// Odd-indexed entries of `μ` (one per block).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVector(pub Vec<f64>);

/// Right-hand side of the oscillator ODE.
pub fn oscillator_field(mu: &TorusState, eps1: f64, theta: &[Rational]) -> Vec<f64> {
    let mut out = vec![0.0; mu.as_slice().len()];
    let rates: Vec<f64> = theta.iter().map(ratio_to_f64).collect();
    oscillator_field_into(mu.as_slice(), eps1, &rates, &mut out);
    out
}

/// Slice form of [`oscillator_field`]; `rates` holds `θᵢ` as floats.
#[inline]
pub fn oscillator_field_into(mu: &[f64], eps1: f64, rates: &[f64], out: &mut [f64]) {
    let w = 2.0 * PI / eps1;
    for (i, &th) in rates.iter().enumerate() {
        out[2 * i] = w * th * mu[2 * i + 1];
        out[2 * i + 1] = -w * th * mu[2 * i];
    }
}

/// Exact solution of the oscillator: each block rotated by `2πθᵢt/ε₁`.
pub fn oscillator_closed_form(
    mu0: &TorusState,
    t: f64,
    eps1: f64,
    theta: &[Rational],
) -> TorusState {
    let mu = mu0
        .as_slice()
        .chunks_exact(2)
        .zip(theta)
        .flat_map(|(b, th)| {
            let (s, c) = (2.0 * PI * ratio_to_f64(th) * t / eps1).sin_cos();
            [b[0] * c + b[1] * s, -b[0] * s + b[1] * c]
        })
        .collect();
    TorusState(mu)
}

pub fn extract_probe(mu: &TorusState) -> ProbeVector {
    ProbeVector(mu.as_slice().iter().step_by(2).copied().collect())
}

/// The `n × 2n` selection matrix with `D·μ = μ̃`.
pub fn selection_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2 * n, |i, j| if j == 2 * i { 1.0 } else { 0.0 })
}

pub fn demod_gradient_signal(mu: &TorusState, a: f64) -> DVector<f64> {
    let probe = extract_probe(mu).0;
    let mut m = vec![0.0; probe.len()];
    gradient_signal_into(&probe, a, &mut m);
    DVector::from_vec(m)
}

pub fn demod_hessian_signal(mu: &TorusState, a: f64) -> DMatrix<f64> {
    let probe = extract_probe(mu).0;
    let n = probe.len();
    let mut nm = vec![0.0; n * n];
    hessian_signal_into(&probe, a, &mut nm);
    DMatrix::from_row_slice(n, n, &nm)
}

#[inline]
pub fn gradient_signal_into(probe: &[f64], a: f64, out: &mut [f64]) {
    let s = 2.0 / a;
    for (o, p) in out.iter_mut().zip(probe) {
        *o = s * p;
    }
}

/// Row-major `N(μ)` from the probe vector.
#[inline]
pub fn hessian_signal_into(probe: &[f64], a: f64, out: &mut [f64]) {
    let n = probe.len();
    let inv_a2 = 1.0 / (a * a);
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = if i == j {
                16.0 * inv_a2 * (probe[i] * probe[i] - 0.5)
            } else {
                4.0 * inv_a2 * (probe[i] * probe[j])
            };
        }
    }
}

/// Least common period of `cos(2πθᵢt)`, i.e. `LCM{1/θᵢ}` over the rationals.
pub fn common_period_exact(theta: &[Rational]) -> Rational {
    // For reduced p/q, the period is q/p; LCM of fractions = lcm(numerators)/gcd(denominators).
    let periods = theta.iter().map(|t| t.recip());
    let (num, den) = periods.fold((1i64, 0i64), |(num, den), p| {
        (num.lcm(p.numer()), den.gcd(p.denom()))
    });
    Rational::new(num, den)
}

pub fn common_period(theta: &[Rational]) -> f64 {
    ratio_to_f64(&common_period_exact(theta))
}

/// Composite Simpson average `(1/T)∫₀ᵀ f(s) ds` of a vector-valued integrand.
///
/// Samples are evaluated under `exec` and reduced sequentially in index order,
/// so the result is independent of the execution strategy.
pub fn periodic_average<F>(f: F, period: f64, panels: usize, exec: Execution) -> Vec<f64>
where
    F: Fn(f64) -> Vec<f64> + Sync + Send,
{
    let panels = panels + panels % 2;
    let h = period / panels as f64;
    let samples = exec.map_indexed(panels + 1, |m| f(m as f64 * h));
    let mut acc = vec![0.0; samples[0].len()];
    for (m, s) in samples.iter().enumerate() {
        let w = if m == 0 || m == panels {
            1.0
        } else if m % 2 == 1 {
            4.0
        } else {
            2.0
        };
        for (a, v) in acc.iter_mut().zip(s) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a *= h / 3.0 / period);
    acc
}

/// The eleven dither averages, in order `(a)` through `(k)`.
///
/// `Ñ` denotes the unscaled signals `Ñᵢᵢ = μ̃ᵢ² − 1/2` and `Ñᵢⱼ = μ̃ᵢμ̃ⱼ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentIntegrand {
    /// `μ̃ᵢ` → 0
    Probe,
    /// `μ̃ᵢ²` → 1/2
    ProbeSquared,
    /// `μ̃ᵢμ̃ⱼ`, i ≠ j → 0
    ProbeCross,
    /// `μ̃ᵢ²Ñᵢᵢ` → 1/8
    SquaredTimesOwnDiag,
    /// `μ̃ᵢ²Ñⱼⱼ`, i ≠ j → 0
    SquaredTimesOtherDiag,
    /// `μ̃ᵢ²Ñᵢⱼ`, i ≠ j → 0
    SquaredTimesOffDiag,
    /// `μ̃ᵢÑᵢⱼ`, i ≠ j → 0
    ProbeTimesOffDiag,
    /// `μ̃ᵢÑᵢᵢ` → 0
    ProbeTimesOwnDiag,
    /// `μ̃ᵢÑⱼⱼ`, i ≠ j → 0
    ProbeTimesOtherDiag,
    /// `μ̃ᵢμ̃ⱼÑᵢⱼ`, i ≠ j → 1/4
    CrossTimesOffDiag,
    /// `μ̃ᵢμ̃ⱼÑᵢᵢ`, i ≠ j → 0
    CrossTimesDiag,
}

impl MomentIntegrand {
    pub const ALL: [MomentIntegrand; 11] = [
        Self::Probe,
        Self::ProbeSquared,
        Self::ProbeCross,
        Self::SquaredTimesOwnDiag,
        Self::SquaredTimesOtherDiag,
        Self::SquaredTimesOffDiag,
        Self::ProbeTimesOffDiag,
        Self::ProbeTimesOwnDiag,
        Self::ProbeTimesOtherDiag,
        Self::CrossTimesOffDiag,
        Self::CrossTimesDiag,
    ];

    pub fn label(self) -> char {
        let idx = Self::ALL.iter().position(|&v| v == self).unwrap();
        (b'a' + idx as u8) as char
    }

    pub fn expected(self) -> f64 {
        match self {
            Self::ProbeSquared => 0.5,
            Self::SquaredTimesOwnDiag => 0.125,
            Self::CrossTimesOffDiag => 0.25,
            _ => 0.0,
        }
    }

    pub fn needs_distinct(self) -> bool {
        !matches!(
            self,
            Self::Probe | Self::ProbeSquared | Self::SquaredTimesOwnDiag | Self::ProbeTimesOwnDiag
        )
    }

    fn eval(self, p: &[f64], i: usize, j: usize) -> f64 {
        let diag = |k: usize| p[k] * p[k] - 0.5;
        let off = p[i] * p[j];
        match self {
            Self::Probe => p[i],
            Self::ProbeSquared => p[i] * p[i],
            Self::ProbeCross => off,
            Self::SquaredTimesOwnDiag => p[i] * p[i] * diag(i),
            Self::SquaredTimesOtherDiag => p[i] * p[i] * diag(j),
            Self::SquaredTimesOffDiag => p[i] * p[i] * off,
            Self::ProbeTimesOffDiag => p[i] * off,
            Self::ProbeTimesOwnDiag => p[i] * diag(i),
            Self::ProbeTimesOtherDiag => p[i] * diag(j),
            Self::CrossTimesOffDiag => off * off,
            Self::CrossTimesDiag => off * diag(i),
        }
    }
}

/// Probe of the unit-time-scale oscillator at time `s`.
pub fn probe_at(mu0: &TorusState, theta: &[f64], s: f64) -> Vec<f64> {
    mu0.as_slice()
        .chunks_exact(2)
        .zip(theta)
        .map(|(b, th)| {
            let (sn, cs) = (2.0 * PI * th * s).sin_cos();
            b[0] * cs + b[1] * sn
        })
        .collect()
}

/// One-period average of a dither integrand along the oscillator with `ε₁ = 1`.
pub fn moment_quadrature(
    theta: &[Rational],
    phases: &TorusState,
    integrand: MomentIntegrand,
    indices: (usize, usize),
) -> Result<f64, DitherError> {
    let n = phases.dim();
    if theta.len() != n {
        return Err(DitherError::DimensionMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    let (i, j) = indices;
    for index in [i, j] {
        if index >= n {
            return Err(DitherError::IndexOutOfRange { index, dim: n });
        }
    }
    if integrand.needs_distinct() && i == j {
        return Err(DitherError::IndicesMustDiffer {
            integrand,
            index: i,
        });
    }
    let rates: Vec<f64> = theta.iter().map(ratio_to_f64).collect();
    let period = common_period(theta);
    let avg = periodic_average(
        |s| vec![integrand.eval(&probe_at(phases, &rates, s), i, j)],
        period,
        QUADRATURE_PANELS,
        Execution::Sequential,
    );
    Ok(avg[0])
}
