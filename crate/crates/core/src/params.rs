//! Controller tunables, admissibility rules and the fixed-time bound calculus.
//!
//! The learning law uses two exponents derived from `(q1, q2)`:
//!
//! ```text
//! α₁ = (q₁ − 2)/(q₁ − 1),   α₂ = (q₂ − 2)/(q₂ − 1)
//! T* = (1/k)·[2^{α₁/2}/α₁ − 2^{α₂/2}/α₂]
//! ```
//!
//! A tuple `(q1, q2, k)` is admissible when `q1 > 2`, `1 < q2 < 2` and `k > 0`.
//! Admissibility yields `α₁ ∈ (0, 1)` and `α₂ < 0`, which makes the bracket
//! strictly positive and `T*` a valid upper bound on the convergence time.

use std::fmt;

use num_rational::Ratio;
use serde::{Serialize, Serializer};
use thiserror::Error;

/// Exact positive rational used for dither frequencies.
pub type Rational = Ratio<i64>;

/// The field of [`ControllerParams`] that failed an admissibility test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    Q1,
    Q2,
    K,
    A,
    Eps1,
    Eps2,
    Theta,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Clause::Q1 => "q1 must lie in (2, inf)",
            Clause::Q2 => "q2 must lie in (1, 2)",
            Clause::K => "k must be positive",
            Clause::A => "a must be positive",
            Clause::Eps1 => "eps1 must be positive",
            Clause::Eps2 => "eps2 must be positive",
            Clause::Theta => "theta entries must be positive rationals",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("q{index} = 1 makes the exponent denominator vanish")]
    SingularExponent { index: u8 },
    #[error("inadmissible parameter ({clause}), got {value}")]
    Admissibility { clause: Clause, value: f64 },
    #[error("duplicate dither frequency {0}")]
    DuplicateFrequency(Rational),
    #[error("at least one dither frequency is required")]
    EmptyFrequencies,
    #[error("target convergence time must be positive, got {0}")]
    NonPositiveTime(f64),
}

/// A low-order frequency coincidence under which third-moment dither averages
/// stop vanishing. Reported, never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Resonance {
    /// `θ[i] = 2·θ[j]`
    Double { i: usize, j: usize },
    /// `θ[i] = θ[j] + θ[l]`
    Sum { i: usize, j: usize, l: usize },
    /// `θ[i] = |θ[j] − θ[l]|`
    Difference { i: usize, j: usize, l: usize },
}

impl fmt::Display for Resonance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resonance::Double { i, j } => write!(f, "theta[{i}] = 2*theta[{j}]"),
            Resonance::Sum { i, j, l } => write!(f, "theta[{i}] = theta[{j}] + theta[{l}]"),
            Resonance::Difference { i, j, l } => {
                write!(f, "theta[{i}] = |theta[{j}] - theta[{l}]|")
            }
        }
    }
}

/// Raw controller tunables. Call [`ControllerParams::validate`] before use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerParams {
    pub q1: f64,
    pub q2: f64,
    /// Learning gain (1/time).
    pub k: f64,
    /// Dither amplitude.
    pub a: f64,
    /// Oscillator time scale.
    pub eps1: f64,
    /// Estimator time scale.
    pub eps2: f64,
    /// Dither frequency numerators, one per input channel.
    #[serde(serialize_with = "serialize_rationals")]
    pub theta: Vec<Rational>,
}

/// Default frequencies for `n = 2`: distinct, resonance free, and fast enough
/// relative to `eps1 = 0.1` that the Riccati estimator stays inside its
/// averaging regime at `a = 0.1`.
pub fn default_theta(n: usize) -> Vec<Rational> {
    // 10, 15/2, then half-integers 11/2, 13/2, 17/2, ... kept only when the set stays
    // duplicate- and resonance-free.
    let head = [Rational::from_integer(10), Rational::new(15, 2)];
    let tail = (0..).map(|m| Rational::new(11 + 2 * m, 2));
    let mut chosen: Vec<Rational> = Vec::with_capacity(n);
    for c in head.into_iter().chain(tail) {
        if chosen.len() == n {
            break;
        }
        if chosen.contains(&c) {
            continue;
        }
        chosen.push(c);
        if !resonances(&chosen).is_empty() {
            chosen.pop();
        }
    }
    chosen
}

impl ControllerParams {
    /// `figure1` configuration: `a = 0.1, eps1 = 0.1, eps2 = 10, k = 0.025, q1 = 3, q2 = 1.5`.
    pub fn figure1() -> Self {
        Self {
            q1: 3.0,
            q2: 1.5,
            k: 0.025,
            a: 0.1,
            eps1: 0.1,
            eps2: 10.0,
            theta: default_theta(2),
        }
    }

    /// Monte Carlo configuration: `T* = 100`, `eps2 = 6.25`, rest as in `figure1`.
    pub fn montecarlo() -> Self {
        let mut p = Self::figure1();
        p.k = gain_for_time(100.0, p.q1, p.q2).expect("admissible preset");
        p.eps2 = 6.25;
        p
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<ValidatedParams, ParamError> {
        check_admissible(self.q1, self.q2, self.k)?;
        for (clause, value) in [
            (Clause::A, self.a),
            (Clause::Eps1, self.eps1),
            (Clause::Eps2, self.eps2),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError::Admissibility { clause, value });
            }
        }
        if self.theta.is_empty() {
            return Err(ParamError::EmptyFrequencies);
        }
        for (i, t) in self.theta.iter().enumerate() {
            if *t.numer() <= 0 || *t.denom() <= 0 {
                return Err(ParamError::Admissibility {
                    clause: Clause::Theta,
                    value: ratio_to_f64(t),
                });
            }
            if self.theta[..i].contains(t) {
                return Err(ParamError::DuplicateFrequency(*t));
            }
        }
        let (alpha1, alpha2) = derive_alphas(self.q1, self.q2)?;
        Ok(ValidatedParams {
            alpha1,
            alpha2,
            t_star: bracket(alpha1, alpha2) / self.k,
            warnings: resonances(&self.theta),
            params: self.clone(),
        })
    }
}

/// Parameters that passed [`ControllerParams::validate`], together with the
/// derived exponents and fixed-time bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedParams {
    #[serde(flatten)]
    params: ControllerParams,
    alpha1: f64,
    alpha2: f64,
    t_star: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<Resonance>,
}

impl ValidatedParams {
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }
    pub fn t_star(&self) -> f64 {
        self.t_star
    }
    pub fn warnings(&self) -> &[Resonance] {
        &self.warnings
    }
    pub fn raw(&self) -> &ControllerParams {
        &self.params
    }
    pub fn theta_f64(&self) -> Vec<f64> {
        self.params.theta.iter().map(ratio_to_f64).collect()
    }
}

impl std::ops::Deref for ValidatedParams {
    type Target = ControllerParams;
    fn deref(&self) -> &ControllerParams {
        &self.params
    }
}

/// `((q1 − 2)/(q1 − 1), (q2 − 2)/(q2 − 1))`. Admissibility is not checked.
pub fn derive_alphas(q1: f64, q2: f64) -> Result<(f64, f64), ParamError> {
    if q1 == 1.0 {
        return Err(ParamError::SingularExponent { index: 1 });
    }
    if q2 == 1.0 {
        return Err(ParamError::SingularExponent { index: 2 });
    }
    Ok(((q1 - 2.0) / (q1 - 1.0), (q2 - 2.0) / (q2 - 1.0)))
}

fn check_admissible(q1: f64, q2: f64, k: f64) -> Result<(), ParamError> {
    if !(q1 > 2.0 && q1.is_finite()) {
        return Err(ParamError::Admissibility {
            clause: Clause::Q1,
            value: q1,
        });
    }
    if !(q2 > 1.0 && q2 < 2.0) {
        return Err(ParamError::Admissibility {
            clause: Clause::Q2,
            value: q2,
        });
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(ParamError::Admissibility {
            clause: Clause::K,
            value: k,
        });
    }
    Ok(())
}

/// `2^{α₁/2}/α₁ − 2^{α₂/2}/α₂`
fn bracket(alpha1: f64, alpha2: f64) -> f64 {
    (0.5 * alpha1).exp2() / alpha1 - (0.5 * alpha2).exp2() / alpha2
}

/// Upper bound `T*` on the convergence time for an admissible `(k, q1, q2)`.
pub fn fixed_time_bound(k: f64, q1: f64, q2: f64) -> Result<f64, ParamError> {
    check_admissible(q1, q2, k)?;
    let (a1, a2) = derive_alphas(q1, q2)?;
    Ok(bracket(a1, a2) / k)
}

/// Gain `k` that makes [`fixed_time_bound`] equal `t_star`.
pub fn gain_for_time(t_star: f64, q1: f64, q2: f64) -> Result<f64, ParamError> {
    if !(t_star > 0.0 && t_star.is_finite()) {
        return Err(ParamError::NonPositiveTime(t_star));
    }
    check_admissible(q1, q2, 1.0)?;
    let (a1, a2) = derive_alphas(q1, q2)?;
    Ok(bracket(a1, a2) / t_star)
}

/// Every low-order resonance among `theta`.
pub fn resonances(theta: &[Rational]) -> Vec<Resonance> {
    let n = theta.len();
    let two = Rational::from_integer(2);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && theta[i] == two * theta[j] {
                out.push(Resonance::Double { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for l in (j + 1)..n {
                if theta[i] == theta[j] + theta[l] {
                    out.push(Resonance::Sum { i, j, l });
                }
                let diff = theta[j] - theta[l];
                let diff = if diff < Rational::from_integer(0) {
                    -diff
                } else {
                    diff
                };
                // |θj − θl| = θj or θl reduces to the doubling case above
                if i != j && i != l && theta[i] == diff {
                    out.push(Resonance::Difference { i, j, l });
                }
            }
        }
    }
    out
}

pub fn ratio_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn format_rational(r: &Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn serialize_rationals<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(format_rational))
}
