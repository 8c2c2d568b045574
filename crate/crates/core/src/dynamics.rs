//! Closed-loop vector fields and the analysis-side oracle fields.
//!
//! Two routes compute the same controller:
//!
//! * the per-operation functions ([`learning_field`], [`hessian_estimator_field`],
//!   [`gradient_estimator_field`], [`nfxtes_field`]) work on `nalgebra` values
//!   and read like the equations;
//! * [`NfxtesSystem`] and [`BaselineSystem`] evaluate the same fields on flat
//!   slices without allocating and are what the integrator runs.
//!
//! The unit tests pin the two routes against each other.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dither::{
    common_period, demod_gradient_signal, demod_hessian_signal, extract_probe,
    gradient_signal_into, hessian_signal_into, oscillator_field, oscillator_field_into,
    periodic_average, probe_at, TorusState, QUADRATURE_PANELS,
};
use crate::exec::Execution;
use crate::params::{ratio_to_f64, Rational, ValidatedParams};
use crate::plant::{Analytic, Measure};
use crate::sim::{FieldFault, Layout, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("Hessian is singular or not positive definite at the evaluation point")]
    SingularHessian,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite measurement {value} at z = {z:?}")]
    NonFiniteMeasurement { value: f64, z: Vec<f64> },
    #[error(transparent)]
    Torus(#[from] crate::dither::DitherError),
}

/// `x`, `ξ₁` (Hessian-inverse estimate), `ξ₂` (gradient estimate) and the oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub x: DVector<f64>,
    pub xi1: DMatrix<f64>,
    pub xi2: DVector<f64>,
    pub mu: TorusState,
}

/// Time derivative of a [`ClosedLoopState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRates {
    pub x: DVector<f64>,
    pub xi1: DMatrix<f64>,
    pub xi2: DVector<f64>,
    pub mu: Vec<f64>,
}

impl ClosedLoopState {
    /// Estimators at `ξ₁ = xi1_scale·I`, `ξ₂ = 0`, pure cosine probes.
    pub fn initial(x0: &[f64], xi1_0: DMatrix<f64>) -> Self {
        let n = x0.len();
        Self {
            x: DVector::from_column_slice(x0),
            xi1: xi1_0,
            xi2: DVector::zeros(n),
            mu: TorusState::cosine(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(Layout::ClosedLoop { n }.dim());
        out.extend_from_slice(self.x.as_slice());
        out.extend(row_major(&self.xi1));
        out.extend_from_slice(self.xi2.as_slice());
        out.extend_from_slice(self.mu.as_slice());
        out
    }

    pub fn from_flat(n: usize, y: &[f64]) -> Result<Self, DynamicsError> {
        let l = Layout::ClosedLoop { n };
        if y.len() != l.dim() {
            return Err(DynamicsError::Dimension {
                expected: l.dim(),
                got: y.len(),
            });
        }
        Ok(Self {
            x: DVector::from_column_slice(&y[l.x().unwrap()]),
            xi1: DMatrix::from_row_slice(n, n, &y[l.xi1().unwrap()]),
            xi2: DVector::from_column_slice(&y[l.xi2().unwrap()]),
            mu: TorusState::new(y[l.torus().unwrap()].to_vec())?,
        })
    }
}

impl ClosedLoopRates {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.x.as_slice().to_vec();
        out.extend(row_major(&self.xi1));
        out.extend_from_slice(self.xi2.as_slice());
        out.extend_from_slice(&self.mu);
        out
    }
}

/// Classic Newton ES state: the closed-loop state plus low-pass filtered estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub x: DVector<f64>,
    pub xi1: DMatrix<f64>,
    pub xi2: DVector<f64>,
    pub xi1_f: DMatrix<f64>,
    pub xi2_f: DVector<f64>,
    pub mu: TorusState,
}

impl BaselineState {
    /// Filters start at the estimator values.
    pub fn initial(x0: &[f64], xi1_0: DMatrix<f64>) -> Self {
        let n = x0.len();
        Self {
            x: DVector::from_column_slice(x0),
            xi1_f: xi1_0.clone(),
            xi1: xi1_0,
            xi2: DVector::zeros(n),
            xi2_f: DVector::zeros(n),
            mu: TorusState::cosine(n),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.x.as_slice().to_vec();
        out.extend(row_major(&self.xi1));
        out.extend_from_slice(self.xi2.as_slice());
        out.extend(row_major(&self.xi1_f));
        out.extend_from_slice(self.xi2_f.as_slice());
        out.extend_from_slice(self.mu.as_slice());
        out
    }
}

pub fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// `(|v|^{1−α₁} + |v|^{1−α₂})` applied to the unit vector `v/|v|`; exactly zero at `v = 0`.
#[inline]
fn fixed_time_direction(v: &[f64], alpha1: f64, alpha2: f64, out: &mut [f64]) {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = norm.powf(1.0 - alpha1) + norm.powf(1.0 - alpha2);
    for (o, a) in out.iter_mut().zip(v) {
        *o = (a / norm) * s;
    }
}

/// `ẋ = −k·ξ₁·ξ₂·(|ξ₂|^{−α₁} + |ξ₂|^{−α₂})`, continuously extended by 0 at `ξ₂ = 0`.
pub fn learning_field(
    xi1: &DMatrix<f64>,
    xi2: &DVector<f64>,
    params: &ValidatedParams,
) -> DVector<f64> {
    let mut u = DVector::zeros(xi2.len());
    fixed_time_direction(
        xi2.as_slice(),
        params.alpha1(),
        params.alpha2(),
        u.as_mut_slice(),
    );
    xi1 * u * (-params.k)
}

/// Riccati filter `ξ̇₁ = (ξ₁ − ξ₁·y·N·ξ₁)/ε₂` whose average equilibrium is the Hessian inverse.
pub fn hessian_estimator_field(
    xi1: &DMatrix<f64>,
    y: f64,
    n_sig: &DMatrix<f64>,
    eps2: f64,
) -> DMatrix<f64> {
    (xi1 - xi1 * (n_sig * y) * xi1) / eps2
}

/// `ξ̇₂ = (−ξ₂ + y·M)/ε₂`
pub fn gradient_estimator_field(
    xi2: &DVector<f64>,
    y: f64,
    m: &DVector<f64>,
    eps2: f64,
) -> DVector<f64> {
    (m * y - xi2) / eps2
}

/// The assembled controller field. Measures the map exactly once.
pub fn nfxtes_field<M: Measure + ?Sized>(
    s: &ClosedLoopState,
    map: &M,
    params: &ValidatedParams,
) -> Result<ClosedLoopRates, DynamicsError> {
    let probe = DVector::from_vec(extract_probe(&s.mu).0);
    let z = &s.x + &probe * params.a;
    let y = map.measure(z.as_slice());
    if !y.is_finite() {
        return Err(DynamicsError::NonFiniteMeasurement {
            value: y,
            z: z.as_slice().to_vec(),
        });
    }
    let m = demod_gradient_signal(&s.mu, params.a);
    let n_sig = demod_hessian_signal(&s.mu, params.a);
    Ok(ClosedLoopRates {
        x: learning_field(&s.xi1, &s.xi2, params),
        xi1: hessian_estimator_field(&s.xi1, y, &n_sig, params.eps2),
        xi2: gradient_estimator_field(&s.xi2, y, &m, params.eps2),
        mu: oscillator_field(&s.mu, params.eps1, &params.theta),
    })
}

/// Classic Newton ES: `ẋ = −k·ξ₁ᶠ·ξ₂ᶠ` with first-order filters of time constant `tau_f`.
pub fn baseline_newton_field<M: Measure + ?Sized>(
    s: &BaselineState,
    map: &M,
    params: &ValidatedParams,
    tau_f: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let est = ClosedLoopState {
        x: s.x.clone(),
        xi1: s.xi1.clone(),
        xi2: s.xi2.clone(),
        mu: s.mu.clone(),
    };
    let r = nfxtes_field(&est, map, params)?;
    let dx = &s.xi1_f * &s.xi2_f * (-params.k);
    let dxi1_f = (&s.xi1 - &s.xi1_f) / tau_f;
    let dxi2_f = (&s.xi2 - &s.xi2_f) / tau_f;
    let mut out = dx.as_slice().to_vec();
    out.extend(row_major(&r.xi1));
    out.extend_from_slice(r.xi2.as_slice());
    out.extend(row_major(&dxi1_f));
    out.extend_from_slice(dxi2_f.as_slice());
    out.extend_from_slice(&r.mu);
    Ok(out)
}

#[derive(Debug, Clone)]
struct Scratch {
    probe: Vec<f64>,
    z: Vec<f64>,
    m: Vec<f64>,
    n_sig: Vec<f64>,
    u: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            probe: vec![0.0; n],
            z: vec![0.0; n],
            m: vec![0.0; n],
            n_sig: vec![0.0; n * n],
            u: vec![0.0; n],
            tmp: vec![0.0; n * n],
        }
    }
}

/// Measure at `z = x + a·μ̃` and write both estimator rates.
#[inline]
#[allow(clippy::too_many_arguments)]
fn estimator_rates<M: Measure + ?Sized>(
    map: &M,
    a: f64,
    eps2: f64,
    x: &[f64],
    xi1: &[f64],
    xi2: &[f64],
    mu: &[f64],
    sc: &mut Scratch,
    dxi1: &mut [f64],
    dxi2: &mut [f64],
) -> Result<(), FieldFault> {
    let n = x.len();
    for i in 0..n {
        sc.probe[i] = mu[2 * i];
        sc.z[i] = x[i] + a * sc.probe[i];
    }
    let y = map.measure(&sc.z);
    if !y.is_finite() {
        return Err(FieldFault(format!(
            "non-finite measurement {y} at z = {:?}",
            sc.z
        )));
    }
    gradient_signal_into(&sc.probe, a, &mut sc.m);
    hessian_signal_into(&sc.probe, a, &mut sc.n_sig);
    let inv = 1.0 / eps2;
    // tmp = (y·N)·ξ₁
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += sc.n_sig[i * n + l] * xi1[l * n + j];
            }
            sc.tmp[i * n + j] = y * acc;
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += xi1[i * n + l] * sc.tmp[l * n + j];
            }
            dxi1[i * n + j] = inv * (xi1[i * n + j] - acc);
        }
        dxi2[i] = inv * (y * sc.m[i] - xi2[i]);
    }
    Ok(())
}

#[inline]
fn mat_vec_scaled(mat: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = scale * (0..n).map(|j| mat[i * n + j] * v[j]).sum::<f64>();
    }
}

/// Allocation-free closed loop for the integrator.
pub struct NfxtesSystem<'a, M: ?Sized> {
    map: &'a M,
    params: &'a ValidatedParams,
    rates: Vec<f64>,
    scratch: RefCell<Scratch>,
}

impl<'a, M: Measure + ?Sized> NfxtesSystem<'a, M> {
    pub fn new(map: &'a M, params: &'a ValidatedParams) -> Result<Self, DynamicsError> {
        let n = params.dim();
        if map.dim() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                got: map.dim(),
            });
        }
        Ok(Self {
            map,
            params,
            rates: params.theta_f64(),
            scratch: RefCell::new(Scratch::new(n)),
        })
    }
}

impl<M: Measure + ?Sized> VectorField for NfxtesSystem<'_, M> {
    fn layout(&self) -> Layout {
        Layout::ClosedLoop {
            n: self.rates.len(),
        }
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), FieldFault> {
        let l = self.layout();
        let p = self.params;
        let (x, xi1, xi2, mu) = (
            &y[l.x().unwrap()],
            &y[l.xi1().unwrap()],
            &y[l.xi2().unwrap()],
            &y[l.torus().unwrap()],
        );
        let sc = &mut *self.scratch.borrow_mut();
        let (dx, rest) = dy.split_at_mut(x.len());
        let (dxi1, rest) = rest.split_at_mut(xi1.len());
        let (dxi2, dmu) = rest.split_at_mut(xi2.len());
        estimator_rates(self.map, p.a, p.eps2, x, xi1, xi2, mu, sc, dxi1, dxi2)?;
        fixed_time_direction(xi2, p.alpha1(), p.alpha2(), &mut sc.u);
        mat_vec_scaled(xi1, &sc.u, -p.k, dx);
        oscillator_field_into(mu, p.eps1, &self.rates, dmu);
        Ok(())
    }
}

/// Allocation-free classic Newton ES for the integrator.
pub struct BaselineSystem<'a, M: ?Sized> {
    map: &'a M,
    params: &'a ValidatedParams,
    tau_f: f64,
    rates: Vec<f64>,
    scratch: RefCell<Scratch>,
}

impl<'a, M: Measure + ?Sized> BaselineSystem<'a, M> {
    pub fn new(map: &'a M, params: &'a ValidatedParams, tau_f: f64) -> Result<Self, DynamicsError> {
        let n = params.dim();
        if map.dim() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                got: map.dim(),
            });
        }
        Ok(Self {
            map,
            params,
            tau_f,
            rates: params.theta_f64(),
            scratch: RefCell::new(Scratch::new(n)),
        })
    }
}

impl<M: Measure + ?Sized> VectorField for BaselineSystem<'_, M> {
    fn layout(&self) -> Layout {
        Layout::Baseline {
            n: self.rates.len(),
        }
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), FieldFault> {
        let l = self.layout();
        let p = self.params;
        let x = &y[l.x().unwrap()];
        let xi1 = &y[l.xi1().unwrap()];
        let xi2 = &y[l.xi2().unwrap()];
        let xi1_f = &y[l.xi1_filtered().unwrap()];
        let xi2_f = &y[l.xi2_filtered().unwrap()];
        let mu = &y[l.torus().unwrap()];
        let sc = &mut *self.scratch.borrow_mut();
        let (dx, rest) = dy.split_at_mut(x.len());
        let (dxi1, rest) = rest.split_at_mut(xi1.len());
        let (dxi2, rest) = rest.split_at_mut(xi2.len());
        let (dxi1_f, rest) = rest.split_at_mut(xi1.len());
        let (dxi2_f, dmu) = rest.split_at_mut(xi2.len());
        estimator_rates(self.map, p.a, p.eps2, x, xi1, xi2, mu, sc, dxi1, dxi2)?;
        mat_vec_scaled(xi1_f, xi2_f, -p.k, dx);
        let inv = 1.0 / self.tau_f;
        for (d, (a, b)) in dxi1_f.iter_mut().zip(xi1.iter().zip(xi1_f)) {
            *d = inv * (a - b);
        }
        for (d, (a, b)) in dxi2_f.iter_mut().zip(xi2.iter().zip(xi2_f)) {
            *d = inv * (a - b);
        }
        oscillator_field_into(mu, p.eps1, &self.rates, dmu);
        Ok(())
    }
}

/// Averaged closed loop with the true gradient and Hessian substituted.
pub fn average_field<M: Analytic + ?Sized>(
    x: &DVector<f64>,
    xi1: &DMatrix<f64>,
    xi2: &DVector<f64>,
    map: &M,
    params: &ValidatedParams,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let g = map.gradient(x.as_slice());
    let h = map.hessian(x.as_slice());
    (
        learning_field(xi1, xi2, params),
        (xi1 - xi1 * h * xi1) / params.eps2,
        (g - xi2) / params.eps2,
    )
}

/// One-period averages of `φ(x + aμ̃)·M(μ)` and `φ(x + aμ̃)·N(μ)` along the
/// unit-time-scale oscillator started at `phases`.
pub fn averaged_demod_oracle<M: Measure + ?Sized>(
    x: &DVector<f64>,
    map: &M,
    a: f64,
    theta: &[Rational],
    phases: &TorusState,
) -> (DVector<f64>, DMatrix<f64>) {
    averaged_demod_oracle_with(
        x,
        map,
        a,
        theta,
        phases,
        QUADRATURE_PANELS,
        Execution::Sequential,
    )
}

pub fn averaged_demod_oracle_with<M: Measure + ?Sized>(
    x: &DVector<f64>,
    map: &M,
    a: f64,
    theta: &[Rational],
    phases: &TorusState,
    panels: usize,
    exec: Execution,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let rates: Vec<f64> = theta.iter().map(ratio_to_f64).collect();
    let avg = periodic_average(
        |s| {
            let probe = probe_at(phases, &rates, s);
            let z: Vec<f64> = x.iter().zip(&probe).map(|(xi, p)| xi + a * p).collect();
            let y = map.measure(&z);
            let mut m = vec![0.0; n];
            let mut nm = vec![0.0; n * n];
            gradient_signal_into(&probe, a, &mut m);
            hessian_signal_into(&probe, a, &mut nm);
            m.iter().chain(&nm).map(|v| y * v).collect()
        },
        common_period(theta),
        panels,
        exec,
    );
    (
        DVector::from_column_slice(&avg[..n]),
        DMatrix::from_row_slice(n, n, &avg[n..]),
    )
}

/// Model-based fixed-time Newton flow
/// `ẋ = −k·∇²φ⁻¹·∇φ·(|∇φ|^{−α₁} + |∇φ|^{−α₂})`.
pub fn reduced_field<M: Analytic + ?Sized>(
    x: &DVector<f64>,
    map: &M,
    params: &ValidatedParams,
) -> Result<DVector<f64>, DynamicsError> {
    let g = map.gradient(x.as_slice());
    let chol = map
        .hessian(x.as_slice())
        .cholesky()
        .ok_or(DynamicsError::SingularHessian)?;
    let mut u = DVector::zeros(g.len());
    fixed_time_direction(
        g.as_slice(),
        params.alpha1(),
        params.alpha2(),
        u.as_mut_slice(),
    );
    Ok(chol.solve(&u) * (-params.k))
}

/// [`reduced_field`] as an integrable system on `x`.
pub struct ReducedSystem<'a, M: ?Sized> {
    pub map: &'a M,
    pub params: &'a ValidatedParams,
}

impl<M: Analytic + ?Sized> VectorField for ReducedSystem<'_, M> {
    fn layout(&self) -> Layout {
        Layout::Raw {
            dim: self.map.dim(),
        }
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), FieldFault> {
        let v = reduced_field(&DVector::from_column_slice(y), self.map, self.params)
            .map_err(|e| FieldFault(e.to_string()))?;
        dy.copy_from_slice(v.as_slice());
        Ok(())
    }
}

/// Boundary-layer error dynamics with `x` frozen:
/// `ξ̃̇₁ = −ξ̃₁·H(ξ̃₁ + H⁻¹)`, `ξ̃̇₂ = −ξ̃₂`.
pub fn boundary_layer_error_field(
    xt1: &DMatrix<f64>,
    xt2: &DVector<f64>,
    h_x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), DynamicsError> {
    let h_inv = h_x
        .clone()
        .cholesky()
        .ok_or(DynamicsError::SingularHessian)?
        .inverse();
    Ok((-(xt1 * h_x * (xt1 + h_inv)), -xt2))
}

/// Central-difference Jacobian of `f` at `at`.
pub fn numerical_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, at: &[f64], step: f64) -> DMatrix<f64> {
    let m = f(at).len();
    let mut jac = DMatrix::zeros(m, at.len());
    let mut p = at.to_vec();
    for j in 0..at.len() {
        p[j] = at[j] + step;
        let fp = f(&p);
        p[j] = at[j] - step;
        let fm = f(&p);
        p[j] = at[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac
}

/// `V(x) = ½|∇φ(x)|²`
pub fn lyapunov_value<M: Analytic + ?Sized>(x: &DVector<f64>, map: &M) -> f64 {
    0.5 * map.gradient(x.as_slice()).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ControllerParams;
    use crate::plant::{quadratic_map, quartic_map, reference_quadratic, CountingMap};
    use crate::sim::{integrate, SimConfig};

    fn unit_params(k: f64) -> ValidatedParams {
        let mut p = ControllerParams::figure1();
        p.k = k;
        p.validate().unwrap()
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn learning_field_examples() {
        let p = unit_params(1.0);
        assert_eq!(learning_field(&m1(1.0), &v1(0.0), &p)[0], 0.0);
        assert!((learning_field(&m1(1.0), &v1(1.0), &p)[0] + 2.0).abs() < 1e-15);
        let xi1 = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.7]);
        for s in [1e-1, 1e-3, 1e3, 1e-150, 1e60] {
            let xi2 = DVector::from_vec(vec![0.6 * s, -0.8 * s]);
            let f = learning_field(&xi1, &xi2, &p);
            assert!(f.iter().all(|v| v.is_finite()), "{s}");
            let bound = p.k * xi1.norm() * (s.powf(0.5) + s.powf(2.0));
            assert!(f.norm() <= bound * (1.0 + 1e-12), "{s}");
        }
    }

    #[test]
    fn learning_field_vanishes_continuously() {
        let p = unit_params(0.025);
        let xi1 = DMatrix::from_row_slice(2, 2, &[0.29, -0.14, -0.14, 0.57]);
        let mut prev = f64::INFINITY;
        for e in 1..=12 {
            let s = 10f64.powi(-e);
            let xi2 = DVector::from_vec(vec![s / 2f64.sqrt(), s / 2f64.sqrt()]);
            let f = learning_field(&xi1, &xi2, &p).norm();
            let bound = p.k * xi1.norm() * (s.powf(1.0 - p.alpha1()) + s.powf(1.0 - p.alpha2()));
            assert!(f <= bound * (1.0 + 1e-12));
            assert!(f < prev);
            prev = f;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(
            hessian_estimator_field(&m1(0.0), 3.0, &m1(5.0), 1.0)[(0, 0)],
            0.0
        );
        assert_eq!(
            hessian_estimator_field(&m1(1.0), 1.0, &m1(1.0), 1.0)[(0, 0)],
            0.0
        );
        assert_eq!(
            hessian_estimator_field(&m1(2.0), 1.0, &m1(1.0), 1.0)[(0, 0)],
            -2.0
        );

        let m = DVector::from_vec(vec![0.5, -1.0]);
        let xi2 = &m * 2.0;
        assert!(gradient_estimator_field(&xi2, 2.0, &m, 3.0).norm() < 1e-15);
        let g = gradient_estimator_field(&DVector::from_vec(vec![1.0, 0.0]), 0.0, &m, 2.0);
        assert_eq!(g.as_slice(), &[-0.5, 0.0]);
    }

    #[test]
    fn baseline_examples() {
        let map = reference_quadratic();
        let mut p = ControllerParams::figure1();
        p.theta.truncate(1);
        let p1 = p.validate().unwrap();
        let map1 = quadratic_map(m1(2.0), v1(-1.0), 0.0).unwrap();
        let s = BaselineState {
            x: v1(0.3),
            xi1: m1(0.7),
            xi2: v1(1.5),
            xi1_f: m1(0.5),
            xi2_f: v1(2.0),
            mu: TorusState::cosine(1),
        };
        let d = baseline_newton_field(&s, &map1, &p1, 1.0).unwrap();
        assert!((d[0] + 0.025).abs() < 1e-15);

        let p2 = ControllerParams::figure1().validate().unwrap();
        let mut s = BaselineState::initial(&[1.0, 2.0], DMatrix::identity(2, 2) * 0.3);
        s.xi2 = DVector::from_vec(vec![0.4, -0.2]);
        s.xi2_f = s.xi2.clone();
        let d = baseline_newton_field(&s, &map, &p2, 1.0).unwrap();
        let l = Layout::Baseline { n: 2 };
        assert!(d[l.xi1_filtered().unwrap()].iter().all(|v| *v == 0.0));
        assert!(d[l.xi2_filtered().unwrap()].iter().all(|v| *v == 0.0));

        s.xi2_f = DVector::zeros(2);
        let d = baseline_newton_field(&s, &map, &p2, 1.0).unwrap();
        assert!(d[0..2].iter().all(|v| *v == 0.0));
    }

    fn sample_state(seed: u64) -> ClosedLoopState {
        let f = |k: u64| ((seed * 31 + k) as f64 * 0.7311).sin();
        ClosedLoopState {
            x: DVector::from_vec(vec![3.0 * f(1), -2.0 * f(2)]),
            xi1: DMatrix::from_row_slice(
                2,
                2,
                &[0.3 + 0.1 * f(3), 0.05 * f(4), 0.02 * f(5), 0.5 + 0.1 * f(6)],
            ),
            xi2: DVector::from_vec(vec![f(7), 4.0 * f(8)]),
            mu: TorusState::from_angles(&[6.0 * f(9), 6.0 * f(10)]),
        }
    }

    #[test]
    fn flat_system_matches_reference_route() {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let sys = NfxtesSystem::new(&map, &p).unwrap();
        for seed in 0..20 {
            let s = sample_state(seed);
            let reference = nfxtes_field(&s, &map, &p).unwrap().to_flat();
            let mut fast = vec![0.0; reference.len()];
            sys.eval(&s.to_flat(), &mut fast).unwrap();
            for (a, b) in reference.iter().zip(&fast) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn flat_baseline_matches_reference_route() {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let sys = BaselineSystem::new(&map, &p, 1.0).unwrap();
        for seed in 0..10 {
            let c = sample_state(seed);
            let s = BaselineState {
                xi1_f: c.xi1.transpose() * 0.9,
                xi2_f: &c.xi2 * 1.1,
                x: c.x,
                xi1: c.xi1,
                xi2: c.xi2,
                mu: c.mu,
            };
            let reference = baseline_newton_field(&s, &map, &p, 1.0).unwrap();
            let mut fast = vec![0.0; reference.len()];
            sys.eval(&s.to_flat(), &mut fast).unwrap();
            for (a, b) in reference.iter().zip(&fast) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nfxtes_field_properties() {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let z = map.minimizer().unwrap();
        let s = ClosedLoopState {
            x: z,
            xi1: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            xi2: DVector::zeros(2),
            mu: TorusState::from_angles(&[0.4, 2.0]),
        };
        let r = nfxtes_field(&s, &map, &p).unwrap();
        assert!(r.x.iter().all(|v| *v == 0.0));
        for (b, d) in s.mu.as_slice().chunks(2).zip(r.mu.chunks(2)) {
            assert!((b[0] * d[0] + b[1] * d[1]).abs() < 1e-12);
        }

        let counter = CountingMap::new(&map);
        let sys = NfxtesSystem::new(&counter, &p).unwrap();
        let mut dy = vec![0.0; 12];
        for k in 1..=5 {
            sys.eval(&sample_state(k).to_flat(), &mut dy).unwrap();
            assert_eq!(counter.count(), k);
        }
        nfxtes_field(&sample_state(9), &counter, &p).unwrap();
        assert_eq!(counter.count(), 6);
    }

    #[test]
    fn non_finite_measurement_is_a_fault() {
        let bad = crate::plant::FnMap::new(2, |_: &[f64]| f64::NAN);
        let p = ControllerParams::figure1().validate().unwrap();
        assert!(matches!(
            nfxtes_field(&sample_state(1), &bad, &p),
            Err(DynamicsError::NonFiniteMeasurement { .. })
        ));
        let sys = NfxtesSystem::new(&bad, &p).unwrap();
        let mut dy = vec![0.0; 12];
        assert!(sys.eval(&sample_state(1).to_flat(), &mut dy).is_err());
    }

    #[test]
    fn average_field_examples() {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let z = map.minimizer().unwrap();
        let hinv = map.hessian(z.as_slice()).try_inverse().unwrap();
        let (dx, dxi1, dxi2) = average_field(&z, &hinv, &DVector::zeros(2), &map, &p);
        assert!(dx.norm() == 0.0 && dxi1.norm() < 1e-14 && dxi2.norm() < 1e-14);

        let x = DVector::from_vec(vec![1.5, -0.5]);
        let xi2 = DVector::from_vec(vec![0.2, 0.1]);
        let (_, _, dxi2) = average_field(&x, &hinv, &xi2, &map, &p);
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let expected = (&h * &x + DVector::from_vec(vec![-4.0, -6.0]) - &xi2) / p.eps2;
        assert!((dxi2 - expected).norm() < 1e-14);

        let q = quartic_map(h, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        for k in 0..10 {
            let x = DVector::from_vec(vec![(k as f64).sin() * 3.0, (k as f64).cos() * 2.0]);
            let hinv = q.hessian(x.as_slice()).try_inverse().unwrap();
            let (_, dxi1, _) = average_field(&x, &hinv, &DVector::zeros(2), &q, &p);
            assert!(dxi1.norm() < 1e-12);
        }
    }

    #[test]
    fn reduced_field_examples() {
        let p = unit_params(1.0);
        let map1 = quadratic_map(m1(1.0), v1(0.0), 0.0).unwrap();
        assert!((reduced_field(&v1(1.0), &map1, &p).unwrap()[0] + 2.0).abs() < 1e-15);

        let map = reference_quadratic();
        let z = map.minimizer().unwrap();
        assert!(reduced_field(&z, &map, &p).unwrap().norm() < 1e-6);

        for k in 0..10 {
            let x = DVector::from_vec(vec![
                (k as f64 * 1.3).sin() * 8.0,
                (k as f64 * 0.7).cos() * 8.0,
            ]);
            let f = reduced_field(&x, &map, &p).unwrap();
            let dir = &z - &x;
            let cos = f.dot(&dir) / (f.norm() * dir.norm());
            assert!((cos - 1.0).abs() < 1e-12, "{cos}");
        }
    }

    #[test]
    fn boundary_layer_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let (a, b) =
            boundary_layer_error_field(&DMatrix::zeros(2, 2), &DVector::zeros(2), &h).unwrap();
        assert!(a.norm() == 0.0 && b.norm() == 0.0);
        assert_eq!(
            boundary_layer_error_field(
                &DMatrix::zeros(2, 2),
                &DVector::zeros(2),
                &DMatrix::zeros(2, 2)
            ),
            Err(DynamicsError::SingularHessian)
        );
        let jac = numerical_jacobian(
            |v| {
                let xt1 = DMatrix::from_row_slice(2, 2, v);
                row_major(
                    &boundary_layer_error_field(&xt1, &DVector::zeros(2), &h)
                        .unwrap()
                        .0,
                )
                .collect()
            },
            &[0.0; 4],
            1e-4,
        );
        assert!((jac + DMatrix::identity(4, 4)).amax() < 1e-5);
    }

    #[test]
    fn lyapunov_examples() {
        let map = reference_quadratic();
        assert!(lyapunov_value(&map.minimizer().unwrap(), &map) < 1e-25);
        assert!((lyapunov_value(&DVector::zeros(2), &map) - 26.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_decreases_along_reduced_flow() {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let sys = ReducedSystem {
            map: &map,
            params: &p,
        };
        let traj = integrate(
            &sys,
            &SimConfig::new(0.01, 60.0, vec![-7.0, 9.0]).with_stride(10),
        )
        .unwrap();
        let v: Vec<f64> = traj
            .states()
            .map(|s| lyapunov_value(&DVector::from_column_slice(s), &map))
            .collect();
        for w in v.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn state_flat_round_trip() {
        let s = sample_state(3);
        let back = ClosedLoopState::from_flat(2, &s.to_flat()).unwrap();
        assert_eq!(back, s);
        assert!(ClosedLoopState::from_flat(2, &[0.0; 5]).is_err());
    }
}
