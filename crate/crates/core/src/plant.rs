//! Static cost maps.
//!
//! The controller is generic over [`Measure`] only, so it can never reach a
//! gradient or Hessian. Oracles and tests use [`Analytic`], which the built-in
//! maps also implement.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("matrix must be square {dim}x{dim}, got {rows}x{cols}")]
    Shape {
        dim: usize,
        rows: usize,
        cols: usize,
    },
    #[error("Hessian is not symmetric (asymmetry {0})")]
    NotSymmetric(f64),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("vector length {got} does not match dimension {dim}")]
    Length { dim: usize, got: usize },
}

/// Measurement access to `φ: ℝⁿ → ℝ`.
pub trait Measure: Sync {
    fn dim(&self) -> usize;
    fn measure(&self, z: &[f64]) -> f64;
}

/// Analytic derivatives, reserved for oracles.
pub trait Analytic: Measure {
    fn gradient(&self, z: &[f64]) -> DVector<f64>;
    fn hessian(&self, z: &[f64]) -> DMatrix<f64>;
    fn minimizer(&self) -> Option<DVector<f64>>;
}

fn check_spd(h: &DMatrix<f64>) -> Result<(), MapError> {
    if !h.is_square() {
        return Err(MapError::Shape {
            dim: h.nrows(),
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 * h.amax().max(1.0) {
        return Err(MapError::NotSymmetric(asym));
    }
    if h.clone().cholesky().is_none() {
        return Err(MapError::NotPositiveDefinite);
    }
    Ok(())
}

/// `φ(z) = ½zᵀHz + bᵀz + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap {
    h: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    minimizer: DVector<f64>,
}

impl QuadraticMap {
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
}

/// `φ(z) = ¼|z−z*|⁴ + ½(z−z*)ᵀH(z−z*)`: strongly convex with a state-dependent Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticMap {
    h: DMatrix<f64>,
    z_star: DVector<f64>,
}

impl QuarticMap {
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
}

pub fn quadratic_map(h: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<CostMap, MapError> {
    check_spd(&h)?;
    if b.len() != h.nrows() {
        return Err(MapError::Length {
            dim: h.nrows(),
            got: b.len(),
        });
    }
    let minimizer = -h.clone().cholesky().expect("checked SPD").solve(&b);
    Ok(CostMap::Quadratic(QuadraticMap { h, b, c, minimizer }))
}

pub fn quartic_map(h: DMatrix<f64>, z_star: DVector<f64>) -> Result<CostMap, MapError> {
    check_spd(&h)?;
    if z_star.len() != h.nrows() {
        return Err(MapError::Length {
            dim: h.nrows(),
            got: z_star.len(),
        });
    }
    Ok(CostMap::Quartic(QuarticMap { h, z_star }))
}

/// The experiment map: `H = [[4,1],[1,2]]`, `b = (−4,−6)`, `c = 11`.
pub fn reference_quadratic() -> CostMap {
    quadratic_map(
        DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]),
        DVector::from_vec(vec![-4.0, -6.0]),
        11.0,
    )
    .expect("constant map is SPD")
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostMap {
    Quadratic(QuadraticMap),
    Quartic(QuarticMap),
}

#[inline]
fn quad_form(h: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += h[(i, j)] * v[j];
        }
        s += v[i] * row;
    }
    s
}

impl Measure for CostMap {
    fn dim(&self) -> usize {
        match self {
            CostMap::Quadratic(m) => m.b.len(),
            CostMap::Quartic(m) => m.z_star.len(),
        }
    }

    fn measure(&self, z: &[f64]) -> f64 {
        match self {
            CostMap::Quadratic(m) => {
                let lin: f64 = m.b.iter().zip(z).map(|(b, z)| b * z).sum();
                0.5 * quad_form(&m.h, z) + lin + m.c
            }
            CostMap::Quartic(m) => {
                let e = |i: usize| z[i] - m.z_star[i];
                let n = z.len();
                let (mut r2, mut q) = (0.0, 0.0);
                for i in 0..n {
                    r2 += e(i) * e(i);
                    let row: f64 = (0..n).map(|j| m.h[(i, j)] * e(j)).sum();
                    q += e(i) * row;
                }
                0.25 * r2 * r2 + 0.5 * q
            }
        }
    }
}

impl Analytic for CostMap {
    fn gradient(&self, z: &[f64]) -> DVector<f64> {
        let z = DVector::from_column_slice(z);
        match self {
            CostMap::Quadratic(m) => &m.h * z + &m.b,
            CostMap::Quartic(m) => {
                let e = z - &m.z_star;
                &e * e.norm_squared() + &m.h * &e
            }
        }
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        match self {
            CostMap::Quadratic(m) => m.h.clone(),
            CostMap::Quartic(m) => {
                let e = DVector::from_column_slice(z) - &m.z_star;
                let n = e.len();
                DMatrix::identity(n, n) * e.norm_squared() + &e * e.transpose() * 2.0 + &m.h
            }
        }
    }

    fn minimizer(&self) -> Option<DVector<f64>> {
        Some(match self {
            CostMap::Quadratic(m) => m.minimizer.clone(),
            CostMap::Quartic(m) => m.z_star.clone(),
        })
    }
}

/// A black-box map: measurements only.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Measure for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn measure(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

/// Wraps a map and counts measurements.
pub struct CountingMap<'a, M> {
    inner: &'a M,
    count: AtomicU64,
}

impl<'a, M: Measure> CountingMap<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: Measure> Measure for CountingMap<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn measure(&self, z: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.measure(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_quadratic_facts() {
        let m = reference_quadratic();
        let z = m.minimizer().unwrap();
        assert!((z[0] - 2.0 / 7.0).abs() < 1e-14);
        assert!((z[1] - 20.0 / 7.0).abs() < 1e-14);
        let hinv = m.hessian(z.as_slice()).try_inverse().unwrap();
        let expected = [[0.2857, -0.1429], [-0.1429, 0.5714]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((hinv[(i, j)] - expected[i][j]).abs() < 1e-4);
            }
        }
        assert!((m.measure(z.as_slice()) - 13.0 / 7.0).abs() < 1e-13);
        assert!(m.gradient(z.as_slice()).norm() < 1e-13);
    }

    #[test]
    fn quartic_hand_values() {
        let m = quartic_map(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        assert!((m.measure(&[1.0]) - 1.25).abs() < 1e-15);
        assert!((m.gradient(&[1.0])[0] - 3.0).abs() < 1e-15);

        let h = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let zs = DVector::from_vec(vec![1.0, -2.0]);
        let m = quartic_map(h.clone(), zs.clone()).unwrap();
        assert!(m.gradient(zs.as_slice()).norm() == 0.0);
        assert_eq!(m.hessian(zs.as_slice()), h);
    }

    #[test]
    fn rejects_bad_hessians() {
        let b = DVector::zeros(2);
        assert!(matches!(
            quadratic_map(
                DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
                b.clone(),
                0.0
            ),
            Err(MapError::NotSymmetric(_))
        ));
        assert_eq!(
            quadratic_map(
                DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
                b.clone(),
                0.0
            ),
            Err(MapError::NotPositiveDefinite)
        );
        assert!(matches!(
            quartic_map(DMatrix::zeros(2, 3), b.clone()),
            Err(MapError::Shape { .. })
        ));
        assert!(matches!(
            quadratic_map(DMatrix::identity(2, 2), DVector::zeros(3), 0.0),
            Err(MapError::Length { .. })
        ));
    }

    #[test]
    fn counting_map_counts() {
        let m = reference_quadratic();
        let c = CountingMap::new(&m);
        c.measure(&[0.0, 0.0]);
        c.measure(&[1.0, 0.0]);
        assert_eq!(c.count(), 2);
        let f = FnMap::new(1, |z: &[f64]| z[0] * z[0]);
        assert_eq!(f.measure(&[3.0]), 9.0);
    }
}
