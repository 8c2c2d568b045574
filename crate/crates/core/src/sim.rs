//! Fixed-step RK4 integration, trajectory recording and convergence timing.

use std::ops::Range;

use thiserror::Error;

/// How a flat state vector is partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Unstructured state of the given length.
    Raw { dim: usize },
    /// Oscillator alone: `μ` (2n).
    Oscillator { n: usize },
    /// `[x (n), ξ₁ (n², row-major), ξ₂ (n), μ (2n)]`
    ClosedLoop { n: usize },
    /// `[x, ξ₁, ξ₂, ξ₁ᶠ, ξ₂ᶠ, μ]`
    Baseline { n: usize },
}

impl Layout {
    pub fn dim(&self) -> usize {
        match *self {
            Layout::Raw { dim } => dim,
            Layout::Oscillator { n } => 2 * n,
            Layout::ClosedLoop { n } => 4 * n + n * n,
            Layout::Baseline { n } => 5 * n + 2 * n * n,
        }
    }

    /// Input dimension `n`, when the layout has one.
    pub fn n(&self) -> Option<usize> {
        match *self {
            Layout::Raw { .. } => None,
            Layout::Oscillator { n } | Layout::ClosedLoop { n } | Layout::Baseline { n } => Some(n),
        }
    }

    pub fn x(&self) -> Option<Range<usize>> {
        match *self {
            Layout::ClosedLoop { n } | Layout::Baseline { n } => Some(0..n),
            _ => None,
        }
    }

    pub fn xi1(&self) -> Option<Range<usize>> {
        match *self {
            Layout::ClosedLoop { n } | Layout::Baseline { n } => Some(n..n + n * n),
            _ => None,
        }
    }

    pub fn xi2(&self) -> Option<Range<usize>> {
        match *self {
            Layout::ClosedLoop { n } | Layout::Baseline { n } => Some(n + n * n..2 * n + n * n),
            _ => None,
        }
    }

    pub fn xi1_filtered(&self) -> Option<Range<usize>> {
        match *self {
            Layout::Baseline { n } => Some(2 * n + n * n..2 * n + 2 * n * n),
            _ => None,
        }
    }

    pub fn xi2_filtered(&self) -> Option<Range<usize>> {
        match *self {
            Layout::Baseline { n } => Some(2 * n + 2 * n * n..3 * n + 2 * n * n),
            _ => None,
        }
    }

    /// Slots holding the torus blocks.
    pub fn torus(&self) -> Option<Range<usize>> {
        let d = self.dim();
        match *self {
            Layout::Raw { .. } => None,
            Layout::Oscillator { n } | Layout::ClosedLoop { n } | Layout::Baseline { n } => {
                Some(d - 2 * n..d)
            }
        }
    }
}

/// A fault raised while evaluating a vector field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct FieldFault(pub String);

/// Autonomous vector field on a flat state.
pub trait VectorField {
    fn layout(&self) -> Layout;
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), FieldFault>;
}

impl<F: Fn(&[f64], &mut [f64]) + ?Sized> VectorField for (Layout, &F) {
    fn layout(&self) -> Layout {
        self.0
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), FieldFault> {
        (self.1)(y, dy);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial state has length {got}, layout expects {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("non-finite state at t = {time}")]
    NonFiniteState { time: f64, partial: Box<Trajectory> },
    #[error("field fault at t = {time}: {fault}")]
    Field {
        time: f64,
        fault: FieldFault,
        partial: Box<Trajectory>,
    },
}

impl SimError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SimError::NonFiniteState { partial, .. } | SimError::Field { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub step_h: f64,
    pub horizon: f64,
    pub record_stride: usize,
    pub renormalize_torus: bool,
    pub initial_state: Vec<f64>,
}

impl SimConfig {
    pub fn new(step_h: f64, horizon: f64, initial_state: Vec<f64>) -> Self {
        Self {
            step_h,
            horizon,
            record_stride: 1,
            renormalize_torus: true,
            initial_state,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_renormalize(mut self, on: bool) -> Self {
        self.renormalize_torus = on;
        self
    }

    fn validate(&self) -> Result<usize, SimError> {
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return Err(SimError::Config(format!(
                "step_h must be positive, got {}",
                self.step_h
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!(
                "horizon must be non-negative, got {}",
                self.horizon
            )));
        }
        if self.horizon > 0.0 && self.step_h > self.horizon {
            return Err(SimError::Config("step_h exceeds horizon".into()));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        Ok((self.horizon / self.step_h).round() as usize)
    }
}

/// Uniformly sampled solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: Layout,
    pub times: Vec<f64>,
    /// Row-major samples, `layout.dim()` entries per recorded time.
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            times: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, state: &[f64]) {
        debug_assert_eq!(state.len(), self.layout.dim());
        self.times.push(t);
        self.data.extend_from_slice(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.layout.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.layout.dim())
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|i| self.state(i))
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.state(i)[self.layout.x().expect("layout has no x block")]
    }

    /// Series of one state slot across the trajectory.
    pub fn component(&self, slot: usize) -> Vec<f64> {
        self.states().map(|s| s[slot]).collect()
    }

    /// `‖x(tᵢ) − z*‖` for every sample.
    pub fn distances(&self, z_star: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.x(i)
                    .iter()
                    .zip(z_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Reusable RK4 stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        let z = vec![0.0; dim];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    /// One classical RK4 step in place. When `renormalize` is set and the
    /// layout carries a torus, each oscillator block is projected back to unit
    /// norm afterwards.
    pub fn step<F: VectorField + ?Sized>(
        &mut self,
        field: &F,
        y: &mut [f64],
        h: f64,
        renormalize: bool,
    ) -> Result<(), FieldFault> {
        let Self {
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = self;
        field.eval(y, k1)?;
        axpy_into(tmp, y, 0.5 * h, k1);
        field.eval(tmp, k2)?;
        axpy_into(tmp, y, 0.5 * h, k2);
        field.eval(tmp, k3)?;
        axpy_into(tmp, y, h, k3);
        field.eval(tmp, k4)?;
        let h6 = h / 6.0;
        for i in 0..y.len() {
            y[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if renormalize {
            if let Some(r) = field.layout().torus() {
                renormalize_blocks(&mut y[r]);
            }
        }
        Ok(())
    }
}

#[inline]
fn axpy_into(out: &mut [f64], y: &[f64], h: f64, k: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

pub fn renormalize_blocks(mu: &mut [f64]) {
    for b in mu.chunks_exact_mut(2) {
        let r = b[0].hypot(b[1]);
        b[0] /= r;
        b[1] /= r;
    }
}

/// Single RK4 step with fresh buffers.
pub fn rk4_step<F: VectorField + ?Sized>(
    field: &F,
    state: &[f64],
    h: f64,
    renormalize: bool,
) -> Result<Vec<f64>, FieldFault> {
    let mut y = state.to_vec();
    Rk4::new(y.len()).step(field, &mut y, h, renormalize)?;
    Ok(y)
}

/// March RK4 across the horizon, recording every `record_stride` steps.
///
/// The initial state is always recorded; the final state is recorded only
/// when the step count is a multiple of the stride.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    let steps = config.validate()?;
    let layout = field.layout();
    if config.initial_state.len() != layout.dim() {
        return Err(SimError::StateLength {
            expected: layout.dim(),
            got: config.initial_state.len(),
        });
    }
    let mut traj = Trajectory::new(layout);
    traj.times.reserve(steps / config.record_stride + 1);
    let mut y = config.initial_state.clone();
    traj.push(0.0, &y);
    let mut rk = Rk4::new(y.len());
    let h = config.step_h;
    for step in 1..=steps {
        if let Err(fault) = rk.step(field, &mut y, h, config.renormalize_torus) {
            let time = (step - 1) as f64 * h;
            return Err(SimError::Field {
                time,
                fault,
                partial: Box::new(traj),
            });
        }
        let t = step as f64 * h;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteState {
                time: t,
                partial: Box::new(traj),
            });
        }
        if step % config.record_stride == 0 {
            traj.push(t, &y);
        }
    }
    Ok(traj)
}

/// Earliest recorded time after which `‖x − z*‖ ≤ ν` holds for every later
/// recorded sample. `None` if the final sample is outside the ball.
pub fn convergence_time(traj: &Trajectory, z_star: &[f64], nu: f64) -> Option<f64> {
    let d = traj.distances(z_star);
    let mut first_inside = None;
    for i in (0..d.len()).rev() {
        if d[i] <= nu {
            first_inside = Some(i);
        } else {
            break;
        }
    }
    first_inside.map(|i| traj.times[i])
}

/// First recorded time with `‖x − z*‖ ≤ ν`, regardless of later excursions.
pub fn first_entry_time(traj: &Trajectory, z_star: &[f64], nu: f64) -> Option<f64> {
    traj.distances(z_star)
        .iter()
        .position(|&d| d <= nu)
        .map(|i| traj.times[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn zero_field_leaves_state() {
        let zero = |_: &[f64], dy: &mut [f64]| dy.iter_mut().for_each(|v| *v = 0.0);
        let f = (Layout::Raw { dim: 3 }, &zero);
        let y = rk4_step(&f, &[1.0, -2.0, 3.5], 0.1, true).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn rk4_exponential_step() {
        let f = (Layout::Raw { dim: 1 }, &decay);
        let y = rk4_step(&f, &[1.0], 0.1, false).unwrap();
        // 1 − h + h²/2 − h³/6 + h⁴/24
        let h: f64 = 0.1;
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((y[0] - taylor).abs() < 1e-15);
        assert!((y[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn torus_renormalized_after_step() {
        let spin = |y: &[f64], dy: &mut [f64]| {
            dy[0] = 50.0 * y[1];
            dy[1] = -50.0 * y[0];
        };
        let f = (Layout::Oscillator { n: 1 }, &spin);
        let y = rk4_step(&f, &[1.0, 0.0], 0.05, true).unwrap();
        assert!((y[0].hypot(y[1]) - 1.0).abs() < 1e-15);
        let y = rk4_step(&f, &[1.0, 0.0], 0.05, false).unwrap();
        assert!((y[0].hypot(y[1]) - 1.0).abs() > 1e-6);
    }

    #[test]
    fn zero_horizon_records_initial_state() {
        let f = (Layout::Raw { dim: 1 }, &decay);
        let traj = integrate(&f, &SimConfig::new(0.1, 0.0, vec![2.0])).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.state(0), &[2.0]);
    }

    #[test]
    fn stride_spacing() {
        let f = (Layout::Raw { dim: 1 }, &decay);
        let traj = integrate(&f, &SimConfig::new(0.01, 1.0, vec![1.0]).with_stride(10)).unwrap();
        assert_eq!(traj.len(), 11);
        for w in traj.times.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
        assert!((traj.state(10)[0] - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bad_configs() {
        let f = (Layout::Raw { dim: 1 }, &decay);
        assert!(matches!(
            integrate(&f, &SimConfig::new(0.0, 1.0, vec![1.0])),
            Err(SimError::Config(_))
        ));
        assert!(matches!(
            integrate(&f, &SimConfig::new(0.1, 1.0, vec![1.0]).with_stride(0)),
            Err(SimError::Config(_))
        ));
        assert!(matches!(
            integrate(&f, &SimConfig::new(0.1, 1.0, vec![1.0, 2.0])),
            Err(SimError::StateLength { .. })
        ));
    }

    #[test]
    fn blow_up_reports_partial() {
        let grow = |y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let f = (Layout::Raw { dim: 1 }, &grow);
        match integrate(&f, &SimConfig::new(0.01, 5.0, vec![1.0])) {
            Err(e @ SimError::NonFiniteState { time, .. }) => {
                assert!(time > 0.9 && time < 1.5, "{time}");
                assert!(e.partial().unwrap().len() > 10);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    fn scripted(dists: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(Layout::ClosedLoop { n: 1 });
        for (i, d) in dists.iter().enumerate() {
            t.push(i as f64 * 10.0, &[*d, 0.0, 0.0, 1.0, 0.0]);
        }
        t
    }

    #[test]
    fn convergence_time_uses_permanence() {
        let t = scripted(&[0.0, 0.0, 0.0]);
        assert_eq!(convergence_time(&t, &[0.0], 0.25), Some(0.0));
        let t = scripted(&[5.0, 0.1, 1.0, 0.7, 0.3, 0.2, 0.1, 0.0]);
        assert_eq!(convergence_time(&t, &[0.0], 0.25), Some(50.0));
        assert_eq!(first_entry_time(&t, &[0.0], 0.25), Some(10.0));
        let t = scripted(&[0.0, 1.0]);
        assert_eq!(convergence_time(&t, &[0.0], 0.25), None);
    }

    #[test]
    fn layouts_partition_state() {
        let l = Layout::ClosedLoop { n: 2 };
        assert_eq!(l.dim(), 12);
        assert_eq!(l.xi1(), Some(2..6));
        assert_eq!(l.xi2(), Some(6..8));
        assert_eq!(l.torus(), Some(8..12));
        let b = Layout::Baseline { n: 2 };
        assert_eq!(b.dim(), 18);
        assert_eq!(b.xi1_filtered(), Some(8..12));
        assert_eq!(b.xi2_filtered(), Some(12..14));
        assert_eq!(b.torus(), Some(14..18));
    }
}
