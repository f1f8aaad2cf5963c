//! Uniform grid, sampled fields, finite differences, quadrature and the
//! simulation state.

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};

/// Uniform grid on `[x_left, x_right]` with `n` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_left: f64,
    x_right: f64,
    n: usize,
}

/// Smallest admissible node count.
pub const MIN_NODES: usize = 64;

impl Grid {
    pub fn new(x_left: f64, x_right: f64, n: usize) -> Result<Self> {
        if !x_left.is_finite() || !x_right.is_finite() {
            return Err(Error::Grid("endpoints must be finite".into()));
        }
        if x_right <= x_left {
            return Err(Error::Grid(format!(
                "x_right = {x_right} must exceed x_left = {x_left}"
            )));
        }
        if n < MIN_NODES {
            return Err(Error::Grid(format!("n = {n} is below {MIN_NODES}")));
        }
        Ok(Grid { x_left, x_right, n })
    }

    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        (self.x_right - self.x_left) / (self.n - 1) as f64
    }

    /// Coordinate of node `k`, computed directly from `k`.
    pub fn x(&self, k: usize) -> f64 {
        self.x_left + k as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.x(k)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.x_left) / self.dx()).round();
        r.clamp(0.0, (self.n - 1) as f64) as usize
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_left && x <= self.x_right
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: *self,
            values: (0..self.n).map(|k| f(self.x(k))).collect(),
            slopes: None,
        }
    }

    /// Trapezoid weight of node `k`, in units of `dx`.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n {
            0.5
        } else {
            1.0
        }
    }
}

/// Convenience constructor matching [`Grid::new`].
pub fn make_grid(x_left: f64, x_right: f64, n: usize) -> Result<Grid> {
    Grid::new(x_left, x_right, n)
}

/// One-sided limits of a piecewise smooth quantity at each node.
///
/// Away from kinks `left == right`.
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Traces {
    pub fn continuous(values: Vec<f64>) -> Self {
        Traces {
            left: values.clone(),
            right: values,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Average of the two limits.
    pub fn mean(&self) -> Vec<f64> {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect()
    }
}

/// Values of a real field at the nodes of a grid.
///
/// A field may carry exact one-sided slopes (for instance when it is sampled
/// from a closed form or from a momentum cloud). Otherwise slopes come from
/// [`derivative`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    slopes: Option<Traces>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Field(format!(
                "{} values for {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Field(format!("non-finite value at node {k}")));
        }
        Ok(Field {
            grid,
            values,
            slopes: None,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.n()],
            slopes: None,
        }
    }

    /// Attaches exact one-sided slopes.
    pub fn with_slopes(mut self, slopes: Traces) -> Result<Self> {
        if slopes.left.len() != self.grid.n() || slopes.right.len() != self.grid.n() {
            return Err(Error::Field("slope traces have the wrong length".into()));
        }
        self.slopes = Some(slopes);
        Ok(self)
    }

    /// Drops attached slopes so that finite differences are used.
    pub fn without_slopes(mut self) -> Self {
        self.slopes = None;
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn has_exact_slopes(&self) -> bool {
        self.slopes.is_some()
    }

    /// One-sided slopes: the attached ones, or central differences.
    pub fn slopes(&self) -> Traces {
        match &self.slopes {
            Some(s) => s.clone(),
            None => Traces::continuous(derivative(self).values),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Second-order central differences, with second-order one-sided stencils at
/// the two boundary nodes.
pub fn derivative(f: &Field) -> Field {
    let n = f.grid.n();
    let h = f.grid.dx();
    let y = &f.values;
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        d[k] = (y[k + 1] - y[k - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    Field {
        grid: f.grid,
        values: d,
        slopes: None,
    }
}

/// Trapezoid rule over the grid.
pub fn integrate(f: &Field) -> f64 {
    trapezoid(f.grid, &f.values)
}

pub(crate) fn trapezoid(grid: Grid, y: &[f64]) -> f64 {
    let n = y.len();
    let inner: f64 = y[1..n - 1].iter().sum();
    grid.dx() * (inner + 0.5 * (y[0] + y[n - 1]))
}

/// Trapezoid rule for an integrand with one-sided limits at the nodes: cell
/// `[x_k, x_{k+1}]` uses the right limit at `x_k` and the left limit at
/// `x_{k+1}`.
pub fn integrate_traced(grid: Grid, left: &[f64], right: &[f64]) -> f64 {
    let n = left.len();
    let mut s = 0.0;
    for k in 0..n - 1 {
        s += right[k] + left[k + 1];
    }
    0.5 * grid.dx() * s
}

/// `∫ (f g + f_x g_x)`, with slopes from [`Field::slopes`].
pub fn h1_inner(f: &Field, g: &Field) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let fs = f.slopes();
    let gs = g.slopes();
    let n = f.grid.n();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for k in 0..n {
        let p = f.values[k] * g.values[k];
        left[k] = p + fs.left[k] * gs.left[k];
        right[k] = p + fs.right[k] * gs.right[k];
    }
    Ok(integrate_traced(f.grid, &left, &right))
}

/// The pair `(u, v)` at time `t`.
///
/// When the state came from the Lagrangian solver or from a generator it also
/// carries its momentum cloud, which is the exact representation; the fields
/// are then samples of it.
#[derive(Clone, Debug)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    pub cloud: Option<Cloud>,
}

impl State {
    pub fn new(u: Field, v: Field, t: f64) -> Result<Self> {
        if u.grid != v.grid {
            return Err(Error::GridMismatch);
        }
        if !(t >= 0.0) {
            return Err(Error::Field(format!("time {t} must be nonnegative")));
        }
        Ok(State {
            u,
            v,
            t,
            cloud: None,
        })
    }

    pub fn zero(grid: Grid) -> Self {
        State {
            u: Field::zeros(grid),
            v: Field::zeros(grid),
            t: 0.0,
            cloud: None,
        }
    }

    /// Samples a cloud on the grid; the state keeps the cloud.
    pub fn from_cloud(grid: Grid, cloud: Cloud, t: f64) -> Self {
        let (u, v) = cloud.sample(grid);
        State {
            u,
            v,
            t,
            cloud: Some(cloud),
        }
    }

    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    /// The same state with the cloud dropped (grid-only representation).
    pub fn grid_only(&self) -> State {
        State {
            u: self.u.clone().without_slopes(),
            v: self.v.clone().without_slopes(),
            t: self.t,
            cloud: None,
        }
    }
}

/// Node maximizing `u·v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crest {
    pub index: usize,
    pub xi: f64,
    pub m: f64,
}

/// Grid node maximizing `u·v`; ties go to the smallest index.
pub fn argmax_product(s: &State) -> Crest {
    let u = s.u.values();
    let v = s.v.values();
    let mut best = 0;
    let mut m = u[0] * v[0];
    for k in 1..u.len() {
        let p = u[k] * v[k];
        if p > m {
            m = p;
            best = k;
        }
    }
    Crest {
        index: best,
        xi: s.grid().x(best),
        m,
    }
}

/// Crest of `u·v` on the line: the best particle for cloud-backed states
/// (exact, possibly off-node), else the best node. `index` is the nearest
/// node.
pub fn crest(s: &State) -> Crest {
    let node = argmax_product(s);
    match s.cloud.as_ref().and_then(|c| c.crest()) {
        Some((x, u, v)) if u * v >= node.m && s.grid().contains(x) => Crest {
            index: s.grid().nearest(x),
            xi: x,
            m: u * v,
        },
        _ => node,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing() {
        let g = make_grid(-40.0, 40.0, 4097).unwrap();
        assert_eq!(g.dx(), 0.01953125);
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        assert_eq!(g.n(), 64);
        assert!((g.dx() - 2.0 / 63.0).abs() < 1e-15);
        assert!(make_grid(0.0, -1.0, 128).is_err());
        assert!(make_grid(0.0, 1.0, 63).is_err());
        assert!(make_grid(f64::NAN, 1.0, 128).is_err());
    }

    #[test]
    fn nodes_are_computed_from_index() {
        let g = make_grid(-40.0, 40.0, 4097).unwrap();
        assert_eq!(g.x(4096), 40.0);
        assert_eq!(g.x(2048), 0.0);
    }

    #[test]
    fn derivative_of_affine_field_is_exact() {
        let g = make_grid(-3.0, 5.0, 101).unwrap();
        let d = derivative(&g.sample(|x| 2.5 * x - 1.0));
        for v in d.values() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let z = derivative(&Field::zeros(g));
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn derivative_of_sine_is_second_order() {
        let pi = std::f64::consts::PI;
        let mut errs = vec![];
        for n in [1025, 2049] {
            let g = make_grid(-pi, pi, n).unwrap();
            let d = derivative(&g.sample(f64::sin));
            let e = (0..n)
                .map(|k| (d.values()[k] - g.x(k).cos()).abs())
                .fold(0.0, f64::max);
            assert!(e <= 0.5 * g.dx() * g.dx());
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5);
    }

    #[test]
    fn trapezoid_examples() {
        let g = make_grid(-40.0, 40.0, 4097).unwrap();
        assert_eq!(integrate(&g.sample(|_| 1.0)), 80.0);
        assert!(integrate(&g.sample(|x| x)).abs() < 1e-12);
        let e = integrate(&g.sample(|x| (-x.abs()).exp()));
        assert!((e - (2.0 - 2.0 * (-40.0_f64).exp())).abs() < 1e-4);
    }

    #[test]
    fn argmax_ties_and_zero() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let c = argmax_product(&State::zero(g));
        assert_eq!(c.index, 0);
        assert_eq!(c.m, 0.0);
        assert_eq!(c.xi, -1.0);
        let u = g.sample(|_| 1.0);
        let s = State::new(u.clone(), u, 0.0).unwrap();
        assert_eq!(argmax_product(&s).index, 0);
    }

    #[test]
    fn h1_inner_rejects_mismatch() {
        let g1 = make_grid(-1.0, 1.0, 64).unwrap();
        let g2 = make_grid(-1.0, 1.0, 65).unwrap();
        assert!(h1_inner(&Field::zeros(g1), &Field::zeros(g2)).is_err());
    }
}
