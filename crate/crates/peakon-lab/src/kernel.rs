//! Convolutions with `P(x) = e^{-|x|}/2` and its derivative, and the discrete
//! Helmholtz pair `m = u - u_xx`, `u = P * m`.
//!
//! Both convolutions come from one left and one right sweep of the shifted
//! recurrence `L_k = e^{-dx} L_{k-1} + dx/2 (f_k + e^{-dx} f_{k-1})`, so every
//! intermediate stays of the size of `max |f|` and the cost is O(N).

use crate::grid::{Field, Grid};

/// Reusable sweep buffers for one grid. Not to be shared between concurrent
/// convolutions.
#[derive(Clone, Debug)]
pub struct KernelWorkspace {
    grid: Grid,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl KernelWorkspace {
    pub fn new(grid: Grid) -> Self {
        KernelWorkspace {
            grid,
            left: vec![0.0; grid.n()],
            right: vec![0.0; grid.n()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn sweep(&mut self, f: &[f64]) {
        let n = f.len();
        assert_eq!(n, self.grid.n(), "field does not match the workspace grid");
        let dx = self.grid.dx();
        let r = (-dx).exp();
        let w = 0.5 * dx;
        self.left[0] = 0.0;
        for k in 1..n {
            self.left[k] = r * self.left[k - 1] + w * (f[k] + r * f[k - 1]);
        }
        self.right[n - 1] = 0.0;
        for k in (0..n - 1).rev() {
            self.right[k] = r * self.right[k + 1] + w * (f[k] + r * f[k + 1]);
        }
    }

    /// `(P * f, P_x * f)` at the nodes.
    pub fn convolve_both(&mut self, f: &Field) -> (Field, Field) {
        self.sweep(f.values());
        let p: Vec<f64> = self
            .left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect();
        let px: Vec<f64> = self
            .left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (r - l))
            .collect();
        (
            Field::new(self.grid, p).expect("finite convolution"),
            Field::new(self.grid, px).expect("finite convolution"),
        )
    }

    pub fn convolve_p(&mut self, f: &Field) -> Field {
        self.convolve_both(f).0
    }

    pub fn convolve_px(&mut self, f: &Field) -> Field {
        self.convolve_both(f).1
    }
}

/// `P * f`, treating `f` as zero outside the grid.
pub fn convolve_p(f: &Field) -> Field {
    KernelWorkspace::new(f.grid()).convolve_p(f)
}

/// `P_x * f` with kernel `-sign(x - y) e^{-|x-y|} / 2`.
pub fn convolve_px(f: &Field) -> Field {
    KernelWorkspace::new(f.grid()).convolve_px(f)
}

/// `m_k = u_k - (u_{k+1} - 2u_k + u_{k-1}) / dx²`; boundary nodes copy their
/// interior neighbour.
pub fn helmholtz_forward(u: &Field) -> Field {
    let g = u.grid();
    let n = g.n();
    let h2 = g.dx() * g.dx();
    let y = u.values();
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        m[k] = y[k] - (y[k + 1] - 2.0 * y[k] + y[k - 1]) / h2;
    }
    m[0] = m[1];
    m[n - 1] = m[n - 2];
    Field::new(g, m).expect("finite stencil")
}

/// `u = P * m`.
pub fn helmholtz_inverse(m: &Field) -> Field {
    convolve_p(m)
}

/// `(P * f, P_x * f)` on a sorted, possibly non-uniform point set, for an
/// integrand with one-sided limits at the points (`f_left[k]`, `f_right[k]`).
///
/// Same trapezoid-weighted recurrence as the uniform sweep, with the local
/// spacing in place of `dx`.
pub fn convolve_nonuniform(x: &[f64], f_left: &[f64], f_right: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut l = vec![0.0; n];
    let mut r = vec![0.0; n];
    for k in 1..n {
        let h = x[k] - x[k - 1];
        let e = (-h).exp();
        l[k] = e * l[k - 1] + 0.5 * h * (f_left[k] + e * f_right[k - 1]);
    }
    for k in (0..n.saturating_sub(1)).rev() {
        let h = x[k + 1] - x[k];
        let e = (-h).exp();
        r[k] = e * r[k + 1] + 0.5 * h * (f_right[k] + e * f_left[k + 1]);
    }
    let p = l.iter().zip(&r).map(|(a, b)| 0.5 * (a + b)).collect();
    let px = l.iter().zip(&r).map(|(a, b)| 0.5 * (b - a)).collect();
    (p, px)
}
