//! Momentum clouds: `u = Σ μ_j P(x - q_j)`, `v = Σ ν_j P(x - q_j)`.
//!
//! A cloud is a finite nonnegative momentum measure `m = Σ μ_j δ_{q_j}`,
//! `n = Σ ν_j δ_{q_j}`. The fields it induces are exact `H¹` functions with
//! kinks at the particles, and every quantity the lab needs (point values,
//! one-sided slopes, the polynomial functionals, pairings against shifted
//! peakons) has a closed form on it. A single particle with weights
//! `(2a, 2b)` is the peakon pair `(a e^{-|x-x0|}, b e^{-|x-x0|})`.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Traces};

#[derive(Clone, Debug, PartialEq)]
pub struct Cloud {
    q: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
}

/// Values and one-sided slopes of `u` and `v` at a set of points.
#[derive(Clone, Debug, Default)]
pub struct Jet {
    pub u: Vec<f64>,
    pub ux_left: Vec<f64>,
    pub ux_right: Vec<f64>,
    pub v: Vec<f64>,
    pub vx_left: Vec<f64>,
    pub vx_right: Vec<f64>,
}

/// Kernel sums of one sweep, per target: strictly-left part, strictly-right
/// part, and half the weight sitting exactly on the target.
struct Sums {
    left: [Vec<f64>; 2],
    right: [Vec<f64>; 2],
    at: [Vec<f64>; 2],
}

fn sweep(q: &[f64], w: [&[f64]; 2], xs: &[f64]) -> Sums {
    let n = xs.len();
    let p = q.len();
    let mut s = Sums {
        left: [vec![0.0; n], vec![0.0; n]],
        right: [vec![0.0; n], vec![0.0; n]],
        at: [vec![0.0; n], vec![0.0; n]],
    };
    let decay = |from: f64, to: f64| {
        if from.is_finite() {
            (-(to - from).abs()).exp()
        } else {
            0.0
        }
    };

    let mut acc = [0.0, 0.0];
    let mut pos = f64::NEG_INFINITY;
    let mut j = 0;
    for t in 0..n {
        let x = xs[t];
        while j < p && q[j] < x {
            let e = decay(pos, q[j]);
            acc = [acc[0] * e + 0.5 * w[0][j], acc[1] * e + 0.5 * w[1][j]];
            pos = q[j];
            j += 1;
        }
        let e = decay(pos, x);
        acc = [acc[0] * e, acc[1] * e];
        pos = x;
        s.left[0][t] = acc[0];
        s.left[1][t] = acc[1];
        let mut k = j;
        while k < p && q[k] == x {
            s.at[0][t] += 0.5 * w[0][k];
            s.at[1][t] += 0.5 * w[1][k];
            k += 1;
        }
    }

    let mut acc = [0.0, 0.0];
    let mut pos = f64::INFINITY;
    let mut j = p;
    for t in (0..n).rev() {
        let x = xs[t];
        while j > 0 && q[j - 1] > x {
            let e = decay(pos, q[j - 1]);
            acc = [
                acc[0] * e + 0.5 * w[0][j - 1],
                acc[1] * e + 0.5 * w[1][j - 1],
            ];
            pos = q[j - 1];
            j -= 1;
        }
        let e = decay(pos, x);
        acc = [acc[0] * e, acc[1] * e];
        pos = x;
        s.right[0][t] = acc[0];
        s.right[1][t] = acc[1];
    }
    s
}

/// Homogeneous polynomial in `(E1, E2)`; `c[i]` multiplies `E1^i E2^{d-i}`.
#[derive(Clone, Debug)]
pub(crate) struct Poly(Vec<f64>);

impl Poly {
    fn linear(e1: f64, e2: f64) -> Poly {
        Poly(vec![e2, e1])
    }

    pub(crate) fn mul(&self, o: &Poly) -> Poly {
        let mut r = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                r[i + j] += a * b;
            }
        }
        Poly(r)
    }

    pub(crate) fn add_scaled(&mut self, o: &Poly, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a += s * b;
        }
    }
}

/// `∫_0^h e^{-i s} e^{-(d-i)(h-s)} ds`.
fn moment(d: usize, i: usize, h: f64) -> f64 {
    let lam = d as f64 - 2.0 * i as f64;
    let fi = i as f64;
    let fj = (d - i) as f64;
    if lam == 0.0 {
        h * (-fi * h).exp()
    } else if lam > 0.0 {
        -(-fi * h).exp() * (-lam * h).exp_m1() / lam
    } else {
        (-fj * h).exp() * (lam * h).exp_m1() / lam
    }
}

/// The fields `(u, u_x, v, v_x)` on one piece between particles, as linear
/// forms in `(E1, E2)`.
pub(crate) type LocalForms = [Poly; 4];

impl Cloud {
    /// Builds a cloud from particles sorted by position.
    pub fn new(q: Vec<f64>, mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if q.len() != mu.len() || q.len() != nu.len() {
            return Err(Error::Profile("cloud arrays differ in length".into()));
        }
        if q.iter().chain(&mu).chain(&nu).any(|v| !v.is_finite()) {
            return Err(Error::Profile("cloud has non-finite entries".into()));
        }
        if q.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Profile("cloud positions are not sorted".into()));
        }
        Ok(Cloud { q, mu, nu })
    }

    /// Builds a cloud from particles in any order; coincident particles are
    /// merged.
    pub fn from_particles(mut parts: Vec<(f64, f64, f64)>) -> Result<Self> {
        parts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut q = Vec::with_capacity(parts.len());
        let mut mu = Vec::with_capacity(parts.len());
        let mut nu = Vec::with_capacity(parts.len());
        for (x, a, b) in parts {
            if q.last() == Some(&x) {
                *mu.last_mut().unwrap() += a;
                *nu.last_mut().unwrap() += b;
            } else {
                q.push(x);
                mu.push(a);
                nu.push(b);
            }
        }
        Cloud::new(q, mu, nu)
    }

    pub fn empty() -> Self {
        Cloud {
            q: vec![],
            mu: vec![],
            nu: vec![],
        }
    }

    /// Single particle: the peakon pair with amplitudes `(a, b)` at `x0`.
    pub fn peakon(x0: f64, a: f64, b: f64) -> Self {
        Cloud {
            q: vec![x0],
            mu: vec![2.0 * a],
            nu: vec![2.0 * b],
        }
    }

    /// Particles at the grid nodes carrying trapezoid masses of the nodal
    /// momentum densities `m`, `n`. Nodes where both vanish are skipped.
    pub fn from_nodes(grid: Grid, m: &[f64], n: &[f64]) -> Self {
        let dx = grid.dx();
        let mut c = Cloud::empty();
        for k in 0..grid.n() {
            if m[k] != 0.0 || n[k] != 0.0 {
                let w = grid.trapezoid_weight(k) * dx;
                c.q.push(grid.x(k));
                c.mu.push(m[k] * w);
                c.nu.push(n[k] * w);
            }
        }
        c
    }

    /// Union of two clouds.
    pub fn union(&self, other: &Cloud) -> Cloud {
        let parts = self
            .particles()
            .chain(other.particles())
            .collect::<Vec<_>>();
        Cloud::from_particles(parts).expect("union of valid clouds")
    }

    pub fn particles(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.q.len()).map(move |i| (self.q[i], self.mu[i], self.nu[i]))
    }

    pub fn scaled(&self, s: f64) -> Cloud {
        Cloud {
            q: self.q.clone(),
            mu: self.mu.iter().map(|m| m * s).collect(),
            nu: self.nu.iter().map(|m| m * s).collect(),
        }
    }

    /// The cloud with `u` and `v` exchanged.
    pub fn swapped(&self) -> Cloud {
        Cloud {
            q: self.q.clone(),
            mu: self.nu.clone(),
            nu: self.mu.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.q
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Smallest particle weight over both components.
    pub fn min_weight(&self) -> f64 {
        self.mu
            .iter()
            .chain(&self.nu)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_mass(&self) -> (f64, f64) {
        (self.mu.iter().sum(), self.nu.iter().sum())
    }

    /// Values and one-sided slopes at sorted points `xs`.
    pub fn eval(&self, xs: &[f64]) -> Jet {
        debug_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        let s = sweep(&self.q, [&self.mu, &self.nu], xs);
        let n = xs.len();
        let mut j = Jet {
            u: vec![0.0; n],
            ux_left: vec![0.0; n],
            ux_right: vec![0.0; n],
            v: vec![0.0; n],
            vx_left: vec![0.0; n],
            vx_right: vec![0.0; n],
        };
        for t in 0..n {
            let (l, r, a) = (s.left[0][t], s.right[0][t], s.at[0][t]);
            j.u[t] = l + r + a;
            j.ux_left[t] = -l + r + a;
            j.ux_right[t] = -l + r - a;
            let (l, r, a) = (s.left[1][t], s.right[1][t], s.at[1][t]);
            j.v[t] = l + r + a;
            j.vx_left[t] = -l + r + a;
            j.vx_right[t] = -l + r - a;
        }
        j
    }

    /// `(u, v)` at a single point.
    pub fn value_at(&self, x: f64) -> (f64, f64) {
        let mut u = 0.0;
        let mut v = 0.0;
        for i in 0..self.q.len() {
            let e = 0.5 * (-(x - self.q[i]).abs()).exp();
            u += self.mu[i] * e;
            v += self.nu[i] * e;
        }
        (u, v)
    }

    /// At each particle: `u`, the slope of `u` averaged over both sides, `v`
    /// and the averaged slope of `v`.
    pub fn at_particles(&self) -> [Vec<f64>; 4] {
        let s = sweep(&self.q, [&self.mu, &self.nu], &self.q);
        let n = self.q.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for t in 0..n {
            out[0][t] = s.left[0][t] + s.right[0][t] + s.at[0][t];
            out[1][t] = s.right[0][t] - s.left[0][t];
            out[2][t] = s.left[1][t] + s.right[1][t] + s.at[1][t];
            out[3][t] = s.right[1][t] - s.left[1][t];
        }
        out
    }

    /// Time derivatives of positions and weights under the flow:
    /// `q' = u v`, `μ' = -v ū_x μ`, `ν' = -u v̄_x ν`.
    pub fn tendency(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [u, ux, v, vx] = self.at_particles();
        let n = self.q.len();
        let mut dq = vec![0.0; n];
        let mut dmu = vec![0.0; n];
        let mut dnu = vec![0.0; n];
        for i in 0..n {
            dq[i] = u[i] * v[i];
            dmu[i] = -v[i] * ux[i] * self.mu[i];
            dnu[i] = -u[i] * vx[i] * self.nu[i];
        }
        (dq, dmu, dnu)
    }

    /// Largest `u v` over the particles (the maximal transport speed).
    pub fn max_transport(&self) -> f64 {
        let [u, _, v, _] = self.at_particles();
        u.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a * b).abs()))
    }

    /// Merges neighbours closer than `tol·max(1, |q|)`, including any pair
    /// that crossed. Returns the number of merges.
    pub fn coalesce(&mut self, tol: f64) -> usize {
        if self.q.len() < 2 {
            return 0;
        }
        let mut merged = 0;
        let mut q = Vec::with_capacity(self.q.len());
        let mut mu = Vec::with_capacity(self.q.len());
        let mut nu: Vec<f64> = Vec::with_capacity(self.q.len());
        for i in 0..self.q.len() {
            let x = self.q[i];
            if let Some(&last) = q.last() {
                let last: f64 = last;
                if x - last <= tol * last.abs().max(1.0) {
                    let k = q.len() - 1;
                    let (wa, wb) = (mu[k] + nu[k], self.mu[i] + self.nu[i]);
                    if wa + wb > 0.0 {
                        q[k] = (wa * last + wb * x) / (wa + wb);
                    }
                    mu[k] += self.mu[i];
                    nu[k] += self.nu[i];
                    merged += 1;
                    continue;
                }
            }
            q.push(x);
            mu.push(self.mu[i]);
            nu.push(self.nu[i]);
        }
        if merged > 0 {
            // A merged position can move left of its predecessor by rounding.
            for k in 1..q.len() {
                if q[k] < q[k - 1] {
                    q[k] = q[k - 1];
                }
            }
        }
        self.q = q;
        self.mu = mu;
        self.nu = nu;
        merged
    }

    /// Samples `u`, `v` on the grid with exact one-sided slopes attached.
    pub fn sample(&self, grid: Grid) -> (Field, Field) {
        let xs = grid.nodes();
        let j = self.eval(&xs);
        let u = Field::new(grid, j.u)
            .and_then(|f| {
                f.with_slopes(Traces {
                    left: j.ux_left,
                    right: j.ux_right,
                })
            })
            .expect("finite cloud samples");
        let v = Field::new(grid, j.v)
            .and_then(|f| {
                f.with_slopes(Traces {
                    left: j.vx_left,
                    right: j.vx_right,
                })
            })
            .expect("finite cloud samples");
        (u, v)
    }

    /// Distinct positions with summed weights.
    fn distinct(&self) -> Cloud {
        if self.q.windows(2).all(|w| w[0] < w[1]) {
            return self.clone();
        }
        Cloud::from_particles(self.particles().collect()).expect("valid cloud")
    }

    /// Exact integral over the line of a local density that is a homogeneous
    /// polynomial of degree `d` in `(u, u_x, v, v_x)`. The closure receives
    /// the four fields as linear forms in `(E1, E2)` and must return a
    /// polynomial of degree `d`.
    pub(crate) fn integrate_local(&self, d: usize, density: impl Fn(&LocalForms) -> Poly) -> f64 {
        let c = self.distinct();
        let p = c.q.len();
        if p == 0 {
            return 0.0;
        }
        let s = sweep(&c.q, [&c.mu, &c.nu], &c.q);
        let incl_left = |w: usize, k: usize| s.left[w][k] + s.at[w][k];
        let incl_right = |w: usize, k: usize| s.right[w][k] + s.at[w][k];
        let eval = |forms: LocalForms| density(&forms).0;

        let mut total = 0.0;
        // Left tail: only the E2 = e^{x - q_0} mode is present.
        let (bu, bv) = (incl_right(0, 0), incl_right(1, 0));
        let c0 = eval([
            Poly::linear(0.0, bu),
            Poly::linear(0.0, bu),
            Poly::linear(0.0, bv),
            Poly::linear(0.0, bv),
        ]);
        total += c0[0] / d as f64;
        // Right tail: only E1 = e^{-(x - q_last)}.
        let (au, av) = (incl_left(0, p - 1), incl_left(1, p - 1));
        let c1 = eval([
            Poly::linear(au, 0.0),
            Poly::linear(-au, 0.0),
            Poly::linear(av, 0.0),
            Poly::linear(-av, 0.0),
        ]);
        total += c1[d] / d as f64;
        for k in 0..p - 1 {
            let h = c.q[k + 1] - c.q[k];
            let (au, av) = (incl_left(0, k), incl_left(1, k));
            let (bu, bv) = (incl_right(0, k + 1), incl_right(1, k + 1));
            let coef = eval([
                Poly::linear(au, bu),
                Poly::linear(-au, bu),
                Poly::linear(av, bv),
                Poly::linear(-av, bv),
            ]);
            for (i, ci) in coef.iter().enumerate() {
                if *ci != 0.0 {
                    total += ci * moment(d, i, h);
                }
            }
        }
        total
    }

    /// Exact `(E_u, E_v, H)`: `Σ μ_i u(q_i)`, `Σ ν_i v(q_i)`, `Σ μ_i v(q_i)`.
    pub fn quadratic_invariants(&self) -> (f64, f64, f64) {
        let [u, _, v, _] = self.at_particles();
        let mut eu = 0.0;
        let mut ev = 0.0;
        let mut h = 0.0;
        for i in 0..self.q.len() {
            eu += self.mu[i] * u[i];
            ev += self.nu[i] * v[i];
            h += self.mu[i] * v[i];
        }
        (eu, ev, h)
    }

    /// Exact quartic invariant `F`.
    pub fn quartic_f(&self) -> f64 {
        self.integrate_local(4, |[u, ux, v, vx]| {
            let uu = u.mul(u);
            let vv = v.mul(v);
            let uxux = ux.mul(ux);
            let vxvx = vx.mul(vx);
            let uv = u.mul(v);
            let uxvx = ux.mul(vx);
            let mut f = uu.mul(&vv);
            f.add_scaled(&uu.mul(&vxvx), 1.0 / 3.0);
            f.add_scaled(&vv.mul(&uxux), 1.0 / 3.0);
            f.add_scaled(&uv.mul(&uxvx), 4.0 / 3.0);
            f.add_scaled(&uxux.mul(&vxvx), -1.0 / 3.0);
            f
        })
    }

    /// Dual cell widths: half the distance between the two neighbours, one
    /// full gap at the two ends.
    fn dual_widths(&self) -> Vec<f64> {
        let p = self.q.len();
        let q = &self.q;
        (0..p)
            .map(|i| match (i, p) {
                (_, 1) => 0.0,
                (0, _) => q[1] - q[0],
                (i, p) if i == p - 1 => q[p - 1] - q[p - 2],
                _ => 0.5 * (q[i + 1] - q[i - 1]),
            })
            .collect()
    }

    /// `∫ (m n)^{1/3}` with the densities `μ_i / w_i`, `ν_i / w_i` on dual cells.
    pub fn cubic_e0(&self) -> f64 {
        let c = self.distinct();
        let w = c.dual_widths();
        (0..c.q.len())
            .map(|i| (c.mu[i] * c.nu[i] * w[i]).cbrt())
            .sum()
    }

    /// Momentum densities interpolated linearly between particles and sampled
    /// at the nodes; zero outside the particle hull. An isolated particle is
    /// deposited on its nearest node.
    pub fn density(&self, grid: Grid) -> (Field, Field) {
        let c = self.distinct();
        let n = grid.n();
        let mut m = vec![0.0; n];
        let mut nn = vec![0.0; n];
        let p = c.q.len();
        if p == 1 {
            if grid.contains(c.q[0]) {
                let k = grid.nearest(c.q[0]);
                m[k] = c.mu[0] / grid.dx();
                nn[k] = c.nu[0] / grid.dx();
            }
        } else if p > 1 {
            let w = c.dual_widths();
            let dm: Vec<f64> = (0..p).map(|i| c.mu[i] / w[i]).collect();
            let dn: Vec<f64> = (0..p).map(|i| c.nu[i] / w[i]).collect();
            let mut j = 0;
            for k in 0..n {
                let x = grid.x(k);
                if x < c.q[0] || x > c.q[p - 1] {
                    continue;
                }
                while j + 2 < p && c.q[j + 1] < x {
                    j += 1;
                }
                let h = c.q[j + 1] - c.q[j];
                let s = if h > 0.0 { (x - c.q[j]) / h } else { 0.0 };
                m[k] = (1.0 - s) * dm[j] + s * dm[j + 1];
                nn[k] = (1.0 - s) * dn[j] + s * dn[j + 1];
            }
        }
        (
            Field::new(grid, m).expect("finite density"),
            Field::new(grid, nn).expect("finite density"),
        )
    }

    /// Particle maximizing `u v` (ties to the leftmost): `(x, u, v)`.
    ///
    /// Between two neighbouring particles `u v` is a positive combination of
    /// `e^{-2s}`, `e^{2s}` and a constant when the weights are nonnegative,
    /// hence convex, so the maximum over the line sits on a particle.
    pub fn crest(&self) -> Option<(f64, f64, f64)> {
        if self.q.is_empty() {
            return None;
        }
        let [u, _, v, _] = self.at_particles();
        let mut best = 0;
        for i in 1..self.q.len() {
            if u[i] * v[i] > u[best] * v[best] {
                best = i;
            }
        }
        Some((self.q[best], u[best], v[best]))
    }

    /// `Σ_j μ_j (x - q_j) e^{-|x-q_j|}` and the same with `ν`.
    ///
    /// `∫ u ∂_x φ = (a/2)·(first value)` for `φ = a e^{-|· - x|}`.
    pub fn odd_pairing(&self, x: f64) -> (f64, f64) {
        let mut s = (0.0, 0.0);
        for i in 0..self.q.len() {
            let r = x - self.q[i];
            let k = r * (-r.abs()).exp();
            s.0 += self.mu[i] * k;
            s.1 += self.nu[i] * k;
        }
        s
    }

    /// `Σ_j μ_j (1 - |x - q_j|) e^{-|x-q_j|}` and the same with `ν`.
    ///
    /// `∫ u_x ∂_x φ = (a/2)·(first value)` for `φ = a e^{-|· - x|}`.
    pub fn even_pairing(&self, x: f64) -> (f64, f64) {
        let mut s = (0.0, 0.0);
        for i in 0..self.q.len() {
            let r = (x - self.q[i]).abs();
            let k = (1.0 - r) * (-r).exp();
            s.0 += self.mu[i] * k;
            s.1 += self.nu[i] * k;
        }
        s
    }

    /// Breakpoint-refined sampling: the grid nodes, the particles inside the
    /// grid, and `refine - 1` equispaced points inside each resulting piece.
    pub fn fine_sampling(&self, grid: Grid, refine: usize) -> (Vec<f64>, Jet) {
        let refine = refine.max(1);
        let mut brk = grid.nodes();
        brk.extend(self.q.iter().copied().filter(|x| grid.contains(*x)));
        brk.sort_by(f64::total_cmp);
        brk.dedup();
        let mut xs = Vec::with_capacity(brk.len() * refine);
        for w in brk.windows(2) {
            xs.push(w[0]);
            let h = (w[1] - w[0]) / refine as f64;
            for r in 1..refine {
                xs.push(w[0] + r as f64 * h);
            }
        }
        xs.push(*brk.last().unwrap());
        let jet = self.eval(&xs);
        (xs, jet)
    }

    /// Composite Gauss-Legendre rule on the pieces between grid nodes and
    /// particles; returns points, weights and the jet at the points. The
    /// integrand is smooth on every piece, so the rule converges fast.
    pub fn gauss_rule(&self, grid: Grid) -> (Vec<f64>, Vec<f64>, Jet) {
        const GX: [f64; 4] = [
            -0.861_136_311_594_052_6,
            -0.339_981_043_584_856_3,
            0.339_981_043_584_856_3,
            0.861_136_311_594_052_6,
        ];
        const GW: [f64; 4] = [
            0.347_854_845_137_453_9,
            0.652_145_154_862_546_1,
            0.652_145_154_862_546_1,
            0.347_854_845_137_453_9,
        ];
        let mut brk = grid.nodes();
        brk.extend(self.q.iter().copied().filter(|x| grid.contains(*x)));
        brk.sort_by(f64::total_cmp);
        brk.dedup();
        let mut xs = Vec::with_capacity(brk.len() * 4);
        let mut ws = Vec::with_capacity(brk.len() * 4);
        for w in brk.windows(2) {
            let c = 0.5 * (w[0] + w[1]);
            let h = 0.5 * (w[1] - w[0]);
            for g in 0..4 {
                xs.push(c + h * GX[g]);
                ws.push(h * GW[g]);
            }
        }
        let jet = self.eval(&xs);
        (xs, ws, jet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn brute(c: &Cloud, x: f64) -> (f64, f64) {
        let mut u = 0.0;
        let mut ux = 0.0;
        for (q, m, _) in c.particles() {
            let e = 0.5 * (-(x - q).abs()).exp();
            u += m * e;
            ux -= (x - q).signum() * m * e;
        }
        (u, ux)
    }

    fn sample_cloud() -> Cloud {
        Cloud::from_particles(vec![
            (-1.3, 0.4, 0.2),
            (0.0, 1.0, 0.7),
            (0.25, 0.3, 0.9),
            (2.0, 0.05, 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn eval_matches_direct_sum() {
        let c = sample_cloud();
        let xs = [-3.0, -1.3, -0.2, 0.0, 0.1, 0.25, 1.7, 2.0, 5.0];
        let j = c.eval(&xs);
        for (t, &x) in xs.iter().enumerate() {
            let (u, ux) = brute(&c, x);
            assert!((j.u[t] - u).abs() < 1e-14);
            if !c.positions().contains(&x) {
                assert!((j.ux_left[t] - ux).abs() < 1e-14);
                assert!((j.ux_right[t] - ux).abs() < 1e-14);
            } else {
                let h = 1e-7;
                let (_, l) = brute(&c, x - h);
                let (_, r) = brute(&c, x + h);
                assert!((j.ux_left[t] - l).abs() < 1e-6);
                assert!((j.ux_right[t] - r).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_particle_is_the_peakon() {
        let c = Cloud::peakon(0.5, 2.0, 3.0);
        let (u, v) = c.value_at(1.5);
        assert!((u - 2.0 * (-1.0_f64).exp()).abs() < 1e-15);
        assert!((v - 3.0 * (-1.0_f64).exp()).abs() < 1e-15);
        let (eu, ev, h) = c.quadratic_invariants();
        assert_eq!((eu, ev, h), (8.0, 18.0, 12.0));
        assert!((c.quartic_f() - 4.0 / 3.0 * 36.0).abs() < 1e-12);
        let (dq, dmu, dnu) = c.tendency();
        assert_eq!(dq[0], 6.0);
        assert_eq!((dmu[0], dnu[0]), (0.0, 0.0));
    }

    #[test]
    fn local_integrator_reproduces_energy_sums() {
        let c = sample_cloud();
        let eu = c.integrate_local(2, |[u, ux, _, _]| {
            let mut p = u.mul(u);
            p.add_scaled(&ux.mul(ux), 1.0);
            p
        });
        let h = c.integrate_local(2, |[u, ux, v, vx]| {
            let mut p = u.mul(v);
            p.add_scaled(&ux.mul(vx), 1.0);
            p
        });
        let (eu0, _, h0) = c.quadratic_invariants();
        assert!((eu - eu0).abs() < 1e-13);
        assert!((h - h0).abs() < 1e-13);
    }

    #[test]
    fn quartic_matches_gauss_quadrature() {
        let c = sample_cloud();
        let g = make_grid(-40.0, 40.0, 2049).unwrap();
        let (_, w, j) = c.gauss_rule(g);
        let mut f = 0.0;
        for k in 0..w.len() {
            let (u, ux, v, vx) = (j.u[k], j.ux_left[k], j.v[k], j.vx_left[k]);
            f += w[k]
                * (u * u * v * v + u * u * vx * vx / 3.0 + v * v * ux * ux / 3.0
                    + 4.0 / 3.0 * u * v * ux * vx
                    - ux * ux * vx * vx / 3.0);
        }
        assert!((f - c.quartic_f()).abs() < 1e-10 * f.abs());
    }

    #[test]
    fn coalesce_merges_close_and_crossed() {
        let c = Cloud::new(
            vec![0.0, 1e-15, 1.0, 0.999_999_999_999_999],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0],
        );
        assert!(c.is_err());
        let mut c = Cloud::new(vec![0.0, 1e-15, 1.0], vec![1.0; 3], vec![2.0; 3]).unwrap();
        assert_eq!(c.coalesce(1e-13), 1);
        assert_eq!(c.len(), 2);
        assert_eq!(c.mu()[0], 2.0);
        c = Cloud::empty();
        assert_eq!(c.coalesce(1e-13), 0);
    }

    #[test]
    fn crest_is_on_a_particle() {
        let c = sample_cloud();
        let (x, u, v) = c.crest().unwrap();
        let mut best = 0.0_f64;
        for k in 0..20001 {
            let y = -5.0 + k as f64 * 5e-4;
            let (a, b) = c.value_at(y);
            best = best.max(a * b);
        }
        assert!(u * v >= best - 1e-12);
        assert!(c.positions().contains(&x));
    }

    #[test]
    fn pairings_match_quadrature() {
        let c = sample_cloud();
        let g = make_grid(-40.0, 40.0, 4097).unwrap();
        let (xs, w, j) = c.gauss_rule(g);
        let (a, x0) = (1.5, 0.625);
        let mut odd = 0.0;
        let mut even = 0.0;
        for k in 0..xs.len() {
            let r = xs[k] - x0;
            let phix = -a * r.signum() * (-r.abs()).exp();
            odd += w[k] * j.u[k] * phix;
            even += w[k] * j.ux_left[k] * phix;
        }
        let (s1, _) = c.odd_pairing(x0);
        let (s0, _) = c.even_pairing(x0);
        assert!((odd - 0.5 * a * s1).abs() < 1e-9);
        assert!((even - 0.5 * a * s0).abs() < 1e-9);
    }
}
