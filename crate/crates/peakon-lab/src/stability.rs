//! Orbital distance, the energy identities around the crest, the quadratic
//! crest inequality, modulation of peakon trains and train diagnostics.

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::functionals::{
    cross_h, energy_u, energy_v, localized_functionals_exact, psi, quartic_f, build_weight, Densities,
    Samples,
};
use crate::grid::{argmax_product, crest, integrate_traced, Field, Grid, State, Traces};
use crate::profiles::{momentum_cloud, PeakonSpec, TrainSpec};

// ---------------------------------------------------------------------------
// Distance to the peakon orbit.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitalDistance {
    pub dist_u: f64,
    pub dist_v: f64,
    pub best_shift: f64,
}

impl OrbitalDistance {
    pub fn total(&self) -> f64 {
        self.dist_u + self.dist_v
    }
}

/// `(‖u - a e^{-|·-x0|}‖²_{H¹}, ‖v - b e^{-|·-x0|}‖²_{H¹})`, exact for clouds.
fn cloud_gap(c: &Cloud, a: f64, b: f64, x0: f64) -> (f64, f64) {
    let d = c.union(&Cloud::peakon(x0, -a, -b));
    let (eu, ev, _) = d.quadratic_invariants();
    (eu.max(0.0), ev.max(0.0))
}

/// Same as [`cloud_gap`] for grid states: `E_u - 2⟨u, φ⟩ + 2a²` with the
/// energy and the pairing by traced trapezoid and the profile norm exact.
fn grid_gap(s: &State, a: f64, b: f64, x0: f64) -> (f64, f64) {
    let g = s.grid();
    let n = g.n();
    let (su, sv) = (s.u.slopes(), s.v.slopes());
    let mut lu = vec![0.0; n];
    let mut ru = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut rv = vec![0.0; n];
    for k in 0..n {
        let r = g.x(k) - x0;
        let e = (-r.abs()).exp();
        // One-sided slopes of e^{-|r|}.
        let (dl, dr) = if r > 0.0 {
            (-e, -e)
        } else if r < 0.0 {
            (e, e)
        } else {
            (1.0, -1.0)
        };
        let (u, v) = (s.u.values()[k], s.v.values()[k]);
        lu[k] = u * e + su.left[k] * dl;
        ru[k] = u * e + su.right[k] * dr;
        lv[k] = v * e + sv.left[k] * dl;
        rv[k] = v * e + sv.right[k] * dr;
    }
    let e = Samples::traced(s).weighted(|_| 1.0);
    let pu = a * integrate_traced(g, &lu, &ru);
    let pv = b * integrate_traced(g, &lv, &rv);
    (
        (e.e_u - 2.0 * pu + 2.0 * a * a).max(0.0),
        (e.e_v - 2.0 * pv + 2.0 * b * b).max(0.0),
    )
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Half-width of the coarse window around the crest for grid-only states.
const GRID_SCAN_HALF_WIDTH: f64 = 10.0;

/// Minimizes `‖u - φ(·-x0)‖ + ‖v - ψ(·-x0)‖` over a single shared shift:
/// a coarse scan, then golden-section refinement to `1e-4·dx`.
///
/// Cloud states scan the nodes and the particles with the exact expression
/// `‖u - φ(·-x0)‖² = E_u - 4a u(x0) + 2a²` and evaluate the distance at the
/// optimum from the difference cloud.
pub fn orbital_distance(s: &State, a: f64, b: f64) -> Result<OrbitalDistance> {
    PeakonSpec::new(a, b, 0.0)?;
    let g = s.grid();
    let tol = 1e-4 * g.dx();
    let best = match &s.cloud {
        Some(c) => {
            let (eu, ev, _) = c.quadratic_invariants();
            let obj = |uu: f64, vv: f64| {
                (eu - 4.0 * a * uu + 2.0 * a * a).max(0.0).sqrt()
                    + (ev - 4.0 * b * vv + 2.0 * b * b).max(0.0).sqrt()
            };
            let mut cand: Vec<(f64, f64)> = (0..g.n())
                .map(|k| (g.x(k), obj(s.u.values()[k], s.v.values()[k])))
                .collect();
            let [pu, _, pv, _] = c.at_particles();
            for (i, &q) in c.positions().iter().enumerate() {
                if g.contains(q) {
                    cand.push((q, obj(pu[i], pv[i])));
                }
            }
            cand.sort_by(|x, y| x.0.total_cmp(&y.0));
            let ib = (0..cand.len())
                .min_by(|&i, &j| cand[i].1.total_cmp(&cand[j].1).then(i.cmp(&j)))
                .unwrap();
            let lo = cand[ib.saturating_sub(1)].0;
            let hi = cand[(ib + 1).min(cand.len() - 1)].0;
            let f = |x: f64| {
                let (uu, vv) = c.value_at(x);
                obj(uu, vv)
            };
            let (xg, fg) = golden_min(f, lo, hi, tol);
            if fg < cand[ib].1 {
                xg
            } else {
                cand[ib].0
            }
        }
        None => {
            let f = |x: f64| {
                let (du, dv) = grid_gap(s, a, b, x);
                du.sqrt() + dv.sqrt()
            };
            let cr = argmax_product(s);
            let xi = if cr.m > 0.0 {
                cr.xi
            } else {
                0.5 * (g.x_left() + g.x_right())
            };
            let mut bk = 0;
            let mut bf = f64::INFINITY;
            for k in 0..g.n() {
                let x = g.x(k);
                if (x - xi).abs() <= GRID_SCAN_HALF_WIDTH {
                    let v = f(x);
                    if v < bf {
                        bf = v;
                        bk = k;
                    }
                }
            }
            let lo = g.x(bk.saturating_sub(1));
            let hi = g.x((bk + 1).min(g.n() - 1));
            let (xg, fg) = golden_min(f, lo, hi, tol);
            if fg < bf {
                xg
            } else {
                g.x(bk)
            }
        }
    };
    let (du, dv) = match &s.cloud {
        Some(c) => cloud_gap(c, a, b, best),
        None => grid_gap(s, a, b, best),
    };
    Ok(OrbitalDistance {
        dist_u: du.sqrt(),
        dist_v: dv.sqrt(),
        best_shift: best,
    })
}

// ---------------------------------------------------------------------------
// Identities around the crest.

/// `|(E_u - 2a²) - ‖u - φ(·-ξ)‖² - 4a(u(ξ) - a)|` and the `v` analogue.
///
/// Both sides are computed by independent quadrature: a composite Gauss
/// rule for cloud states (with `ξ` as an extra breakpoint), the traced
/// trapezoid otherwise.
pub fn pointwise_energy_identity(s: &State, a: f64, b: f64, xi: f64) -> (f64, f64) {
    let g = s.grid();
    match &s.cloud {
        Some(c) => {
            let e = Samples::of(s).weighted(|_| 1.0);
            let diff = State::from_cloud(g, c.union(&Cloud::peakon(xi, -a, -b)), s.t);
            let d = Samples::of(&diff).weighted(|_| 1.0);
            let (uu, vv) = c.value_at(xi);
            (
                ((e.e_u - 2.0 * a * a) - d.e_u - 4.0 * a * (uu - a)).abs(),
                ((e.e_v - 2.0 * b * b) - d.e_v - 4.0 * b * (vv - b)).abs(),
            )
        }
        None => {
            let e = Samples::traced(s).weighted(|_| 1.0);
            let (du, dv) = grid_gap(s, a, b, xi);
            let r = (xi - g.x_left()) / g.dx();
            let k = (r.floor().max(0.0) as usize).min(g.n() - 2);
            let t = r - k as f64;
            let lin = |f: &Field| (1.0 - t) * f.values()[k] + t * f.values()[k + 1];
            let (uu, vv) = (lin(&s.u), lin(&s.v));
            (
                ((e.e_u - 2.0 * a * a) - du - 4.0 * a * (uu - a)).abs(),
                ((e.e_v - 2.0 * b * b) - dv - 4.0 * b * (vv - b)).abs(),
            )
        }
    }
}

/// `g1`, `g2` and `h` with one-sided values at every node, and the split.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticFields {
    pub g1: Traces,
    pub g2: Traces,
    pub h: Traces,
    pub split_index: usize,
    pub split_point: f64,
}

/// Slope traces for the split: exact when the field carries them, else
/// central differences with one-sided second-order stencils at the split.
fn split_slopes(f: &Field, idx: usize) -> Traces {
    if f.has_exact_slopes() {
        return f.slopes();
    }
    let mut t = f.slopes();
    let y = f.values();
    let dx = f.grid().dx();
    let n = y.len();
    if idx >= 2 {
        t.left[idx] = (3.0 * y[idx] - 4.0 * y[idx - 1] + y[idx - 2]) / (2.0 * dx);
    }
    if idx + 2 < n {
        t.right[idx] = (-3.0 * y[idx] + 4.0 * y[idx + 1] - y[idx + 2]) / (2.0 * dx);
    }
    t
}

/// Builds `g1 = u ∓ u_x`, `g2 = v ∓ v_x` and
/// `h = uv ∓ (uv)_x/3 - u_x v_x/3` (upper sign left of the split) with the
/// split at the node nearest to `xi`.
pub fn build_diagnostic_fields(s: &State, xi: f64) -> DiagnosticFields {
    let g = s.grid();
    let idx = g.nearest(xi);
    let su = split_slopes(&s.u, idx);
    let sv = split_slopes(&s.v, idx);
    let n = g.n();
    let mut out = DiagnosticFields {
        g1: Traces::continuous(vec![0.0; n]),
        g2: Traces::continuous(vec![0.0; n]),
        h: Traces::continuous(vec![0.0; n]),
        split_index: idx,
        split_point: g.x(idx),
    };
    let (u, v) = (s.u.values(), s.v.values());
    let eval = |k: usize, ux: f64, vx: f64, sign: f64| {
        let g1 = u[k] + sign * ux;
        let g2 = v[k] + sign * vx;
        let h = u[k] * v[k] + sign * (ux * v[k] + u[k] * vx) / 3.0 - ux * vx / 3.0;
        (g1, g2, h)
    };
    for k in 0..n {
        let sl = if k <= idx { -1.0 } else { 1.0 };
        let sr = if k < idx { -1.0 } else { 1.0 };
        let (a, b, c) = eval(k, su.left[k], sv.left[k], sl);
        out.g1.left[k] = a;
        out.g2.left[k] = b;
        out.h.left[k] = c;
        let (a, b, c) = eval(k, su.right[k], sv.right[k], sr);
        out.g1.right[k] = a;
        out.g2.right[k] = b;
        out.h.right[k] = c;
    }
    out
}

/// Two sides of an identity and their difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub xi: f64,
    pub m: f64,
}

fn identity(s: &State, weight_h: bool) -> IdentityResidual {
    let cr = argmax_product(s);
    let d = build_diagnostic_fields(s, cr.xi);
    let n = s.grid().n();
    let prod = |t: &dyn Fn(usize) -> f64| (0..n).map(t).collect::<Vec<f64>>();
    let (l, r) = if weight_h {
        (
            prod(&|k| d.h.left[k] * d.g1.left[k] * d.g2.left[k]),
            prod(&|k| d.h.right[k] * d.g1.right[k] * d.g2.right[k]),
        )
    } else {
        (
            prod(&|k| d.g1.left[k] * d.g2.left[k]),
            prod(&|k| d.g1.right[k] * d.g2.right[k]),
        )
    };
    let lhs = integrate_traced(s.grid(), &l, &r);
    let rhs = if weight_h {
        quartic_f(s) - 4.0 / 3.0 * cr.m * cr.m
    } else {
        cross_h(s) - 2.0 * cr.m
    };
    IdentityResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        xi: cr.xi,
        m: cr.m,
    }
}

/// `∫ g1 g2 = H - 2M` with `ξ`, `M` from the node argmax.
pub fn identity_g1g2(s: &State) -> IdentityResidual {
    identity(s, false)
}

/// `∫ h g1 g2 = F - (4/3)M²` with `ξ`, `M` from the node argmax.
pub fn identity_h(s: &State) -> IdentityResidual {
    identity(s, true)
}

/// `F - (4/3)MH + (4/3)M²` with the exact crest value `M`.
pub fn key_inequality(s: &State) -> f64 {
    let m = crest(s).m;
    quartic_f(s) - 4.0 / 3.0 * m * cross_h(s) + 4.0 / 3.0 * m * m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakGap {
    /// `|M - ab|`.
    pub gap: f64,
    /// `√(|H - 2ab|·M + (3/4)|F - (4/3)a²b²|)`.
    pub bound: f64,
}

pub fn peak_gap(s: &State, a: f64, b: f64) -> PeakGap {
    let m = crest(s).m;
    let c = a * b;
    let bound =
        ((cross_h(s) - 2.0 * c).abs() * m + 0.75 * (quartic_f(s) - 4.0 / 3.0 * c * c).abs()).sqrt();
    PeakGap {
        gap: (m - c).abs(),
        bound,
    }
}

/// Crest and orbit scalars of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub t: f64,
    pub xi: f64,
    pub m: f64,
    pub u_at_xi: f64,
    pub v_at_xi: f64,
    pub dist_u: f64,
    pub dist_v: f64,
    pub dist_total: f64,
    pub best_shift: f64,
}

pub fn stability_record(s: &State, a: f64, b: f64) -> Result<StabilityRecord> {
    let cr = crest(s);
    let (u, v) = match &s.cloud {
        Some(c) => c.value_at(cr.xi),
        None => (s.u.values()[cr.index], s.v.values()[cr.index]),
    };
    let d = orbital_distance(s, a, b)?;
    Ok(StabilityRecord {
        t: s.t,
        xi: cr.xi,
        m: cr.m,
        u_at_xi: u,
        v_at_xi: v,
        dist_u: d.dist_u,
        dist_v: d.dist_v,
        dist_total: d.total(),
        best_shift: d.best_shift,
    })
}

// ---------------------------------------------------------------------------
// Modulation.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub x_tilde: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// `Y^i(x̃)` and its Jacobian for a momentum cloud and a train of amplitudes.
///
/// `∫ u ∂_xφ_i = (a_i/2) Σ_j μ_j (x̃_i - q_j) e^{-|x̃_i - q_j|}`, and the
/// profile-profile pairings are the same expression for single particles.
fn orthogonality(c: &Cloud, amps: &[(f64, f64)], x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len();
    let mut y = vec![0.0; n];
    let mut jac = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (ai, bi) = amps[i];
        let (ou, ov) = c.odd_pairing(x[i]);
        let (eu, ev) = c.even_pairing(x[i]);
        let mut yi = 0.5 * ai * ou + 0.5 * bi * ov;
        let mut dii = 0.5 * ai * eu + 0.5 * bi * ev;
        for j in 0..n {
            if j == i {
                continue;
            }
            let (aj, bj) = amps[j];
            let r = x[i] - x[j];
            let e = (-r.abs()).exp();
            let w = ai * aj + bi * bj;
            yi -= w * r * e;
            let cross = w * (1.0 - r.abs()) * e;
            dii -= cross;
            jac[i][j] = cross;
        }
        y[i] = yi;
        jac[i][i] = dii;
    }
    (y, jac)
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn norm_inf(y: &[f64]) -> f64 {
    y.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Newton iterations allowed in [`modulation_solve`].
const MODULATION_MAX_ITER: usize = 50;

/// Solves the orthogonality system `Y(x̃) = 0` by damped Newton from
/// `x_init` with the analytic Jacobian. `iterations` counts residual
/// evaluations of accepted iterates.
pub fn modulation_solve(s: &State, peakons: &[PeakonSpec], x_init: &[f64]) -> Result<ModulationState> {
    let fail = |reason: String| Error::Modulation { t: s.t, reason };
    if peakons.len() != x_init.len() || x_init.is_empty() {
        return Err(fail("one initial position per peakon is required".into()));
    }
    if x_init.windows(2).any(|w| w[1] - w[0] <= 4.0) {
        return Err(fail("initial positions must increase with separation above 4".into()));
    }
    let c = momentum_cloud(s).map_err(|e| fail(e.to_string()))?;
    let amps: Vec<(f64, f64)> = peakons.iter().map(|p| (p.a, p.b)).collect();
    let tol = 1e-8 * (amps[0].0.powi(2) + amps[0].1.powi(2));
    let mut x = x_init.to_vec();
    let (mut y, mut jac) = orthogonality(&c, &amps, &x);
    let mut res = norm_inf(&y);
    let mut iterations = 1;
    while res > tol {
        if iterations >= MODULATION_MAX_ITER {
            return Err(fail(format!("no convergence, residual {res:e}")));
        }
        let step = solve(jac.clone(), y.iter().map(|v| -v).collect())
            .ok_or_else(|| fail("singular Jacobian".into()))?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + lambda * d).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                let (yt, jt) = orthogonality(&c, &amps, &trial);
                let rt = norm_inf(&yt);
                if rt < res {
                    x = trial;
                    y = yt;
                    jac = jt;
                    res = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(fail(format!("damped Newton stalled at residual {res:e}")));
            }
        }
        iterations += 1;
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(fail("fitted positions are out of order".into()));
    }
    Ok(ModulationState {
        x_tilde: x,
        residual_norm: res,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Train diagnostics.

/// Per-snapshot geometry and localized quantities of a train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainGeometry {
    pub t: f64,
    pub modulation: ModulationState,
    /// Midpoints `y_2..y_N`.
    pub y: Vec<f64>,
    /// Crest of `u v` on each interval.
    pub x_i: Vec<f64>,
    pub m_i: Vec<f64>,
    pub u_i: Vec<f64>,
    pub v_i: Vec<f64>,
    pub localized: Vec<Densities>,
    /// `(J^u, J^v, J^{uv})` at each midpoint.
    pub j: Vec<[f64; 3]>,
    /// `(4/3)M_i² - (4/3)M_i H_i + F_i`.
    pub local_inequality: Vec<f64>,
    /// `E_u - Σ2a_i² - ‖u - R‖² - 4Σa_i(u(x̃_i) - a_i)` and the `v` analogue.
    pub global_identity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub k: f64,
    pub sigma0: f64,
    pub geometry: Vec<TrainGeometry>,
    /// Centred-difference speeds `dx̃_i/dt` at interior snapshots.
    pub fd_speeds: Vec<Vec<f64>>,
    /// Least-squares slopes of `x̃_i(t)` over `t ≥ transient`.
    pub fitted_speeds: Vec<f64>,
    pub transient: f64,
}

impl TrainReport {
    pub fn max_residual(&self) -> f64 {
        self.geometry
            .iter()
            .map(|g| g.modulation.residual_norm)
            .fold(0.0, f64::max)
    }
}

/// Crest of `u v` restricted to `[lo, hi]`, for clouds: particles inside and
/// the two endpoints are the only candidates since `u v` is convex between
/// particles.
fn interval_crest(s: &State, c: &Cloud, pv: &[Vec<f64>; 4], lo: f64, hi: f64) -> (f64, f64, f64) {
    let g = s.grid();
    let lo = lo.max(g.x_left());
    let hi = hi.min(g.x_right());
    let mut best = (lo, 0.0, 0.0);
    let mut bm = f64::NEG_INFINITY;
    let mut check = |x: f64, u: f64, v: f64| {
        if u * v > bm {
            bm = u * v;
            best = (x, u, v);
        }
    };
    for (i, &q) in c.positions().iter().enumerate() {
        if q >= lo && q <= hi {
            check(q, pv[0][i], pv[2][i]);
        }
    }
    for x in [lo, hi] {
        let (u, v) = c.value_at(x);
        check(x, u, v);
    }
    best
}

/// Default start of the speed fit.
pub const SPEED_FIT_TRANSIENT: f64 = 1.0;

/// Modulation (warm-started), interval crests, localized functionals and
/// right energies at every snapshot.
pub fn train_diagnostics(traj: &Trajectory, ts: &TrainSpec, k: f64) -> Result<TrainReport> {
    ts.validate()?;
    let wf = build_weight(k)?;
    let amps = &ts.peakons;
    let cmax = ts.speeds().into_iter().fold(0.0, f64::max);
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut geometry = Vec::with_capacity(traj.states.len());
    for s in &traj.states {
        let init = match &prev {
            Some((_, x)) => x.clone(),
            None => amps.iter().map(|p| p.x0).collect(),
        };
        let m = modulation_solve(s, amps, &init)?;
        if let Some((t0, x0)) = &prev {
            let limit = 5.0 * (s.t - t0) * cmax;
            for (a, b) in x0.iter().zip(&m.x_tilde) {
                if (b - a).abs() > limit {
                    return Err(Error::Modulation {
                        t: s.t,
                        reason: format!("position jumped by {} (limit {limit})", (b - a).abs()),
                    });
                }
            }
        }
        let x = &m.x_tilde;
        let y: Vec<f64> = x.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let c = momentum_cloud(s)?;
        let pv = c.at_particles();
        let n = amps.len();
        let mut x_i = vec![0.0; n];
        let mut m_i = vec![0.0; n];
        let mut u_i = vec![0.0; n];
        let mut v_i = vec![0.0; n];
        for i in 0..n {
            let lo = if i == 0 { f64::NEG_INFINITY } else { y[i - 1] };
            let hi = if i + 1 == n { f64::INFINITY } else { y[i] };
            let (xc, u, v) = interval_crest(s, &c, &pv, lo, hi);
            x_i[i] = xc;
            m_i[i] = u * v;
            u_i[i] = u;
            v_i[i] = v;
        }
        let cs = State::from_cloud(s.grid(), c.clone(), s.t);
        let localized = localized_functionals_exact(&cs, &wf, &y);
        let smp = Samples::of(&cs);
        let j = y
            .iter()
            .map(|&yj| {
                let d = smp.weighted(|xx| psi((xx - yj) / k));
                [d.e_u, d.e_v, d.h]
            })
            .collect();
        let local_inequality = (0..n)
            .map(|i| {
                4.0 / 3.0 * m_i[i] * m_i[i] - 4.0 / 3.0 * m_i[i] * localized[i].h + localized[i].f
            })
            .collect();
        let mut r = Cloud::empty();
        for (p, &xt) in amps.iter().zip(x) {
            r = r.union(&Cloud::peakon(xt, p.a, p.b));
        }
        let (gu, gv, _) = c.union(&r.scaled(-1.0)).quadratic_invariants();
        let (eu, ev) = (energy_u(&cs), energy_v(&cs));
        let mut gi = [eu - gu, ev - gv];
        for (p, &xt) in amps.iter().zip(x) {
            let (uu, vv) = c.value_at(xt);
            gi[0] -= 2.0 * p.a * p.a + 4.0 * p.a * (uu - p.a);
            gi[1] -= 2.0 * p.b * p.b + 4.0 * p.b * (vv - p.b);
        }
        prev = Some((s.t, x.clone()));
        geometry.push(TrainGeometry {
            t: s.t,
            modulation: m,
            y,
            x_i,
            m_i,
            u_i,
            v_i,
            localized,
            j,
            local_inequality,
            global_identity: gi,
        });
    }
    let t: Vec<f64> = geometry.iter().map(|g| g.t).collect();
    let n = amps.len();
    let fd_speeds = (1..t.len().saturating_sub(1))
        .map(|k| {
            (0..n)
                .map(|i| {
                    (geometry[k + 1].modulation.x_tilde[i] - geometry[k - 1].modulation.x_tilde[i])
                        / (t[k + 1] - t[k - 1])
                })
                .collect()
        })
        .collect();
    let transient = SPEED_FIT_TRANSIENT.min(0.5 * t.last().copied().unwrap_or(0.0));
    let fitted_speeds = (0..n)
        .map(|i| {
            let pts: Vec<(f64, f64)> = geometry
                .iter()
                .filter(|g| g.t >= transient)
                .map(|g| (g.t, g.modulation.x_tilde[i]))
                .collect();
            least_squares_slope(&pts)
        })
        .collect();
    Ok(TrainReport {
        k,
        sigma0: ts.sigma0(),
        geometry,
        fd_speeds,
        fitted_speeds,
        transient,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

/// Largest increase of the right energies over the run, per midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// `[max_t J^u(t) - J^u(0), same for J^v, J^{uv}]` for each `j`.
    pub increases: Vec<[f64; 3]>,
    /// `e^{-σ0 L/(8K)}`: the decay scale of the admissible increase.
    pub scale: f64,
}

impl MonotonicityReport {
    pub fn max_increase(&self) -> f64 {
        self.increases
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

pub fn monotonicity_report(report: &TrainReport, ts: &TrainSpec) -> MonotonicityReport {
    let nj = report.geometry.first().map(|g| g.j.len()).unwrap_or(0);
    let mut increases = vec![[0.0; 3]; nj];
    if let Some(first) = report.geometry.first() {
        for g in &report.geometry {
            for j in 0..nj {
                for c in 0..3 {
                    increases[j][c] = f64::max(increases[j][c], g.j[j][c] - first.j[j][c]);
                }
            }
        }
    }
    MonotonicityReport {
        increases,
        scale: (-report.sigma0 * ts.l / (8.0 * report.k)).exp(),
    }
}

/// `[x_left, x_right]` covers the train with `margin` to spare.
pub fn fits(grid: Grid, xs: &[f64], margin: f64) -> bool {
    xs.iter()
        .all(|&x| x - margin >= grid.x_left() && x + margin <= grid.x_right())
}
