//! Time stepping, the characteristic flow and the virial balance.
//!
//! Cloud-backed states advance by the Lagrangian particle flow, which is an
//! exact reduction of the weak form for momentum measures. Grid-only states,
//! or any state with [`Scheme::Eulerian`], use the method-of-lines right-hand
//! side: upwind transport plus the two kernel convolutions.

use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::functionals::{momentum, record, FunctionalRecord, Samples};
use crate::grid::{derivative, Field, Grid, State};
use crate::kernel::{convolve_nonuniform, KernelWorkspace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Particle flow of the momentum cloud.
    #[default]
    Lagrangian,
    /// Upwind finite differences with kernel convolutions on the grid.
    Eulerian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub scheme: Scheme,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            cfl: 0.3,
            dt_max: 0.05,
            t_end: 10.0,
            record_every: 10,
            scheme: Scheme::Lagrangian,
        }
    }
}

impl StepControl {
    pub fn new(cfl: f64, dt_max: f64, t_end: f64, record_every: usize) -> Result<Self> {
        let c = StepControl {
            cfl,
            dt_max,
            t_end,
            record_every,
            scheme: Scheme::Lagrangian,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("step.cfl = {} must lie in (0, 1]", self.cfl)));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::Config(format!("step.dt_max = {} must be positive", self.dt_max)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("step.t_end = {} must be nonnegative", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("step.record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Snapshots with their functional records. Times strictly increase and the
/// first snapshot is the initial state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub records: Vec<FunctionalRecord>,
    pub steps: usize,
    pub merges: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn grid(&self) -> Grid {
        self.states[0].grid()
    }
}

/// Relative tolerance for merging particles that have (numerically) collided.
pub const COALESCE_TOL: f64 = 1e-12;

fn blow_up(t: f64, reason: impl Into<String>) -> Error {
    Error::BlowUp {
        t,
        reason: reason.into(),
    }
}

/// Backward difference where `speed > 0`, forward where `speed < 0`.
fn upwind(f: &[f64], speed: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|k| {
            let back = if speed[k] >= 0.0 { k > 0 } else { k == n - 1 };
            if back {
                (f[k] - f[k - 1]) / dx
            } else {
                (f[k + 1] - f[k]) / dx
            }
        })
        .collect()
}

/// Method-of-lines tendencies of the weak form:
/// `u_t = -uv D_up u - P_x*(u_x²v/2 + u u_x v_x + u²v) - P*(u_x² v_x)/2`
/// and the mirror image for `v`. Slopes inside the convolutions are central
/// differences.
pub fn rhs(s: &State, ws: &mut KernelWorkspace) -> (Field, Field) {
    let g = s.grid();
    let (u, v) = (s.u.values(), s.v.values());
    let ux = derivative(&s.u).into_values();
    let vx = derivative(&s.v).into_values();
    let speed: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
    let mut tend = |f: &[f64], fx: &[f64], h: &[f64], hx: &[f64]| -> Vec<f64> {
        let n = f.len();
        let a: Vec<f64> = (0..n)
            .map(|k| 0.5 * fx[k] * fx[k] * h[k] + f[k] * fx[k] * hx[k] + f[k] * f[k] * h[k])
            .collect();
        let b: Vec<f64> = (0..n).map(|k| fx[k] * fx[k] * hx[k]).collect();
        let pa = ws.convolve_px(&Field::new(g, a).expect("finite integrand"));
        let pb = ws.convolve_p(&Field::new(g, b).expect("finite integrand"));
        let d = upwind(f, &speed, g.dx());
        (0..n)
            .map(|k| -speed[k] * d[k] - pa.values()[k] - 0.5 * pb.values()[k])
            .collect()
    };
    let du = tend(u, &ux, v, &vx);
    let dv = tend(v, &vx, u, &ux);
    (
        Field::new(g, du).expect("finite tendency"),
        Field::new(g, dv).expect("finite tendency"),
    )
}

fn axpy(base: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + h * k).collect()
}

fn rk4_fields(s: &State, dt: f64, ws: &mut KernelWorkspace) -> Result<State> {
    let g = s.grid();
    let mk = |u: Vec<f64>, v: Vec<f64>, t: f64| -> Result<State> {
        let bad = |e| blow_up(t, format!("{e}"));
        State::new(Field::new(g, u).map_err(bad)?, Field::new(g, v).map_err(bad)?, t)
    };
    let (u0, v0) = (s.u.values(), s.v.values());
    let (k1u, k1v) = rhs(s, ws);
    let s2 = mk(axpy(u0, k1u.values(), 0.5 * dt), axpy(v0, k1v.values(), 0.5 * dt), s.t)?;
    let (k2u, k2v) = rhs(&s2, ws);
    let s3 = mk(axpy(u0, k2u.values(), 0.5 * dt), axpy(v0, k2v.values(), 0.5 * dt), s.t)?;
    let (k3u, k3v) = rhs(&s3, ws);
    let s4 = mk(axpy(u0, k3u.values(), dt), axpy(v0, k3v.values(), dt), s.t)?;
    let (k4u, k4v) = rhs(&s4, ws);
    let comb = |y: &[f64], a: &Field, b: &Field, c: &Field, d: &Field| -> Vec<f64> {
        (0..y.len())
            .map(|k| {
                y[k] + dt / 6.0
                    * (a.values()[k] + 2.0 * b.values()[k] + 2.0 * c.values()[k] + d.values()[k])
            })
            .collect()
    };
    mk(
        comb(u0, &k1u, &k2u, &k3u, &k4u),
        comb(v0, &k1v, &k2v, &k3v, &k4v),
        s.t + dt,
    )
}

/// Particle tendencies for arrays that may be out of order mid-stage.
fn cloud_tendency(q: &[f64], mu: &[f64], nu: &[f64], t: f64) -> Result<[Vec<f64>; 3]> {
    if q.iter().chain(mu).chain(nu).any(|x| !x.is_finite()) {
        return Err(blow_up(t, "non-finite particle state"));
    }
    if q.windows(2).all(|w| w[0] <= w[1]) {
        let c = Cloud::new(q.to_vec(), mu.to_vec(), nu.to_vec())?;
        let (a, b, d) = c.tendency();
        return Ok([a, b, d]);
    }
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&i, &j| q[i].total_cmp(&q[j]));
    let c = Cloud::new(
        idx.iter().map(|&i| q[i]).collect(),
        idx.iter().map(|&i| mu[i]).collect(),
        idx.iter().map(|&i| nu[i]).collect(),
    )?;
    let (a, b, d) = c.tendency();
    let mut out = [vec![0.0; q.len()], vec![0.0; q.len()], vec![0.0; q.len()]];
    for (r, &i) in idx.iter().enumerate() {
        out[0][i] = a[r];
        out[1][i] = b[r];
        out[2][i] = d[r];
    }
    Ok(out)
}

/// One RK4 step of the particle flow followed by re-sorting and merging of
/// collided particles. Returns the new cloud and the number of merges.
pub fn cloud_step(c: &Cloud, dt: f64, t: f64) -> Result<(Cloud, usize)> {
    let (q, mu, nu) = (c.positions(), c.mu(), c.nu());
    let k1 = cloud_tendency(q, mu, nu, t)?;
    let st = |k: &[Vec<f64>; 3], h: f64| (axpy(q, &k[0], h), axpy(mu, &k[1], h), axpy(nu, &k[2], h));
    let (q2, m2, n2) = st(&k1, 0.5 * dt);
    let k2 = cloud_tendency(&q2, &m2, &n2, t)?;
    let (q3, m3, n3) = st(&k2, 0.5 * dt);
    let k3 = cloud_tendency(&q3, &m3, &n3, t)?;
    let (q4, m4, n4) = st(&k3, dt);
    let k4 = cloud_tendency(&q4, &m4, &n4, t)?;
    let n = q.len();
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let f = |y: &[f64], j: usize| {
            y[i] + dt / 6.0 * (k1[j][i] + 2.0 * k2[j][i] + 2.0 * k3[j][i] + k4[j][i])
        };
        parts.push((f(q, 0), f(mu, 1), f(nu, 2)));
    }
    if parts.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(blow_up(t + dt, "non-finite particle state"));
    }
    let mut next = Cloud::from_particles(parts).map_err(|e| blow_up(t + dt, e.to_string()))?;
    let merged = next.coalesce(COALESCE_TOL);
    Ok((next, merged))
}

/// Classical RK4 step. Cloud-backed states move their particles; grid-only
/// states use [`rhs`].
pub fn step_rk4(s: &State, dt: f64, ws: &mut KernelWorkspace) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    match &s.cloud {
        Some(c) => {
            let (next, _) = cloud_step(c, dt, s.t)?;
            Ok(State::from_cloud(s.grid(), next, s.t + dt))
        }
        None => rk4_fields(s, dt, ws),
    }
}

fn dt_for(speed: f64, dx: f64, ctl: &StepControl) -> f64 {
    ctl.dt_max.min(ctl.cfl * dx / speed.max(1e-12))
}

/// `min(dt_max, cfl·dx / max |u v|)`. For cloud states the maximum is taken
/// over the particles, where the crest of `u v` lives.
pub fn cfl_dt(s: &State, ctl: &StepControl) -> f64 {
    let node = s
        .u
        .values()
        .iter()
        .zip(s.v.values())
        .fold(0.0_f64, |m, (a, b)| m.max((a * b).abs()));
    let speed = match &s.cloud {
        Some(c) => node.max(c.max_transport()),
        None => node,
    };
    dt_for(speed, s.grid().dx(), ctl)
}

/// Runs to `t_end`, snapshotting every `record_every` accepted steps and at
/// `t_end`.
pub fn simulate(initial: &State, ctl: &StepControl) -> Result<Trajectory> {
    simulate_with(initial, ctl, |_, _| Ok(()))
}

/// [`simulate`] with a callback on every snapshot (including the first), for
/// streaming output.
pub fn simulate_with(
    initial: &State,
    ctl: &StepControl,
    mut on_snapshot: impl FnMut(&State, &FunctionalRecord) -> Result<()>,
) -> Result<Trajectory> {
    ctl.validate()?;
    let grid = initial.grid();
    let first = match ctl.scheme {
        Scheme::Lagrangian => initial.clone(),
        Scheme::Eulerian => initial.grid_only(),
    };
    let rec = record(&first);
    on_snapshot(&first, &rec)?;
    let mut traj = Trajectory {
        states: vec![first.clone()],
        records: vec![rec],
        steps: 0,
        merges: 0,
    };
    let mut ws = KernelWorkspace::new(grid);
    let mut t = first.t;
    let t_end = first.t + ctl.t_end;
    let mut cloud = first.cloud.clone();
    let mut fields = first;
    while t < t_end {
        let speed_state = |c: &Option<Cloud>, f: &State| match c {
            Some(c) => dt_for(c.max_transport(), grid.dx(), ctl),
            None => cfl_dt(f, ctl),
        };
        let mut dt = speed_state(&cloud, &fields);
        let last = t + dt * (1.0 + 1e-9) >= t_end;
        if last {
            dt = t_end - t;
        }
        match cloud.as_mut() {
            Some(c) => {
                let (next, merged) = cloud_step(c, dt, t)?;
                *c = next;
                traj.merges += merged;
            }
            None => fields = rk4_fields(&fields, dt, &mut ws)?,
        }
        t = if last { t_end } else { t + dt };
        traj.steps += 1;
        if last || traj.steps.is_multiple_of(ctl.record_every) {
            let snap = match &cloud {
                Some(c) => State::from_cloud(grid, c.clone(), t),
                None => {
                    let mut f = fields.clone();
                    f.t = t;
                    f
                }
            };
            let rec = record(&snap);
            if ![rec.e_u, rec.e_v, rec.h, rec.f].iter().all(|v| v.is_finite()) {
                return Err(blow_up(t, "non-finite functionals"));
            }
            on_snapshot(&snap, &rec)?;
            traj.states.push(snap);
            traj.records.push(rec);
        }
        if last {
            break;
        }
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Characteristics.

/// A path of `q' = (uv)(t, q)` together with the stretch and momentum
/// exponents integrated along it.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicPath {
    pub x_seed: f64,
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    /// Stretch from neighbouring seeds at `x_seed ± dx/2`.
    pub qx_fd: Vec<f64>,
    /// `exp(∫ (uv)_x ds)` along the path.
    pub qx_exp: Vec<f64>,
    /// `∫ (2 v u_x + u v_x) ds` along the path.
    pub decay_m: Vec<f64>,
    /// `∫ (2 u v_x + v u_x) ds` along the path.
    pub decay_n: Vec<f64>,
}

/// Node fields sampled once per snapshot: `uv`, `(uv)_x` and the two decay
/// rates.
struct FlowFields {
    x_left: f64,
    dx: f64,
    vals: [Vec<f64>; 4],
}

impl FlowFields {
    fn of(s: &State) -> FlowFields {
        let g = s.grid();
        let (u, v) = (s.u.values(), s.v.values());
        let ux = s.u.slopes().mean();
        let vx = s.v.slopes().mean();
        let n = g.n();
        let mut vals = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for k in 0..n {
            vals[0][k] = u[k] * v[k];
            vals[1][k] = ux[k] * v[k] + u[k] * vx[k];
            vals[2][k] = 2.0 * v[k] * ux[k] + u[k] * vx[k];
            vals[3][k] = 2.0 * u[k] * vx[k] + v[k] * ux[k];
        }
        FlowFields {
            x_left: g.x_left(),
            dx: g.dx(),
            vals,
        }
    }

    fn at(&self, x: f64) -> [f64; 4] {
        let n = self.vals[0].len();
        let r = (x - self.x_left) / self.dx;
        let k = (r.floor().max(0.0) as usize).min(n - 2);
        let s = r - k as f64;
        let mut out = [0.0; 4];
        for (o, f) in out.iter_mut().zip(&self.vals) {
            *o = (1.0 - s) * f[k] + s * f[k + 1];
        }
        out
    }
}

/// RK4 substeps per snapshot interval.
const PATH_SUBSTEPS: usize = 4;

/// Integrates the flow from each seed through all snapshots, with `uv`
/// interpolated linearly in `x` and in `t`.
pub fn characteristics(traj: &Trajectory, x_seeds: &[f64]) -> Result<Vec<CharacteristicPath>> {
    if traj.states.len() < 2 {
        return Err(Error::Config("characteristics need at least two snapshots".into()));
    }
    let grid = traj.grid();
    let flows: Vec<FlowFields> = traj.states.iter().map(FlowFields::of).collect();
    let times = traj.times();
    let eta = 0.5 * grid.dx();

    // State: [q, q-, q+, ∫(uv)_x, ∫ decay_m, ∫ decay_n].
    let rate = |k: usize, theta: f64, y: &[f64; 6], seed: f64, t: f64| -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        for (i, &x) in y[..3].iter().enumerate() {
            if !grid.contains(x) {
                return Err(Error::PathExit { seed, t });
            }
            let a = flows[k].at(x);
            let b = flows[k + 1].at(x);
            let f = |j: usize| (1.0 - theta) * a[j] + theta * b[j];
            out[i] = f(0);
            if i == 0 {
                out[3] = f(1);
                out[4] = f(2);
                out[5] = f(3);
            }
        }
        Ok(out)
    };

    x_seeds
        .iter()
        .map(|&seed| {
            let mut y = [seed, seed - eta, seed + eta, 0.0, 0.0, 0.0];
            let mut path = CharacteristicPath {
                x_seed: seed,
                times: times.clone(),
                q: vec![seed],
                qx_fd: vec![1.0],
                qx_exp: vec![1.0],
                decay_m: vec![0.0],
                decay_n: vec![0.0],
            };
            for k in 0..times.len() - 1 {
                let span = times[k + 1] - times[k];
                let h = span / PATH_SUBSTEPS as f64;
                for sub in 0..PATH_SUBSTEPS {
                    let th0 = sub as f64 / PATH_SUBSTEPS as f64;
                    let th_h = 1.0 / PATH_SUBSTEPS as f64;
                    let t = times[k] + th0 * span;
                    let add = |y: &[f64; 6], d: &[f64; 6], s: f64| {
                        let mut o = *y;
                        for i in 0..6 {
                            o[i] += s * d[i];
                        }
                        o
                    };
                    let k1 = rate(k, th0, &y, seed, t)?;
                    let k2 = rate(k, th0 + 0.5 * th_h, &add(&y, &k1, 0.5 * h), seed, t)?;
                    let k3 = rate(k, th0 + 0.5 * th_h, &add(&y, &k2, 0.5 * h), seed, t)?;
                    let k4 = rate(k, th0 + th_h, &add(&y, &k3, h), seed, t)?;
                    for i in 0..6 {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                if !grid.contains(y[0]) {
                    return Err(Error::PathExit {
                        seed,
                        t: times[k + 1],
                    });
                }
                path.q.push(y[0]);
                path.qx_fd.push((y[2] - y[1]) / (2.0 * eta));
                path.qx_exp.push(y[3].exp());
                path.decay_m.push(y[4]);
                path.decay_n.push(y[5]);
            }
            Ok(path)
        })
        .collect()
}

/// Momenta along characteristics compared with
/// `m(t, q) = m0 · exp(-∫ (2 v u_x + u v_x))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumReport {
    /// Largest `|measured / predicted - 1|` over paths, times and both
    /// components.
    pub max_deviation: f64,
    pub per_path: Vec<f64>,
    pub min_m: f64,
    pub min_n: f64,
    /// Seeds skipped because the initial momentum is (nearly) zero there.
    pub skipped: Vec<f64>,
}

fn interp(f: &Field, x: f64) -> f64 {
    let g = f.grid();
    let r = (x - g.x_left()) / g.dx();
    let k = (r.floor().max(0.0) as usize).min(g.n() - 2);
    let s = r - k as f64;
    (1.0 - s) * f.values()[k] + s * f.values()[k + 1]
}

pub fn momentum_along_flow(traj: &Trajectory, paths: &[CharacteristicPath]) -> MomentumReport {
    let moms: Vec<(Field, Field)> = traj.states.iter().map(momentum).collect();
    let peak = moms[0].0.max_abs().max(moms[0].1.max_abs());
    let mut rep = MomentumReport {
        min_m: f64::INFINITY,
        min_n: f64::INFINITY,
        ..Default::default()
    };
    for p in paths {
        let m0 = interp(&moms[0].0, p.x_seed);
        let n0 = interp(&moms[0].1, p.x_seed);
        if m0 <= 1e-8 * peak || n0 <= 1e-8 * peak {
            rep.skipped.push(p.x_seed);
            continue;
        }
        let mut dev: f64 = 0.0;
        for k in 0..p.q.len() {
            let m = interp(&moms[k].0, p.q[k]);
            let n = interp(&moms[k].1, p.q[k]);
            rep.min_m = rep.min_m.min(m);
            rep.min_n = rep.min_n.min(n);
            dev = dev
                .max((m / (m0 * (-p.decay_m[k]).exp()) - 1.0).abs())
                .max((n / (n0 * (-p.decay_n[k]).exp()) - 1.0).abs());
        }
        rep.max_deviation = rep.max_deviation.max(dev);
        rep.per_path.push(dev);
    }
    if rep.min_m == f64::INFINITY {
        rep.min_m = 0.0;
        rep.min_n = 0.0;
    }
    rep
}

// ---------------------------------------------------------------------------
// Virial balance for a fixed weight.

/// `∫(u²+u_x²)g`, `∫(v²+v_x²)g`, `∫(uv+u_xv_x)g`.
pub fn weighted_energies(s: &State, g: &dyn Fn(f64) -> f64) -> [f64; 3] {
    let d = Samples::of(s).weighted(g);
    [d.e_u, d.e_v, d.h]
}

/// Right-hand sides of the weighted-energy balances for a fixed weight with
/// derivative `gp`:
///
/// `d/dt ∫(u²+u_x²)g = ∫ u [u_x² v + 2P*(A_u) + P_x*(u_x² v_x)] g'` with
/// `A_u = u_x²v/2 + u u_x v_x + u²v`, its mirror for `v`, and
/// `d/dt ∫(uv+u_xv_x)g = ∫ u [v u_x v_x + P*(A_v) + P_x*(v_x²u_x/2)] g'
/// + ∫ v [P*(A_u) + P_x*(u_x²v_x/2)] g'`.
pub fn virial_rhs(s: &State, gp: &dyn Fn(f64) -> f64) -> [f64; 3] {
    let smp = Samples::of(s);
    let n = smp.len();
    let (u, ux, v, vx) = (&smp.u, &smp.ux, &smp.v, &smp.vx);
    let conv = |f: Vec<f64>| convolve_nonuniform(&smp.x, &f, &f);
    let a_u: Vec<f64> = (0..n)
        .map(|k| 0.5 * ux[k] * ux[k] * v[k] + u[k] * ux[k] * vx[k] + u[k] * u[k] * v[k])
        .collect();
    let a_v: Vec<f64> = (0..n)
        .map(|k| 0.5 * vx[k] * vx[k] * u[k] + v[k] * vx[k] * ux[k] + v[k] * v[k] * u[k])
        .collect();
    let (pa_u, _) = conv(a_u);
    let (pa_v, _) = conv(a_v);
    let (_, pb_u) = conv((0..n).map(|k| 0.5 * ux[k] * ux[k] * vx[k]).collect());
    let (_, pb_v) = conv((0..n).map(|k| 0.5 * vx[k] * vx[k] * ux[k]).collect());
    let mut out = [0.0; 3];
    for k in 0..n {
        let w = smp.w[k] * gp(smp.x[k]);
        if w == 0.0 {
            continue;
        }
        let cu = pa_u[k] + pb_u[k];
        let cv = pa_v[k] + pb_v[k];
        out[0] += w * u[k] * (ux[k] * ux[k] * v[k] + 2.0 * cu);
        out[1] += w * v[k] * (vx[k] * vx[k] * u[k] + 2.0 * cv);
        out[2] += w * (u[k] * (v[k] * ux[k] * vx[k] + cv) + v[k] * cu);
    }
    out
}

/// Weighted energies and the virial right-hand sides at one snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirialSample {
    pub t: f64,
    /// Three-point time derivative of the weighted energies.
    pub lhs: [f64; 3],
    pub rhs: [f64; 3],
}

/// Compares the time derivative of the weighted energies (three-point
/// differences over neighbouring snapshots) with [`virial_rhs`] at every
/// interior snapshot.
pub fn virial_check(traj: &Trajectory, g: &dyn Fn(f64) -> f64, gp: &dyn Fn(f64) -> f64) -> Vec<VirialSample> {
    let w: Vec<[f64; 3]> = traj.states.iter().map(|s| weighted_energies(s, g)).collect();
    let t = traj.times();
    (1..t.len().saturating_sub(1))
        .map(|k| {
            let (h1, h2) = (t[k] - t[k - 1], t[k + 1] - t[k]);
            let mut lhs = [0.0; 3];
            for i in 0..3 {
                lhs[i] = (h1 * h1 * w[k + 1][i] - h2 * h2 * w[k - 1][i] - (h1 * h1 - h2 * h2) * w[k][i])
                    / (h1 * h2 * (h1 + h2));
            }
            VirialSample {
                t: t[k],
                lhs,
                rhs: virial_rhs(&traj.states[k], gp),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{energy_u, psi, psi_derivatives};
    use crate::grid::make_grid;
    use crate::profiles::{exact_peakon_pair, mollified_peakon_pair, MollifierSpec, PeakonSpec};

    fn grid() -> Grid {
        make_grid(-40.0, 40.0, 4097).unwrap()
    }

    #[test]
    fn zero_state_is_stationary() {
        let g = make_grid(-10.0, 10.0, 201).unwrap();
        let z = State::zero(g);
        let mut ws = KernelWorkspace::new(g);
        let (du, dv) = rhs(&z, &mut ws);
        assert_eq!(du.max_abs(), 0.0);
        assert_eq!(dv.max_abs(), 0.0);
        let s = step_rk4(&z, 0.1, &mut ws).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        assert_eq!(s.t, 0.1);
        let ctl = StepControl::default();
        assert_eq!(cfl_dt(&z, &ctl), ctl.dt_max);
    }

    #[test]
    fn cfl_examples() {
        let g = make_grid(-10.0, 10.0, 1001).unwrap();
        let ctl = StepControl {
            dt_max: 1.0,
            ..Default::default()
        };
        let s = exact_peakon_pair(&PeakonSpec::new(1.0, 1.0, 0.0).unwrap(), g).unwrap();
        assert!((cfl_dt(&s, &ctl) - 0.006).abs() < 1e-15);
        let s2 = exact_peakon_pair(&PeakonSpec::new(2.0, 2.0, 0.0).unwrap(), g).unwrap();
        assert!((cfl_dt(&s2, &ctl) - 0.0015).abs() < 1e-15);
    }

    #[test]
    fn symmetric_rhs_is_symmetric() {
        let g = make_grid(-20.0, 20.0, 801).unwrap();
        let u = g.sample(|x| (-(x * x)).exp() + 0.2 * (-(x - 2.0).powi(2)).exp());
        let s = State::new(u.clone(), u, 0.0).unwrap();
        let (du, dv) = rhs(&s, &mut KernelWorkspace::new(g));
        assert_eq!(du.values(), dv.values());
    }

    #[test]
    fn mollified_rhs_is_transport() {
        let g = grid();
        let s = mollified_peakon_pair(
            &PeakonSpec::new(1.0, 1.0, 0.0).unwrap(),
            &MollifierSpec::new(0.2).unwrap(),
            g,
        )
        .unwrap();
        let c = crate::grid::crest(&s).m;
        let (du, _) = rhs(&s.grid_only(), &mut KernelWorkspace::new(g));
        let ux = derivative(&s.u);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..g.n() {
            let x = g.x(k);
            if x.abs() > 0.8 && x.abs() < 20.0 {
                let r = du.values()[k] + c * ux.values()[k];
                num += r * r;
                den += (c * ux.values()[k]).powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.05, "{}", (num / den).sqrt());
    }

    #[test]
    fn exact_peakon_travels_at_its_speed() {
        let g = grid();
        let s = exact_peakon_pair(&PeakonSpec::new(1.0, 2.0, -5.0).unwrap(), g).unwrap();
        let ctl = StepControl {
            t_end: 3.0,
            ..Default::default()
        };
        let tr = simulate(&s, &ctl).unwrap();
        let last = tr.states.last().unwrap();
        let c = last.cloud.as_ref().unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.positions()[0] - 1.0).abs() < 1e-12);
        assert!((energy_u(last) - 2.0).abs() < 1e-13);
        assert_eq!(last.t, 3.0);
    }

    #[test]
    fn zero_horizon_keeps_initial_state() {
        let g = grid();
        let s = exact_peakon_pair(&PeakonSpec::new(1.0, 1.0, 0.0).unwrap(), g).unwrap();
        let ctl = StepControl {
            t_end: 0.0,
            ..Default::default()
        };
        let tr = simulate(&s, &ctl).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.records.len(), 1);
    }

    #[test]
    fn eulerian_rk4_converges_at_fourth_order() {
        let g = make_grid(-20.0, 20.0, 401).unwrap();
        let u = g.sample(|x| 0.3 * (-(x * x) / 4.0).exp());
        let v = g.sample(|x| 0.2 * (-(x * x) / 4.0).exp());
        let s = State::new(u, v, 0.0).unwrap();
        let mut ws = KernelWorkspace::new(g);
        let run = |dt: f64, ws: &mut KernelWorkspace| {
            let mut st = s.clone();
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                st = step_rk4(&st, dt, ws).unwrap();
            }
            st
        };
        let reference = run(0.2 / 8.0, &mut ws);
        let err = |st: &State| {
            st.u.values()
                .iter()
                .zip(reference.u.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let e1 = err(&run(0.2, &mut ws));
        let e2 = err(&run(0.1, &mut ws));
        let ratio = e1 / e2;
        assert!(ratio > 16.0 * 0.7 && ratio < 16.0 * 1.3, "ratio {ratio}");
    }

    #[test]
    fn characteristics_of_constant_and_frozen_speed() {
        let g = make_grid(-10.0, 10.0, 201).unwrap();
        let one = g.sample(|_| 1.0);
        let half = g.sample(|_| 0.5);
        let mk = |t: f64| State::new(one.clone(), half.clone(), t).unwrap();
        let traj = Trajectory {
            states: vec![mk(0.0), mk(1.0), mk(2.0)],
            records: vec![],
            steps: 2,
            merges: 0,
        };
        let p = characteristics(&traj, &[0.0, -3.0]).unwrap();
        assert!((p[0].q[2] - 1.0).abs() < 1e-12);
        assert!((p[1].q[1] + 2.5).abs() < 1e-12);
        assert!(p[0].qx_fd.iter().all(|q| (q - 1.0).abs() < 1e-12));
        assert!(p[0].qx_exp.iter().all(|q| (q - 1.0).abs() < 1e-12));

        let z = State::zero(g);
        let mut z1 = z.clone();
        z1.t = 1.0;
        let traj = Trajectory {
            states: vec![z, z1],
            records: vec![],
            steps: 1,
            merges: 0,
        };
        let p = characteristics(&traj, &[2.0]).unwrap();
        assert_eq!(p[0].q, vec![2.0, 2.0]);
        let rep = momentum_along_flow(&traj, &p);
        assert_eq!(rep.max_deviation, 0.0);
    }

    #[test]
    fn path_leaving_grid_is_an_error() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let one = g.sample(|_| 1.0);
        let traj = Trajectory {
            states: vec![
                State::new(one.clone(), one.clone(), 0.0).unwrap(),
                State::new(one.clone(), one, 5.0).unwrap(),
            ],
            records: vec![],
            steps: 1,
            merges: 0,
        };
        assert!(matches!(
            characteristics(&traj, &[0.0]),
            Err(Error::PathExit { .. })
        ));
    }

    #[test]
    fn virial_balance_on_a_two_peak_cloud() {
        let g = grid();
        let s = mollified_peakon_pair(
            &PeakonSpec::new(1.0, 1.5, -3.0).unwrap(),
            &MollifierSpec::new(0.3).unwrap(),
            g,
        )
        .unwrap();
        let ctl = StepControl {
            t_end: 0.5,
            record_every: 2,
            ..Default::default()
        };
        let tr = simulate(&s, &ctl).unwrap();
        let k = 1.5;
        let gw = |x: f64| psi((x + 2.0) / k);
        let gp = |x: f64| psi_derivatives((x + 2.0) / k).0 / k;
        let v = virial_check(&tr, &gw, &gp);
        let scale = v
            .iter()
            .flat_map(|s| s.rhs)
            .fold(0.0_f64, |m, r| m.max(r.abs()));
        for smp in &v[..v.len() - 1] {
            for i in 0..3 {
                assert!(
                    (smp.lhs[i] - smp.rhs[i]).abs() < 1e-3 * scale,
                    "t {} comp {i}: {} vs {}",
                    smp.t,
                    smp.lhs[i],
                    smp.rhs[i]
                );
            }
        }
    }
}
