//! Initial data: exact peakon pairs, mollified pairs, trains and
//! sign-preserving momentum perturbations.
//!
//! Every generator works in momentum space and returns a cloud-backed state,
//! so `m, n ≥ 0` holds by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::kernel::helmholtz_forward;

/// Peakon pair `(a e^{-|x-x0|}, b e^{-|x-x0|})` moving at `c = ab`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakonSpec {
    pub a: f64,
    pub b: f64,
    pub x0: f64,
}

impl PeakonSpec {
    pub fn new(a: f64, b: f64, x0: f64) -> Result<Self> {
        let s = PeakonSpec { a, b, x0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) || !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Profile(format!(
                "amplitudes must be positive and finite, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::Profile("crest position must be finite".into()));
        }
        Ok(())
    }

    pub fn c(&self) -> f64 {
        self.a * self.b
    }
}

/// Ordered peakons with minimal separation `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub peakons: Vec<PeakonSpec>,
    pub l: f64,
}

impl TrainSpec {
    pub fn new(peakons: Vec<PeakonSpec>, l: f64) -> Result<Self> {
        let t = TrainSpec { peakons, l };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.peakons.is_empty() {
            return Err(Error::Profile("train needs at least one peakon".into()));
        }
        if !(self.l > 0.0) {
            return Err(Error::Profile(format!("separation L = {} must be positive", self.l)));
        }
        for (i, p) in self.peakons.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::Profile(format!("peakons[{i}]: {e}")))?;
        }
        for i in 1..self.peakons.len() {
            let (p, q) = (&self.peakons[i - 1], &self.peakons[i]);
            if q.a <= p.a {
                return Err(Error::Profile(format!(
                    "peakons[{i}].a = {} must exceed peakons[{}].a = {}",
                    q.a,
                    i - 1,
                    p.a
                )));
            }
            if q.b <= p.b {
                return Err(Error::Profile(format!(
                    "peakons[{i}].b = {} must exceed peakons[{}].b = {}",
                    q.b,
                    i - 1,
                    p.b
                )));
            }
            if q.x0 - p.x0 < self.l {
                return Err(Error::Profile(format!(
                    "peakons[{i}] sits {} from its predecessor, below L = {}",
                    q.x0 - p.x0,
                    self.l
                )));
            }
        }
        Ok(())
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.peakons.iter().map(PeakonSpec::c).collect()
    }

    /// `σ0 = min(c_1, c_2 - c_1, ..., c_N - c_{N-1}) / 4`.
    pub fn sigma0(&self) -> f64 {
        let c = self.speeds();
        let mut m = c[0];
        for i in 1..c.len() {
            m = m.min(c[i] - c[i - 1]);
        }
        0.25 * m
    }
}

/// Width of the momentum bump used for mollified data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub w: f64,
}

impl MollifierSpec {
    pub fn new(w: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Profile(format!("mollifier width w = {w} must be positive")));
        }
        Ok(MollifierSpec { w })
    }
}

/// Nodal truncated Gaussian of width `w` (support `8w`) with trapezoid mass
/// `mass`.
fn bump(grid: Grid, x0: f64, w: f64, mass: f64) -> Result<Vec<f64>> {
    let mut m = vec![0.0; grid.n()];
    let mut total = 0.0;
    let mut count = 0;
    for (k, mk) in m.iter_mut().enumerate() {
        let r = (grid.x(k) - x0) / w;
        if r.abs() <= 4.0 {
            *mk = (-0.5 * r * r).exp();
            total += grid.trapezoid_weight(k) * grid.dx() * *mk;
            count += 1;
        }
    }
    if count < 5 {
        return Err(Error::Profile(format!(
            "bump of width {w} at {x0} covers {count} nodes; it must cover at least 5"
        )));
    }
    for mk in m.iter_mut() {
        *mk *= mass / total;
    }
    Ok(m)
}

/// `u = a e^{-|x-x0|}`, `v = b e^{-|x-x0|}` at `t = 0`.
pub fn exact_peakon_pair(spec: &PeakonSpec, grid: Grid) -> Result<State> {
    spec.validate()?;
    Ok(State::from_cloud(grid, Cloud::peakon(spec.x0, spec.a, spec.b), 0.0))
}

fn mollified_cloud(spec: &PeakonSpec, moll: &MollifierSpec, grid: Grid) -> Result<Cloud> {
    spec.validate()?;
    let m = bump(grid, spec.x0, moll.w, 2.0 * spec.a)?;
    let n = bump(grid, spec.x0, moll.w, 2.0 * spec.b)?;
    Ok(Cloud::from_nodes(grid, &m, &n))
}

/// Momentum bumps of mass `2a`, `2b` and width `w` at `x0`; the fields are
/// their kernel convolutions.
pub fn mollified_peakon_pair(spec: &PeakonSpec, moll: &MollifierSpec, grid: Grid) -> Result<State> {
    Ok(State::from_cloud(grid, mollified_cloud(spec, moll, grid)?, 0.0))
}

/// Superposition of the train's peakons: mollified with `moll`, or exact
/// when `moll` is `None`.
pub fn train(ts: &TrainSpec, moll: Option<&MollifierSpec>, grid: Grid) -> Result<State> {
    ts.validate()?;
    let mut cloud = Cloud::empty();
    for p in &ts.peakons {
        let c = match moll {
            Some(w) => mollified_cloud(p, w, grid)?,
            None => Cloud::peakon(p.x0, p.a, p.b),
        };
        cloud = cloud.union(&c);
    }
    Ok(State::from_cloud(grid, cloud, 0.0))
}

/// The state's momentum cloud, rebuilt from the discrete Helmholtz operator
/// when the state is grid-only. Fails if the momenta are negative.
pub fn momentum_cloud(s: &State) -> Result<Cloud> {
    if let Some(c) = &s.cloud {
        if c.min_weight() < 0.0 {
            return Err(Error::Profile("state has negative momentum".into()));
        }
        return Ok(c.clone());
    }
    let m = helmholtz_forward(&s.u);
    let n = helmholtz_forward(&s.v);
    let scale = m.max_abs().max(n.max_abs()).max(f64::MIN_POSITIVE);
    if m.min() < -1e-8 * scale || n.min() < -1e-8 * scale {
        return Err(Error::Profile("state has negative momentum".into()));
    }
    let clip = |f: &crate::grid::Field| -> Vec<f64> { f.values().iter().map(|v| v.max(0.0)).collect() };
    Ok(Cloud::from_nodes(s.grid(), &clip(&m), &clip(&n)))
}

/// Bumps per component added by [`perturb_momentum`].
const PERTURBATION_BUMPS: usize = 4;

/// Adds seeded nonnegative momentum bumps and rescales them so that
/// `‖Δu‖_{H¹} + ‖Δv‖_{H¹} = amplitude`.
///
/// Bump centres are drawn within 2 units of the occupied part of the cloud,
/// widths in `[0.15, 0.35]`, relative masses in `[0.2, 1]`.
pub fn perturb_momentum(s: &State, amplitude: f64, seed: u64) -> Result<State> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::Profile(format!(
            "perturbation amplitude {amplitude} must be finite and nonnegative"
        )));
    }
    let base = momentum_cloud(s)?;
    if amplitude == 0.0 {
        return Ok(s.clone());
    }
    let grid = s.grid();
    let wmax = base
        .mu()
        .iter()
        .chain(base.nu())
        .fold(0.0_f64, |m, v| m.max(*v));
    let occupied: Vec<f64> = base
        .particles()
        .filter(|(_, a, b)| a.max(*b) > 1e-3 * wmax)
        .map(|p| p.0)
        .collect();
    let (lo, hi) = match (occupied.first(), occupied.last()) {
        (Some(a), Some(b)) => (*a - 2.0, *b + 2.0),
        _ => (-2.0, 2.0),
    };
    let margin = 2.0;
    let lo = lo.max(grid.x_left() + margin);
    let hi = hi.min(grid.x_right() - margin);
    if lo >= hi {
        return Err(Error::Profile("grid too small to place perturbation bumps".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dm = vec![0.0; grid.n()];
    let mut dn = vec![0.0; grid.n()];
    for target in [&mut dm, &mut dn] {
        for _ in 0..PERTURBATION_BUMPS {
            let x0 = rng.gen_range(lo..hi);
            let w = rng.gen_range(0.15..0.35);
            let mass = rng.gen_range(0.2..1.0);
            let b = bump(grid, x0, w, mass)?;
            for (t, v) in target.iter_mut().zip(b) {
                *t += v;
            }
        }
    }
    let delta = Cloud::from_nodes(grid, &dm, &dn);
    let (eu, ev, _) = delta.quadratic_invariants();
    let size = eu.sqrt() + ev.sqrt();
    let cloud = base.union(&delta.scaled(amplitude / size));
    if cloud.min_weight() < 0.0 {
        return Err(Error::Profile(
            "perturbation cannot keep the momenta nonnegative".into(),
        ));
    }
    let mut out = State::from_cloud(grid, cloud, s.t);
    out.t = s.t;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{h1_inner, make_grid, Field};

    fn grid() -> Grid {
        make_grid(-40.0, 40.0, 4097).unwrap()
    }

    #[test]
    fn exact_pair_values() {
        let g = grid();
        let s = exact_peakon_pair(&PeakonSpec::new(2.0, 1.0, 0.0).unwrap(), g).unwrap();
        let k0 = g.nearest(0.0);
        let k1 = g.nearest(1.0);
        assert_eq!(s.u.values()[k0], 2.0);
        assert_eq!(s.v.values()[k0], 1.0);
        let x1 = g.x(k1);
        assert!((s.u.values()[k1] - 2.0 * (-x1.abs()).exp()).abs() < 1e-15);
        let g = make_grid(-4.0, 4.0, 801).unwrap();
        let s = exact_peakon_pair(&PeakonSpec::new(2.0, 1.0, 0.0).unwrap(), g).unwrap();
        assert!((s.u.values()[500] - 2.0 * (-1.0_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn mollified_pair_is_positive_and_below_amplitude() {
        let g = grid();
        let spec = PeakonSpec::new(1.0, 1.0, 0.0).unwrap();
        let s = mollified_peakon_pair(&spec, &MollifierSpec::new(0.2).unwrap(), g).unwrap();
        let c = s.cloud.as_ref().unwrap();
        assert!(c.min_weight() >= 0.0);
        assert!((c.total_mass().0 - 2.0).abs() < 1e-13);
        assert!(s.u.max() <= 1.0);
    }

    #[test]
    fn train_with_one_peakon_is_the_pair() {
        let g = grid();
        let p = PeakonSpec::new(1.0, 2.0, 3.0).unwrap();
        let w = MollifierSpec::new(0.2).unwrap();
        let t = train(&TrainSpec::new(vec![p], 25.0).unwrap(), Some(&w), g).unwrap();
        let s = mollified_peakon_pair(&p, &w, g).unwrap();
        assert_eq!(t.u.values(), s.u.values());
        assert_eq!(t.v.values(), s.v.values());
    }

    #[test]
    fn train_rejects_bad_order() {
        let p1 = PeakonSpec::new(2.0, 2.0, -12.5).unwrap();
        let p2 = PeakonSpec::new(1.0, 3.0, 12.5).unwrap();
        let e = TrainSpec::new(vec![p1, p2], 25.0).unwrap_err();
        assert!(e.to_string().contains("peakons[1].a"));
        let p2 = PeakonSpec::new(3.0, 3.0, 0.0).unwrap();
        assert!(TrainSpec::new(vec![p1, p2], 25.0).is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let g = grid();
        let s = mollified_peakon_pair(
            &PeakonSpec::new(1.0, 1.0, 0.0).unwrap(),
            &MollifierSpec::new(0.2).unwrap(),
            g,
        )
        .unwrap();
        let p = perturb_momentum(&s, 0.0, 3).unwrap();
        assert_eq!(p.u.values(), s.u.values());
    }

    #[test]
    fn perturbation_has_requested_size() {
        let g = grid();
        let s = mollified_peakon_pair(
            &PeakonSpec::new(1.0, 1.0, 0.0).unwrap(),
            &MollifierSpec::new(0.2).unwrap(),
            g,
        )
        .unwrap();
        let p = perturb_momentum(&s, 0.05, 1).unwrap();
        assert!(p.cloud.as_ref().unwrap().min_weight() >= 0.0);
        let du = Field::new(
            g,
            p.u.values().iter().zip(s.u.values()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let dv = Field::new(
            g,
            p.v.values().iter().zip(s.v.values()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let d = h1_inner(&du, &du).unwrap().sqrt() + h1_inner(&dv, &dv).unwrap().sqrt();
        assert!((0.049..=0.051).contains(&d), "distance {d}");
    }

    #[test]
    fn perturbation_is_deterministic() {
        let g = grid();
        let s = exact_peakon_pair(&PeakonSpec::new(1.0, 1.0, 0.0).unwrap(), g).unwrap();
        let a = perturb_momentum(&s, 0.04, 9).unwrap();
        let b = perturb_momentum(&s, 0.04, 9).unwrap();
        assert_eq!(a.cloud, b.cloud);
        let c = perturb_momentum(&s, 0.04, 10).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }
}
