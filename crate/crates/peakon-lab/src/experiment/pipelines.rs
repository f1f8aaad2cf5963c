//! The four experiment pipelines and the sweep driver.
//!
//! Every pipeline writes into its own output directory and always leaves a
//! `summary.toml` behind, also when a module error stops it early.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{FuzzConfig, InitialConfig, LadderConfig, RunConfig, TrainConfig};
use super::output::{ensure_dir, write_snapshot, Summary, TableWriter, TIMESERIES_HEADER};
use crate::cloud::Cloud;
use crate::error::{Error, Result};
use crate::evolution::{simulate_with, virial_check, Trajectory};
use crate::functionals::{
    build_weight, energy_u, energy_v, momentum, partition_phi, psi, psi_derivatives,
    FunctionalRecord, WeightCertificate,
};
use crate::grid::{crest, make_grid, Grid, State};
use crate::profiles::{
    exact_peakon_pair, mollified_peakon_pair, perturb_momentum, train, MollifierSpec, PeakonSpec,
    TrainSpec,
};
use crate::stability::{
    identity_g1g2, identity_h, key_inequality, monotonicity_report, peak_gap,
    pointwise_energy_identity, stability_record, train_diagnostics,
};

/// Where a pipeline writes and whether it talks.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            quiet: true,
        }
    }

    fn sub(&self, name: &str) -> RunOptions {
        RunOptions {
            out: self.out.join(name),
            quiet: self.quiet,
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Directory and summary of a finished (or failed) run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: Summary,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.summary.all_passed
    }

    pub fn timeseries_path(&self) -> PathBuf {
        self.dir.join("timeseries.csv")
    }
}

/// Builds the initial state described by `init`.
pub fn build_initial(init: &InitialConfig, grid: Grid, seed: u64) -> Result<State> {
    match init {
        InitialConfig::Exact { a, b, x0 } => exact_peakon_pair(&PeakonSpec::new(*a, *b, *x0)?, grid),
        InitialConfig::Mollified { a, b, x0, w } => mollified_peakon_pair(
            &PeakonSpec::new(*a, *b, *x0)?,
            &MollifierSpec::new(*w)?,
            grid,
        ),
        InitialConfig::Train {
            peakons,
            l,
            mollified,
            w,
        } => {
            let ts = TrainSpec::new(peakons.clone(), *l)?;
            let moll = if *mollified { Some(MollifierSpec::new(*w)?) } else { None };
            train(&ts, moll.as_ref(), grid)
        }
        InitialConfig::Perturbed { amplitude, base } => {
            perturb_momentum(&build_initial(base, grid, seed)?, *amplitude, seed)
        }
    }
}

/// Runs `body` with a fresh summary, then closes and writes the summary
/// whatever the outcome.
fn with_summary(
    command: &str,
    cfg: &RunConfig,
    opts: &RunOptions,
    body: impl FnOnce(&mut Summary) -> Result<()>,
) -> Result<RunOutput> {
    ensure_dir(&opts.out)?;
    let cfg_path = opts.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let start = Instant::now();
    let mut summary = Summary::new(command, cfg.hash());
    if let Err(e) = body(&mut summary) {
        opts.say(format!("{command}: {e}"));
        summary.fail(&e);
    }
    summary.finish(start.elapsed().as_secs_f64());
    summary.write(opts.out.join("summary.toml"))?;
    Ok(RunOutput {
        dir: opts.out.clone(),
        summary,
    })
}

// ---------------------------------------------------------------------------
// simulate

/// Running extrema over the diagnostic records of one run.
#[derive(Clone, Debug)]
struct Monitor {
    first: Option<FunctionalRecord>,
    drift: [f64; 5],
    max_m0: f64,
    max_u0: f64,
    sign: f64,
    slope: f64,
    key: f64,
    gap_excess: f64,
    sup_dist: f64,
    sup_u_gap: f64,
    sup_v_gap: f64,
    sup_peak_gap: f64,
    records: usize,
}

impl Monitor {
    fn new() -> Self {
        Monitor {
            first: None,
            drift: [0.0; 5],
            max_m0: 0.0,
            max_u0: 0.0,
            sign: f64::NEG_INFINITY,
            slope: f64::NEG_INFINITY,
            key: f64::NEG_INFINITY,
            gap_excess: f64::NEG_INFINITY,
            sup_dist: 0.0,
            sup_u_gap: 0.0,
            sup_v_gap: 0.0,
            sup_peak_gap: 0.0,
            records: 0,
        }
    }
}

fn rel_drift(x: f64, x0: f64) -> f64 {
    let d = (x - x0).abs();
    if x0.abs() > 0.0 {
        d / x0.abs()
    } else {
        d
    }
}

/// Largest `|w_x| - w` over both traces of both components.
fn slope_excess(s: &State) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for f in [&s.u, &s.v] {
        let d = f.slopes();
        for (k, &w) in f.values().iter().enumerate() {
            worst = worst.max(d.left[k].abs() - w).max(d.right[k].abs() - w);
        }
    }
    worst
}

/// One time-series row and the monitor update for a snapshot.
fn observe(
    s: &State,
    rec: &FunctionalRecord,
    target: Option<&PeakonSpec>,
    mon: &mut Monitor,
) -> Result<Vec<f64>> {
    let (m, n) = momentum(s);
    let umax = s.u.max().max(s.v.max());
    if mon.first.is_none() {
        mon.first = Some(*rec);
        mon.max_m0 = m.max().max(n.max());
        mon.max_u0 = umax;
    }
    let r0 = mon.first.as_ref().unwrap();
    for (d, (x, x0)) in mon.drift.iter_mut().zip([
        (rec.e_u, r0.e_u),
        (rec.e_v, r0.e_v),
        (rec.h, r0.h),
        (rec.f, r0.f),
        (rec.e0, r0.e0),
    ]) {
        *d = d.max(rel_drift(x, x0));
    }
    let (min_m, min_n) = (m.min(), n.min());
    mon.sign = mon
        .sign
        .max(-min_m.min(min_n) / mon.max_m0.max(f64::MIN_POSITIVE));
    let excess = slope_excess(s);
    mon.slope = mon.slope.max(excess / mon.max_u0.max(f64::MIN_POSITIVE));
    let key = key_inequality(s);
    mon.key = mon.key.max(key / (1.0 + rec.f.abs()));
    mon.records += 1;

    let nan = f64::NAN;
    let (xi, mm, u_xi, v_xi, du, dv, dt, shift, gap, bound) = match target {
        Some(p) => {
            let st = stability_record(s, p.a, p.b)?;
            let pg = peak_gap(s, p.a, p.b);
            mon.sup_dist = mon.sup_dist.max(st.dist_total);
            mon.sup_u_gap = mon.sup_u_gap.max((st.u_at_xi - p.a).abs());
            mon.sup_v_gap = mon.sup_v_gap.max((st.v_at_xi - p.b).abs());
            mon.sup_peak_gap = mon.sup_peak_gap.max(pg.gap);
            mon.gap_excess = mon.gap_excess.max(pg.gap - pg.bound);
            (
                st.xi,
                st.m,
                st.u_at_xi,
                st.v_at_xi,
                st.dist_u,
                st.dist_v,
                st.dist_total,
                st.best_shift,
                pg.gap,
                pg.bound,
            )
        }
        None => {
            let c = crest(s);
            let (u, v) = match &s.cloud {
                Some(cl) => cl.value_at(c.xi),
                None => (s.u.values()[c.index], s.v.values()[c.index]),
            };
            (c.xi, c.m, u, v, nan, nan, nan, nan, nan, nan)
        }
    };
    Ok(vec![
        rec.t, rec.e_u, rec.e_v, rec.h, rec.f, rec.e0, xi, mm, u_xi, v_xi, du, dv, dt, shift, key,
        gap, bound, min_m, min_n, excess,
    ])
}

/// Integrates the configured initial data, streaming the time series and
/// snapshots into `opts.out`, and records the per-run assertions.
fn simulate_into(cfg: &RunConfig, opts: &RunOptions, summary: &mut Summary) -> Result<Trajectory> {
    let grid = cfg.grid.build()?;
    let initial = build_initial(&cfg.initial, grid, cfg.seed)?;
    let target = if cfg.diagnostics.stability {
        cfg.initial.target()
    } else {
        None
    };
    let mut table = TableWriter::create(opts.out.join("timeseries.csv"), &TIMESERIES_HEADER)?;
    let snap_dir = opts.out.join("snapshots");
    if cfg.output.snapshots {
        ensure_dir(&snap_dir)?;
    }
    let every = cfg.diagnostics.snapshot_every;
    let mut mon = Monitor::new();
    let mut last: Option<State> = None;
    let mut count = 0usize;
    let result = simulate_with(&initial, &cfg.step, |s, rec| {
        let row = observe(s, rec, target.as_ref(), &mut mon)?;
        table.row(&row)?;
        if cfg.output.snapshots && (count == 0 || (every > 0 && count.is_multiple_of(every))) {
            write_snapshot(&snap_dir, &format!("snap_{count:05}"), s)?;
        }
        count += 1;
        last = Some(s.clone());
        Ok(())
    });
    // The final snapshot is written even when the run stops early.
    if let (true, Some(s)) = (cfg.output.snapshots, &last) {
        write_snapshot(&snap_dir, "final", s)?;
    }
    let d = &cfg.diagnostics;
    let names = ["drift_E_u", "drift_E_v", "drift_H", "drift_F"];
    for (name, v) in names.iter().zip(mon.drift) {
        summary.check(*name, v, d.drift_tol);
    }
    summary.soft_check("drift_E0", mon.drift[4], d.e0_drift_tol);
    summary.check("sign_invariance", mon.sign, d.sign_tol);
    summary.check("slope_bound", mon.slope, d.slope_tol);
    summary.check("key_inequality", mon.key, d.key_tol);
    if target.is_some() {
        summary.check("peak_gap_mechanism", mon.gap_excess, d.peak_gap_slack);
        summary.fit("sup_dist_total", mon.sup_dist);
        summary.fit("sup_u_gap", mon.sup_u_gap);
        summary.fit("sup_v_gap", mon.sup_v_gap);
        summary.fit("sup_peak_gap", mon.sup_peak_gap);
    }
    summary.fit("records", mon.records as f64);
    let traj = result?;
    summary.fit("steps", traj.steps as f64);
    summary.fit("merges", traj.merges as f64);
    opts.say(format!(
        "{}: {} steps, {} records",
        opts.out.display(),
        traj.steps,
        traj.states.len()
    ));
    Ok(traj)
}

/// `simulate <config>`: one run with conservation, sign, slope, key
/// inequality and (for single-peakon data) orbital diagnostics.
pub fn run_simulate(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutput> {
    with_summary("simulate", cfg, opts, |summary| {
        simulate_into(cfg, opts, summary).map(|_| ())
    })
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Perturbation amplitude of the initial data.
    Delta,
    /// Grid size `n`; `dt` follows the CFL condition.
    GridN,
}

impl SweepAxis {
    fn label(&self, v: f64) -> String {
        match self {
            SweepAxis::Delta => format!("delta_{v}"),
            SweepAxis::GridN => format!("n_{v}"),
        }
    }

    fn apply(&self, cfg: &RunConfig, v: f64) -> Result<RunConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::Delta => c.initial = cfg.initial.with_amplitude(v),
            SweepAxis::GridN => {
                if !(v >= 1.0 && v.fract() == 0.0) {
                    return Err(Error::Config(format!("grid size {v} is not a positive integer")));
                }
                c.grid.n = v as usize;
            }
        }
        c.ladder = None;
        c.validate()?;
        Ok(c)
    }
}

/// Independent `simulate` runs over `values`, in parallel, each in its own
/// subdirectory. A failing member never affects the others.
pub fn sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    opts: &RunOptions,
) -> Vec<Result<RunOutput>> {
    values
        .par_iter()
        .map(|&v| {
            let c = axis.apply(cfg, v)?;
            run_simulate(&c, &opts.sub(&axis.label(v)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// stability-sweep

/// `max/min` of a list of positive ratios.
fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

pub const LADDER_HEADER: [&str; 8] = [
    "delta",
    "sup_dist_total",
    "sup_u_gap",
    "sup_v_gap",
    "sup_peak_gap",
    "dist_over_delta_quarter",
    "u_gap_over_delta_half",
    "v_gap_over_delta_half",
];

/// `stability-sweep <config>`: the δ-ladder with its scaling fit.
pub fn run_ladder(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutput> {
    let ladder = cfg.ladder.clone().unwrap_or_default();
    with_summary("stability-sweep", cfg, opts, |summary| {
        ladder_into(cfg, &ladder, opts, summary)
    })
}

fn ladder_into(
    cfg: &RunConfig,
    ladder: &LadderConfig,
    opts: &RunOptions,
    summary: &mut Summary,
) -> Result<()> {
    if cfg.initial.target().is_none() {
        return Err(Error::Config("the ladder needs single-peakon initial data".into()));
    }
    let runs = sweep(cfg, SweepAxis::Delta, &ladder.deltas, opts);
    let mut table = TableWriter::create(opts.out.join("ladder.csv"), &LADDER_HEADER)?;
    let mut rows = Vec::new();
    for (delta, run) in ladder.deltas.iter().zip(runs) {
        let run = run?;
        for a in &run.summary.assertions {
            let name = format!("delta_{delta}.{}", a.name);
            summary.push(name, a.value, a.tolerance, a.passed, a.soft);
        }
        if let Some(f) = &run.summary.failure {
            return Err(Error::Config(format!("sub-run delta = {delta} failed: {}", f.message)));
        }
        let get = |k: &str| run.summary.fitted.get(k).copied().unwrap_or(f64::NAN);
        let (dist, ug, vg, pg) = (
            get("sup_dist_total"),
            get("sup_u_gap"),
            get("sup_v_gap"),
            get("sup_peak_gap"),
        );
        let row = [
            *delta,
            dist,
            ug,
            vg,
            pg,
            dist / delta.powf(0.25),
            ug / delta.sqrt(),
            vg / delta.sqrt(),
        ];
        table.row(&row)?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i][0].total_cmp(&rows[j][0]));
    let worst_drop = order
        .windows(2)
        .map(|w| rows[w[0]][1] - rows[w[1]][1])
        .fold(0.0, f64::max);
    summary.check("dist_monotone_in_delta", worst_drop, 0.0);
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let names = [
        (5, "dist_quarter_spread", "A_dist"),
        (6, "u_gap_half_spread", "C_u"),
        (7, "v_gap_half_spread", "C_v"),
    ];
    for (c, check, fit) in names {
        let xs = col(c);
        summary.check(check, spread(&xs), ladder.spread);
        summary.fit(fit, xs.iter().sum::<f64>() / xs.len() as f64);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-identities

/// A seeded fuzz state: one to three mollified or exact peakon pairs,
/// sometimes with a momentum perturbation on top. All particles sit on
/// nodes of `grid`.
pub fn fuzz_state(grid: Grid, seed: u64, index: u64) -> Result<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let bumps = rng.gen_range(1..=3);
    let mut cloud = Cloud::empty();
    for _ in 0..bumps {
        // Crests sit on nodes so that every kink of the data is a node.
        let x0 = grid.x(grid.nearest(rng.gen_range(-15.0..15.0)));
        let p = PeakonSpec::new(rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0), x0)?;
        let s = if rng.gen_bool(0.25) {
            exact_peakon_pair(&p, grid)?
        } else {
            mollified_peakon_pair(&p, &MollifierSpec::new(rng.gen_range(0.1..0.5))?, grid)?
        };
        cloud = cloud.union(s.cloud.as_ref().unwrap());
    }
    let s = State::from_cloud(grid, cloud, 0.0);
    if rng.gen_bool(0.5) {
        let amp = rng.gen_range(0.0..0.1);
        perturb_momentum(&s, amp, rng.gen())
    } else {
        Ok(s)
    }
}

/// A refinement-study state: an exact peakon crest on a node of `grid` plus
/// a seeded perturbation. Grids refined by halving keep every kink on a
/// node.
pub fn kinked_state(grid: Grid, seed: u64, index: u64) -> Result<Cloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ REFINE_STREAM);
    rng.set_stream(index);
    let x0 = grid.x(grid.nearest(rng.gen_range(-1.0..1.0)));
    let p = PeakonSpec::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), x0)?;
    let s = perturb_momentum(&exact_peakon_pair(&p, grid)?, 0.05, rng.gen())?;
    Ok(s.cloud.expect("generated states carry clouds"))
}

/// Offsets that decorrelate the `ξ` draws and the refinement states from
/// the fuzz states.
const XI_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const REFINE_STREAM: u64 = 0x5eed;

pub const FUZZ_HEADER: [&str; 7] = [
    "state",
    "particles",
    "pointwise_residual",
    "g1g2_residual",
    "h_residual",
    "key_inequality",
    "F",
];

pub const REFINE_HEADER: [&str; 5] = ["state", "n", "dx", "g1g2_residual", "h_residual"];

/// Slope of `log r` against `log dx`.
fn observed_order(dx: &[f64], r: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = dx.iter().zip(r).map(|(d, r)| (d.ln(), r.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `verify-identities <config>`: pointwise identity at random `ξ`, the two
/// split identities, the key inequality and the refinement study.
pub fn run_identities(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutput> {
    let fuzz = cfg.fuzz.clone().unwrap_or_default();
    with_summary("verify-identities", cfg, opts, |summary| {
        identities_into(cfg, &fuzz, opts, summary)
    })
}

fn identities_into(
    cfg: &RunConfig,
    fuzz: &FuzzConfig,
    opts: &RunOptions,
    summary: &mut Summary,
) -> Result<()> {
    let grid = cfg.grid.build()?;
    let rows: Vec<Result<[f64; 7]>> = (0..fuzz.states)
        .into_par_iter()
        .map(|i| {
            let s = fuzz_state(grid, cfg.seed, i as u64)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ XI_STREAM);
            rng.set_stream(i as u64);
            let (eu, ev) = (energy_u(&s), energy_v(&s));
            let mut worst: f64 = 0.0;
            for _ in 0..fuzz.xi_per_state {
                let xi = rng.gen_range(-20.0..20.0);
                let a = rng.gen_range(0.5..2.0);
                let b = rng.gen_range(0.5..2.0);
                let (ru, rv) = pointwise_energy_identity(&s, a, b, xi);
                worst = worst
                    .max(ru / (1.0 + (eu - 2.0 * a * a).abs()))
                    .max(rv / (1.0 + (ev - 2.0 * b * b).abs()));
            }
            let g = identity_g1g2(&s);
            let h = identity_h(&s);
            let f = crate::functionals::quartic_f(&s);
            let particles = s.cloud.as_ref().map_or(0, |c| c.len()) as f64;
            Ok([
                i as f64,
                particles,
                worst,
                g.residual / (1.0 + g.rhs.abs()),
                h.residual / (1.0 + h.rhs.abs()),
                key_inequality(&s) / (1.0 + f.abs()),
                f,
            ])
        })
        .collect();
    let mut table = TableWriter::create(opts.out.join("fuzz.csv"), &FUZZ_HEADER)?;
    let mut worst = [0.0_f64; 4];
    for r in rows {
        let r = r?;
        table.row(&r)?;
        for k in 0..4 {
            worst[k] = worst[k].max(r[k + 2]);
        }
    }
    summary.check("pointwise_identity", worst[0], fuzz.pointwise_tol);
    summary.check("g1g2_identity", worst[1], fuzz.split_tol);
    summary.check("h_identity", worst[2], fuzz.split_tol);
    summary.check("key_inequality", worst[3], cfg.diagnostics.key_tol);
    opts.say(format!("fuzzed {} states", fuzz.states));

    if fuzz.refine_states == 0 || fuzz.refine_n.len() < 2 {
        return Ok(());
    }
    let grids = fuzz
        .refine_n
        .iter()
        .map(|&n| make_grid(cfg.grid.x_left, cfg.grid.x_right, n))
        .collect::<Result<Vec<_>>>()?;
    let mut table = TableWriter::create(opts.out.join("refine.csv"), &REFINE_HEADER)?;
    let mut min_order = f64::INFINITY;
    for i in 0..fuzz.refine_states {
        let cloud = kinked_state(grids[0], cfg.seed, i as u64)?;
        let dx: Vec<f64> = grids.iter().map(|g| g.dx()).collect();
        let mut rg = Vec::new();
        let mut rh = Vec::new();
        for g in &grids {
            let s = State::from_cloud(*g, cloud.clone(), 0.0);
            let (a, b) = (identity_g1g2(&s), identity_h(&s));
            rg.push(a.residual / (1.0 + a.rhs.abs()));
            rh.push(b.residual / (1.0 + b.rhs.abs()));
            table.row(&[i as f64, g.n() as f64, g.dx(), *rg.last().unwrap(), *rh.last().unwrap()])?;
        }
        let o = observed_order(&dx, &rg).min(observed_order(&dx, &rh));
        min_order = min_order.min(o);
    }
    summary.fit("min_observed_order", min_order);
    summary.push(
        "refinement_order",
        min_order,
        fuzz.min_order,
        min_order >= fuzz.min_order,
        false,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-experiment

/// `train-experiment <config>`: a train run with modulation tracking, speed
/// fit, separation, right-energy monotonicity, interval crests, the
/// localized inequality and the virial balance at `y_2(0)`.
pub fn run_train(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutput> {
    with_summary("train-experiment", cfg, opts, |summary| train_into(cfg, opts, summary))
}

fn train_into(cfg: &RunConfig, opts: &RunOptions, summary: &mut Summary) -> Result<()> {
    let ts = cfg
        .initial
        .train_spec()
        .ok_or_else(|| Error::Config("train-experiment needs train initial data".into()))?;
    let tc = cfg.train.clone().unwrap_or_default();
    let k = tc.k.unwrap_or(ts.l.sqrt() / 8.0);
    summary.fit("K", k);
    let traj = simulate_into(cfg, opts, summary)?;
    let report = train_diagnostics(&traj, &ts, k)?;
    let n = ts.peakons.len();

    let mut header: Vec<String> = vec!["t".into(), "residual".into()];
    let cols = ["x_tilde", "x_crest", "M", "u_crest", "v_crest", "local_inequality"];
    for c in cols {
        header.extend((1..=n).map(|i| format!("{c}_{i}")));
    }
    for j in 2..=n {
        header.extend(["J_u", "J_v", "J_uv"].iter().map(|c| format!("{c}_{j}")));
    }
    header.extend(["global_identity_u".into(), "global_identity_v".into()]);
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = TableWriter::create(opts.out.join("train.csv"), &hdr)?;
    for g in &report.geometry {
        let mut row = vec![g.t, g.modulation.residual_norm];
        for v in [&g.modulation.x_tilde, &g.x_i, &g.m_i, &g.u_i, &g.v_i, &g.local_inequality] {
            row.extend(v.iter().copied());
        }
        for jj in &g.j {
            row.extend(jj.iter().copied());
        }
        row.extend(g.global_identity);
        table.row(&row)?;
    }

    train_assertions(&ts, &tc, &report, summary);
    let mono = monotonicity_report(&report, &ts);
    summary.fit("monotonicity_scale", mono.scale);
    summary.check("right_energy_increase", mono.max_increase(), tc.monotonicity_tol);

    // Partition tails around each bump at t = 0.
    let wf = build_weight(k)?;
    let g0 = &report.geometry[0];
    let grid = traj.grid();
    let phi = partition_phi(&wf, &g0.y, grid);
    let mut tail: f64 = 0.0;
    for (i, &x) in g0.modulation.x_tilde.iter().enumerate() {
        for (kk, v) in phi[i].values().iter().enumerate() {
            if (grid.x(kk) - x).abs() <= ts.l / 4.0 {
                tail = tail.max(1.0 - v);
            }
        }
    }
    summary.check("partition_tail", tail, 4.0 * (-ts.l / (8.0 * k)).exp());

    if tc.virial && n >= 2 {
        let y2 = g0.y[0];
        let g = move |x: f64| psi((x - y2) / k);
        let gp = move |x: f64| psi_derivatives((x - y2) / k).0 / k;
        let samples = virial_check(&traj, &g, &gp);
        let mut table = TableWriter::create(
            opts.out.join("virial.csv"),
            &["t", "lhs_u", "rhs_u", "lhs_v", "rhs_v", "lhs_uv", "rhs_uv"],
        )?;
        let mut err = [0.0_f64; 3];
        let mut scale = [0.0_f64; 3];
        for v in &samples {
            table.row(&[v.t, v.lhs[0], v.rhs[0], v.lhs[1], v.rhs[1], v.lhs[2], v.rhs[2]])?;
            for c in 0..3 {
                err[c] = err[c].max((v.lhs[c] - v.rhs[c]).abs());
                scale[c] = scale[c].max(v.rhs[c].abs());
            }
        }
        for (c, name) in ["virial_u", "virial_v", "virial_uv"].iter().enumerate() {
            summary.check(*name, err[c] / scale[c].max(f64::MIN_POSITIVE), tc.virial_tol);
        }
    }
    opts.say(format!("train study: fitted speeds {:?}", report.fitted_speeds));
    Ok(())
}

fn train_assertions(
    ts: &TrainSpec,
    tc: &TrainConfig,
    report: &crate::stability::TrainReport,
    summary: &mut Summary,
) {
    let c = ts.speeds();
    summary.check("modulation_residual", report.max_residual(), tc.residual_tol);
    for (i, (f, ci)) in report.fitted_speeds.iter().zip(&c).enumerate() {
        summary.fit(format!("speed_{}", i + 1), *f);
        summary.check(format!("speed_{}", i + 1), (f - ci).abs(), tc.speed_tol);
    }
    // Separation lower bound and growth.
    let mut margin = f64::INFINITY;
    let mut worst_drop: f64 = 0.0;
    for i in 1..c.len() {
        let mut prev = f64::NEG_INFINITY;
        for g in &report.geometry {
            let sep = g.modulation.x_tilde[i] - g.modulation.x_tilde[i - 1];
            let floor = 0.75 * ts.l + 0.5 * (c[i] - c[i - 1]) * g.t;
            margin = margin.min(sep - floor);
            worst_drop = worst_drop.max(prev - sep);
            prev = sep;
        }
    }
    if c.len() > 1 {
        summary.fit("separation_margin", margin);
        summary.check("separation_bound", -margin, tc.separation_slack);
        summary.check("separation_increasing", worst_drop, 0.0);
    }
    let mut crest: f64 = 0.0;
    let mut local = f64::NEG_INFINITY;
    for g in &report.geometry {
        for (i, p) in ts.peakons.iter().enumerate() {
            crest = crest
                .max((g.m_i[i] - p.c()).abs())
                .max((g.u_i[i] - p.a).abs())
                .max((g.v_i[i] - p.b).abs());
            local = local.max(g.local_inequality[i]);
        }
    }
    summary.check("interval_crests", crest, tc.crest_tol);
    summary.check("localized_inequality", local, tc.local_tol);
}

// ---------------------------------------------------------------------------
// check-weights

/// Partition check of the family at scale `k`: `max |ΣΦ_i - 1|` and
/// `min Φ_i` for centres spaced `8k` apart on a grid covering them.
pub fn partition_check(k: f64) -> Result<(f64, f64)> {
    let wf = build_weight(k)?;
    let y = [-8.0 * k, 0.0, 8.0 * k];
    let grid = make_grid(-24.0 * k, 24.0 * k, 4097)?;
    let phi = partition_phi(&wf, &y, grid);
    let mut sum_err: f64 = 0.0;
    let mut min_phi = f64::INFINITY;
    for kk in 0..grid.n() {
        let s: f64 = phi.iter().map(|p| p.values()[kk]).sum();
        sum_err = sum_err.max((s - 1.0).abs());
        for p in &phi {
            min_phi = min_phi.min(p.values()[kk]);
        }
    }
    Ok((sum_err, min_phi))
}

/// Certificate of the cutoff at scale `k` plus the partition checks.
pub fn check_weights(k: f64, summary: &mut Summary) -> Result<WeightCertificate> {
    let wf = build_weight(k)?;
    let cert = wf.certificate;
    summary.push("monotone", cert.min_slope, 0.0, cert.monotone, false);
    summary.check("third_derivative_ratio", cert.max_ratio, cert.ratio_bound);
    summary.check("seam_jump", cert.max_seam_jump, 1e-9);
    let (sum_err, min_phi) = partition_check(k)?;
    summary.check("partition_sum", sum_err, 1e-12);
    summary.push("partition_nonnegative", min_phi, 0.0, min_phi >= 0.0, false);
    summary.fit("K", k);
    summary.fit("max_ratio", cert.max_ratio);
    summary.fit("min_slope", cert.min_slope);
    Ok(cert)
}

fn weight_hash(k: f64) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(format!("k = {}\n", super::output::fmt17(k)).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `check-weights <K>`, writing `summary.toml` into `out`.
pub fn run_check_weights(k: f64, out: &Path) -> Result<Summary> {
    ensure_dir(out)?;
    let start = Instant::now();
    let mut summary = Summary::new("check-weights", weight_hash(k));
    if let Err(e) = check_weights(k, &mut summary) {
        summary.fail(&e);
    }
    summary.finish(start.elapsed().as_secs_f64());
    summary.write(out.join("summary.toml"))?;
    Ok(summary)
}
