//! Two-peakon train: modulation tracking, fitted speeds, right energies and
//! the virial balance across `y_2(0)`.

use peakon_lab::evolution::{simulate, virial_check, StepControl};
use peakon_lab::functionals::{psi, psi_derivatives};
use peakon_lab::grid::make_grid;
use peakon_lab::profiles::{perturb_momentum, train, PeakonSpec, TrainSpec};
use peakon_lab::stability::{monotonicity_report, train_diagnostics};

fn main() -> peakon_lab::Result<()> {
    let grid = make_grid(-40.0, 60.0, 5121)?;
    let ts = TrainSpec::new(
        vec![PeakonSpec::new(1.0, 1.0, -30.0)?, PeakonSpec::new(2.0, 2.0, -5.0)?],
        25.0,
    )?;
    let s0 = perturb_momentum(&train(&ts, None, grid)?, 0.05, 5)?;
    let traj = simulate(&s0, &StepControl::new(0.3, 0.05, 10.0, 20)?)?;
    let k = ts.l.sqrt() / 8.0;
    let rep = train_diagnostics(&traj, &ts, k)?;
    println!("K = {k}, sigma0 = {}", rep.sigma0);
    println!("speeds: fitted {:?}, expected {:?}", rep.fitted_speeds, ts.speeds());
    println!("max modulation residual {:.2e}", rep.max_residual());
    for g in rep.geometry.iter().step_by(8) {
        println!(
            "t = {:<6.2} x~ = {:>8.3} {:>8.3}  M_i = {:.4} {:.4}  J^u = {:.3e}",
            g.t, g.modulation.x_tilde[0], g.modulation.x_tilde[1], g.m_i[0], g.m_i[1], g.j[0][0]
        );
    }
    let mono = monotonicity_report(&rep, &ts);
    println!("largest right-energy increase {:.2e} (scale {:.2e})", mono.max_increase(), mono.scale);

    let y2 = rep.geometry[0].y[0];
    let g = |x: f64| psi((x - y2) / k);
    let gp = |x: f64| psi_derivatives((x - y2) / k).0 / k;
    let v = virial_check(&traj, &g, &gp);
    let worst = v
        .iter()
        .map(|s| (s.lhs[0] - s.rhs[0]).abs())
        .fold(0.0, f64::max);
    println!("virial (u): worst |d/dt - rhs| = {worst:.2e} over {} samples", v.len());
    Ok(())
}
