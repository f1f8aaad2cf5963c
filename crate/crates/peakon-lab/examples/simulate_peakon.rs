//! Evolves a mollified peakon pair, checks conservation and follows a few
//! characteristics together with the momentum they carry.

use peakon_lab::evolution::{characteristics, momentum_along_flow, simulate, StepControl};
use peakon_lab::grid::make_grid;
use peakon_lab::profiles::{mollified_peakon_pair, MollifierSpec, PeakonSpec};

fn main() -> peakon_lab::Result<()> {
    let grid = make_grid(-40.0, 40.0, 4097)?;
    let s0 = mollified_peakon_pair(&PeakonSpec::new(1.0, 1.0, 0.0)?, &MollifierSpec::new(0.2)?, grid)?;
    let ctl = StepControl::new(0.3, 0.05, 5.0, 10)?;
    let traj = simulate(&s0, &ctl)?;
    let (r0, r1) = (&traj.records[0], traj.records.last().unwrap());
    println!("{} steps, {} snapshots", traj.steps, traj.states.len());
    println!("t        E_u              H                F                xi");
    for r in [r0, r1] {
        println!("{:<8.3} {:<16.12} {:<16.12} {:<16.12} {:.4}", r.t, r.e_u, r.h, r.f, r.xi);
    }
    println!("relative drift of F: {:.3e}", ((r1.f - r0.f) / r0.f).abs());

    let seeds = [-3.0, -1.5, 1.5, 3.0];
    let paths = characteristics(&traj, &seeds)?;
    for p in &paths {
        let k = p.q.len() - 1;
        println!(
            "seed {:>5}: q(T) = {:>8.4}, q_x by neighbours {:.5}, by exponent {:.5}",
            p.x_seed, p.q[k], p.qx_fd[k], p.qx_exp[k]
        );
    }
    let m = momentum_along_flow(&traj, &paths);
    println!("momentum along flow: max deviation {:.3e}, min m {:.3e}", m.max_deviation, m.min_m);
    Ok(())
}
