//! Conserved functionals of an exact peakon pair, three ways: exact cloud
//! algebra, the traced trapezoid and plain grid samples.

use peakon_lab::cloud::Cloud;
use peakon_lab::functionals::{
    cross_h, cross_h_grid, energy_u, energy_u_grid, energy_v, energy_v_grid, quartic_f, quartic_f_grid, record,
};
use peakon_lab::grid::{make_grid, State};

fn main() -> peakon_lab::Result<()> {
    let grid = make_grid(-40.0, 40.0, 8193)?;
    println!("{:>4} {:>4} {:>10} {:>12} {:>12} {:>12}", "a", "b", "quantity", "closed form", "exact", "grid only");
    for (a, b) in [(1.0, 1.0), (1.0, 2.0), (2.0, 3.0)] {
        let s = State::from_cloud(grid, Cloud::peakon(0.0, a, b), 0.0);
        let g = s.grid_only();
        let rows = [
            ("E_u", 2.0 * a * a, energy_u(&s), energy_u_grid(&g)),
            ("E_v", 2.0 * b * b, energy_v(&s), energy_v_grid(&g)),
            ("H", 2.0 * a * b, cross_h(&s), cross_h_grid(&g)),
            ("F", 4.0 / 3.0 * a * a * b * b, quartic_f(&s), quartic_f_grid(&g)),
        ];
        for (name, want, exact, grid_only) in rows {
            println!("{a:>4} {b:>4} {name:>10} {want:>12.8} {exact:>12.8} {grid_only:>12.8}");
        }
        let r = record(&s);
        println!("           crest xi = {}, M = {}", r.xi, r.m);
    }
    Ok(())
}
