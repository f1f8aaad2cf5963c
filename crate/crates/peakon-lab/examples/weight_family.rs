//! The cutoff Ψ, its certificate and the partition of unity of a train.

use peakon_lab::functionals::{build_weight, partition_phi, psi, psi_derivatives};
use peakon_lab::grid::make_grid;

fn main() -> peakon_lab::Result<()> {
    for x in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        let (d1, _, d3) = psi_derivatives(x);
        println!("psi({x:>4}) = {:.10}  psi' = {d1:.6}  psi'''/psi' = {:>8.4}", psi(x), d3 / d1);
    }
    let k = 25.0_f64.sqrt() / 8.0;
    let wf = build_weight(k)?;
    println!("{:#?}", wf.certificate);
    if !wf.certificate.within_bound() {
        println!("third-derivative ratio exceeds {}", wf.certificate.ratio_bound);
    }
    let grid = make_grid(-40.0, 40.0, 4097)?;
    let phi = partition_phi(&wf, &[-10.0, 10.0], grid);
    let err = (0..grid.n())
        .map(|k| (phi.iter().map(|p| p.values()[k]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("{} pieces, max |sum - 1| = {err:.2e}", phi.len());
    Ok(())
}
