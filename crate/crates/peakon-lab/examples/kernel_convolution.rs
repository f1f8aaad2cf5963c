//! O(N) convolution with `e^{-|x|}/2` and the discrete Helmholtz pair.

use peakon_lab::grid::make_grid;
use peakon_lab::kernel::{convolve_p, convolve_px, helmholtz_forward, helmholtz_inverse};

fn main() -> peakon_lab::Result<()> {
    let grid = make_grid(-20.0, 20.0, 2049)?;
    let f = grid.sample(|x| (-x * x).exp());
    let p = convolve_p(&f);
    let px = convolve_px(&f);
    // P * e^{-x²} at 0 is (√π/2) e^{1/4} erfc(1/2).
    let k0 = grid.nearest(0.0);
    println!("P*f(0) = {:.10}  (closed form 0.5456413608)", p.values()[k0]);
    println!("P_x*f(0) = {:.3e}  (odd, so zero)", px.values()[k0]);

    let u = grid.sample(|x| (-(x * x) / 2.0).exp() * x.cos());
    let back = helmholtz_inverse(&helmholtz_forward(&u));
    let err = u
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("sup |P*(u - u_xx) - u| = {err:.3e}");
    Ok(())
}
