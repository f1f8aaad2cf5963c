//! Drives the experiment layer from an inline config: a short simulate run
//! and a two-member sweep over the perturbation size.

use peakon_lab::experiment::{parse_config_str, run_simulate, sweep, RunOptions, SweepAxis};

const CONFIG: &str = r#"
seed = 9

[initial]
kind = "exact"
a = 1.0
b = 1.0

[step]
t_end = 2.0

[output]
snapshots = false
"#;

fn main() -> peakon_lab::Result<()> {
    let cfg = parse_config_str(CONFIG)?;
    println!("canonical config (hash {}):\n{}", cfg.hash(), cfg.to_toml());
    let out = std::env::temp_dir().join("peakon-lab-example");
    let run = run_simulate(&cfg, &RunOptions::new(out.join("single")))?;
    println!("{}", run.summary.to_toml());
    for member in sweep(&cfg, SweepAxis::Delta, &[0.02, 0.08], &RunOptions::new(out.join("sweep"))) {
        let m = member?;
        println!(
            "{}: passed {}, sup dist {:.4}",
            m.dir.display(),
            m.passed(),
            m.summary.fitted["sup_dist_total"]
        );
    }
    Ok(())
}
