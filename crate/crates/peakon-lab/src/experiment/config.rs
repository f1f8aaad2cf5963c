//! TOML run configuration. Unknown keys are rejected everywhere and
//! `parse → serialize → parse` is the identity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::StepControl;
use crate::grid::{make_grid, Grid};
use crate::profiles::{MollifierSpec, PeakonSpec, TrainSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; sub-runs derive theirs from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub step: StepControl,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzz: Option<FuzzConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_left: f64,
    pub x_right: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_left: -40.0,
            x_right: 40.0,
            n: 4097,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        make_grid(self.x_left, self.x_right, self.n)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }
}

fn default_w() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Initial data, selected by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    Exact {
        a: f64,
        b: f64,
        #[serde(default)]
        x0: f64,
    },
    Mollified {
        a: f64,
        b: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default = "default_w")]
        w: f64,
    },
    Train {
        peakons: Vec<PeakonSpec>,
        l: f64,
        /// Mollify each peakon with width `w`; exact peakons otherwise.
        #[serde(default = "default_true")]
        mollified: bool,
        #[serde(default = "default_w")]
        w: f64,
    },
    /// `base` plus seeded momentum bumps of total H¹ size `amplitude`.
    Perturbed {
        amplitude: f64,
        base: Box<InitialConfig>,
    },
}

impl InitialConfig {
    /// The single peakon the data approximates, if any.
    pub fn target(&self) -> Option<PeakonSpec> {
        match self {
            InitialConfig::Exact { a, b, x0 } | InitialConfig::Mollified { a, b, x0, .. } => {
                Some(PeakonSpec {
                    a: *a,
                    b: *b,
                    x0: *x0,
                })
            }
            InitialConfig::Train { .. } => None,
            InitialConfig::Perturbed { base, .. } => base.target(),
        }
    }

    /// The train the data approximates, if any.
    pub fn train_spec(&self) -> Option<TrainSpec> {
        match self {
            InitialConfig::Train { peakons, l, .. } => Some(TrainSpec {
                peakons: peakons.clone(),
                l: *l,
            }),
            InitialConfig::Perturbed { base, .. } => base.train_spec(),
            _ => None,
        }
    }

    /// Same data with the outermost perturbation amplitude replaced
    /// (or added, when the data is unperturbed).
    pub fn with_amplitude(&self, amplitude: f64) -> InitialConfig {
        let base = match self {
            InitialConfig::Perturbed { base, .. } => base.clone(),
            other => Box::new(other.clone()),
        };
        InitialConfig::Perturbed { amplitude, base }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let prof = |e: Error| Error::Config(format!("{path}: {e}"));
        match self {
            InitialConfig::Exact { a, b, x0 } => {
                PeakonSpec::new(*a, *b, *x0).map_err(prof)?;
            }
            InitialConfig::Mollified { a, b, x0, w } => {
                PeakonSpec::new(*a, *b, *x0).map_err(prof)?;
                MollifierSpec::new(*w).map_err(|e| Error::Config(format!("{path}.w: {e}")))?;
            }
            InitialConfig::Train {
                peakons,
                l,
                mollified,
                w,
            } => {
                TrainSpec::new(peakons.clone(), *l).map_err(prof)?;
                if *mollified {
                    MollifierSpec::new(*w).map_err(|e| Error::Config(format!("{path}.w: {e}")))?;
                }
            }
            InitialConfig::Perturbed { amplitude, base } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(Error::Config(format!(
                        "{path}.amplitude = {amplitude} must be finite and nonnegative"
                    )));
                }
                base.validate(&format!("{path}.base"))?;
            }
        }
        Ok(())
    }
}

/// Per-snapshot assertions of `simulate` and the tolerances they use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Orbital distance and crest diagnostics against the target peakon.
    pub stability: bool,
    pub drift_tol: f64,
    /// Soft: reported, never fails the run.
    pub e0_drift_tol: f64,
    pub key_tol: f64,
    pub sign_tol: f64,
    pub slope_tol: f64,
    pub peak_gap_slack: f64,
    /// Write every `snapshot_every`-th snapshot (0 keeps only first and last).
    pub snapshot_every: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            stability: true,
            drift_tol: 1e-3,
            e0_drift_tol: 1e-2,
            key_tol: 1e-6,
            sign_tol: 1e-6,
            slope_tol: 1e-6,
            peak_gap_slack: 1e-6,
            snapshot_every: 0,
        }
    }
}

/// Identity fuzzing over seeded random states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    pub states: usize,
    pub xi_per_state: usize,
    pub pointwise_tol: f64,
    pub split_tol: f64,
    /// States in the refinement study.
    pub refine_states: usize,
    /// Grid sizes of the refinement study, coarse to fine.
    pub refine_n: Vec<usize>,
    pub min_order: f64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            states: 100,
            xi_per_state: 100,
            pointwise_tol: 1e-6,
            split_tol: 5e-3,
            refine_states: 5,
            refine_n: vec![2049, 4097, 8193],
            min_order: 1.0,
        }
    }
}

/// δ-ladder of perturbed single-peakon runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub deltas: Vec<f64>,
    /// Largest admissible max/min of the rescaled sup-distances.
    pub spread: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            deltas: vec![0.02, 0.04, 0.08],
            spread: 3.0,
        }
    }
}

/// Train-study knobs. `k` defaults to `√L/8`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub residual_tol: f64,
    pub speed_tol: f64,
    pub separation_slack: f64,
    pub monotonicity_tol: f64,
    pub crest_tol: f64,
    pub local_tol: f64,
    pub virial: bool,
    pub virial_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: None,
            residual_tol: 1e-8,
            speed_tol: 0.15,
            separation_slack: 1.0,
            monotonicity_tol: 1e-2,
            crest_tol: 0.3,
            local_tol: 0.1,
            virial: true,
            virial_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            snapshots: true,
        }
    }
}

impl RunConfig {
    /// Checks every section and fills defaults that depend on other sections.
    pub fn validate(&mut self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!(
                "seed = {} exceeds the TOML integer range",
                self.seed
            )));
        }
        self.grid.build()?;
        self.initial.validate("initial")?;
        self.step.validate()?;
        if let Some(ts) = self.initial.train_spec() {
            let t = self.train.get_or_insert_with(TrainConfig::default);
            let k = *t.k.get_or_insert(ts.l.sqrt() / 8.0);
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Config(format!("train.k = {k} must be positive")));
            }
        }
        if let Some(l) = &self.ladder {
            if let Some(d) = l.deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                return Err(Error::Config(format!("ladder.deltas: {d} must be positive")));
            }
            if self.initial.target().is_none() {
                return Err(Error::Config("ladder needs single-peakon initial data".into()));
            }
        }
        if let Some(f) = &self.fuzz {
            if f.refine_n.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("fuzz.refine_n must increase".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `k` for the train study (after [`RunConfig::validate`]).
    pub fn train_k(&self) -> Option<f64> {
        self.train.as_ref().and_then(|t| t.k)
    }
}

/// Parses and validates a config document.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[initial]\nkind = \"mollified\"\na = 1.0\nb = 1.0\n";

    #[test]
    fn minimal_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.step.cfl, 0.3);
        assert_eq!(c.grid, GridConfig::default());
        match c.initial {
            InitialConfig::Mollified { w, x0, .. } => {
                assert_eq!(w, 0.2);
                assert_eq!(x0, 0.0);
            }
            _ => panic!(),
        }
        assert!(c.train.is_none());
    }

    #[test]
    fn train_k_default() {
        let t = "[initial]\nkind = \"train\"\nl = 25.0\n\
                 [[initial.peakons]]\na = 1.0\nb = 1.0\nx0 = -30.0\n\
                 [[initial.peakons]]\na = 2.0\nb = 2.0\nx0 = -5.0\n";
        let c = parse_config_str(t).unwrap();
        assert_eq!(c.train_k(), Some(0.625));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config_str(&format!("{MINIMAL}wdith = 0.3\n")).unwrap_err();
        assert!(e.to_string().contains("wdith"), "{e}");
        let e = parse_config_str(&format!("{MINIMAL}[step]\ncfll = 0.3\n")).unwrap_err();
        assert!(e.to_string().contains("cfll"), "{e}");
        let e = parse_config_str(&format!("bogus = 1\n{MINIMAL}")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn misordered_train_names_field() {
        let t = "[initial]\nkind = \"train\"\nl = 25.0\n\
                 [[initial.peakons]]\na = 2.0\nb = 2.0\nx0 = -30.0\n\
                 [[initial.peakons]]\na = 1.0\nb = 1.0\nx0 = -5.0\n";
        let e = parse_config_str(t).unwrap_err().to_string();
        assert!(e.contains("peakons[1]"), "{e}");
    }

    #[test]
    fn constraint_errors() {
        let e = parse_config_str(&format!("{MINIMAL}[step]\ncfl = 1.5\n")).unwrap_err();
        assert!(e.to_string().contains("step.cfl"));
        let e = parse_config_str("[initial]\nkind = \"exact\"\na = -1.0\nb = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("initial"));
        assert!(parse_config_str("[initial\n").is_err());
        assert!(parse_config("/nonexistent/peakon.toml").is_err());
    }

    #[test]
    fn round_trip_bytes() {
        let t = "seed = 7\n[initial]\nkind = \"perturbed\"\namplitude = 0.05\n\
                 [initial.base]\nkind = \"exact\"\na = 1.0\nb = 2.0\n\
                 [ladder]\ndeltas = [0.02, 0.04]\n[fuzz]\nstates = 3\n";
        let c = parse_config_str(t).unwrap();
        let s1 = c.to_toml();
        let c2 = parse_config_str(&s1).unwrap();
        assert_eq!(c, c2);
        assert_eq!(s1, c2.to_toml());
        assert_eq!(c.hash(), c2.hash());
    }
}
