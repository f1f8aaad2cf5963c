//! Run artefacts: CSV time series, binary snapshots with text sidecars and
//! the TOML summary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::State;

/// 17 significant digits: every f64 survives a print/parse round trip.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Header of the single-run time series.
pub const TIMESERIES_HEADER: [&str; 20] = [
    "t",
    "E_u",
    "E_v",
    "H",
    "F",
    "E0",
    "xi",
    "M",
    "u_at_xi",
    "v_at_xi",
    "dist_u",
    "dist_v",
    "dist_total",
    "best_shift",
    "key_inequality",
    "peak_gap",
    "peak_gap_bound",
    "min_m",
    "min_n",
    "slope_excess",
];

/// Streams rows of reals to a CSV file with a fixed header, flushing each
/// row so a crashed run leaves a readable prefix.
pub struct TableWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
    width: usize,
}

impl TableWriter {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner
            .write_record(header)
            .map_err(|e| Error::io(&path, e.into()))?;
        Ok(TableWriter {
            path,
            inner,
            width: header.len(),
        })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        assert_eq!(values.len(), self.width, "row width");
        let path = &self.path;
        self.inner
            .write_record(values.iter().map(|v| fmt17(*v)))
            .map_err(|e| Error::io(path, e.into()))?;
        self.inner.flush().map_err(|e| Error::io(path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Writes `u` and `v` as little-endian f64 arrays (`<stem>.u.f64`,
/// `<stem>.v.f64`) and a sidecar `<stem>.txt` with the grid and time.
pub fn write_snapshot(dir: &Path, stem: &str, s: &State) -> Result<()> {
    for (name, f) in [("u", &s.u), ("v", &s.v)] {
        let path = dir.join(format!("{stem}.{name}.f64"));
        let mut bytes = Vec::with_capacity(8 * f.values().len());
        for v in f.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let g = s.grid();
    let path = dir.join(format!("{stem}.txt"));
    let text = format!(
        "x_left = {}\nx_right = {}\nn = {}\nt = {}\nlayout = \"f64 little-endian, node order\"\n",
        fmt17(g.x_left()),
        fmt17(g.x_right()),
        g.n(),
        fmt17(s.t)
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads back one component written by [`write_snapshot`].
pub fn read_snapshot_component(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Field(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    /// Soft assertions are reported but never fail a run.
    pub soft: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub message: String,
}

/// End-of-run document. Plain keys come first so the TOML encoder can emit
/// the tables after them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub command: String,
    pub config_hash: String,
    pub status: String,
    pub all_passed: bool,
    pub runtime_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub fitted: BTreeMap<String, f64>,
    pub assertions: Vec<Assertion>,
}

impl Summary {
    pub fn new(command: &str, config_hash: String) -> Self {
        Summary {
            command: command.into(),
            config_hash,
            status: "running".into(),
            all_passed: false,
            runtime_seconds: 0.0,
            failure: None,
            fitted: BTreeMap::new(),
            assertions: Vec::new(),
        }
    }

    /// Records `value ≤ tolerance`.
    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: f64) -> bool {
        self.push(name, value, tolerance, value <= tolerance, false)
    }

    pub fn soft_check(&mut self, name: impl Into<String>, value: f64, tolerance: f64) -> bool {
        self.push(name, value, tolerance, value <= tolerance, true)
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        value: f64,
        tolerance: f64,
        passed: bool,
        soft: bool,
    ) -> bool {
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
            value,
            tolerance,
            soft,
        });
        passed
    }

    pub fn fit(&mut self, name: impl Into<String>, value: f64) {
        self.fitted.insert(name.into(), value);
    }

    pub fn fail(&mut self, e: &Error) {
        let t = match e {
            Error::BlowUp { t, .. } | Error::PathExit { t, .. } | Error::Modulation { t, .. } => {
                Some(*t)
            }
            _ => None,
        };
        self.failure = Some(Failure {
            t,
            message: e.to_string(),
        });
    }

    /// Closes the summary: a run passes iff it completed and every hard
    /// assertion held.
    pub fn finish(&mut self, runtime_seconds: f64) {
        self.runtime_seconds = runtime_seconds;
        let hard_ok = self.assertions.iter().all(|a| a.soft || a.passed);
        self.status = if self.failure.is_some() { "failed" } else { "completed" }.into();
        self.all_passed = self.failure.is_none() && hard_ok;
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        f.write_all(self.to_toml().as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
