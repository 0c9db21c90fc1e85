//! Experiment configuration: TOML in, a validated [`ExperimentConfig`] out.
//!
//! Parsing walks the table by hand so that every unknown key, type mismatch
//! and out-of-range value is reported at once, each with its key path.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::lattice::IntMatrix;
use crate::models::{cat_matrix, hopf_matrix, pitchfork_matrix, pitchfork_rho_interval, BumpSpec, Family, MapModel, ModelSpec};

pub const DEFAULT_OUT_DIR: &str = "srblab-out";
pub const OUT_DIR_ENV: &str = "SRBLAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Check,
    Srb,
    Hyptimes,
    Lyapunov,
    Entropy,
    Sweep,
    Unstable,
    Preimages,
}

impl Kind {
    pub const ALL: [Kind; 8] =
        [Kind::Check, Kind::Srb, Kind::Hyptimes, Kind::Lyapunov, Kind::Entropy, Kind::Sweep, Kind::Unstable, Kind::Preimages];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Check => "check",
            Kind::Srb => "srb",
            Kind::Hyptimes => "hyptimes",
            Kind::Lyapunov => "lyapunov",
            Kind::Entropy => "entropy",
            Kind::Sweep => "sweep",
            Kind::Unstable => "unstable",
            Kind::Preimages => "preimages",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub family: Family,
    pub matrix: Vec<Vec<i64>>,
    pub rho: f64,
    pub radius: f64,
    pub stable_radius: f64,
    pub t: f64,
    pub center: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSection {
    pub width: f64,
    pub stable_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Hyperbolic-time rate; derived from the orbits when absent.
    pub c: Option<f64>,
    pub delta: f64,
    pub grid: usize,
    pub support_grid: usize,
    /// Histogram bins per axis; per-dimension default when absent.
    pub resolution: Option<usize>,
    pub k_max: usize,
    pub gamma0: Option<f64>,
    pub stable_depth: usize,
    /// Expanding-plane radius of the core left out of certification; 0
    /// disables it. By default a sink's core is excluded automatically.
    pub exclude_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub iters: usize,
    pub samples: usize,
    pub starts: usize,
    pub disk_radius: f64,
    pub seed: u64,
    /// Output directory; falls back to `$SRBLAB_OUT`, then `srblab-out`.
    pub out: Option<String>,
    /// Worker threads, 0 for one per core. Never affects outputs.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub t_start: f64,
    pub t_stop: f64,
    pub t_step: f64,
    pub entropy: bool,
    pub certify: bool,
}

impl SweepSection {
    /// `t_start, t_start + step, …` up to `t_stop` inclusive (within 1e-9).
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.t_stop - self.t_start) / self.t_step + 1e-9).floor() as usize;
        (0..=n).map(|i| (self.t_start + i as f64 * self.t_step).min(self.t_stop)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSection {
    pub x: Option<Vec<f64>>,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: ModelSection,
    pub cones: ConeSection,
    pub constants: Constants,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub point: PointSection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}", render(.0))]
    Invalid(Vec<Issue>),
}

fn render(issues: &[Issue]) -> String {
    let lines: Vec<String> = issues.iter().map(|i| format!("  {i}")).collect();
    format!("invalid configuration ({} problem(s)):\n{}", issues.len(), lines.join("\n"))
}

impl ConfigError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Parse { .. } => &[],
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

impl ExperimentConfig {
    /// Defaults for a kind and family; the linear family uses the cat map.
    pub fn defaults(kind: Kind, family: Family) -> Self {
        let matrix = match family {
            Family::Linear => cat_matrix(),
            Family::Pitchfork => pitchfork_matrix(2),
            Family::Hopf => hopf_matrix(),
        };
        Self {
            kind,
            model: ModelSection { family, matrix, rho: 0.8, radius: 0.1, stable_radius: 0.4, t: 1.0, center: None },
            cones: ConeSection { width: 0.5, stable_width: 0.5 },
            constants: Constants {
                c: None,
                delta: 0.02,
                grid: 32,
                support_grid: 40,
                resolution: None,
                k_max: 8,
                gamma0: None,
                stable_depth: 40,
                exclude_radius: None,
            },
            run: RunSection { iters: 400, samples: 2000, starts: 64, disk_radius: 0.05, seed: 0, out: None, workers: 0 },
            sweep: SweepSection { t_start: 0.0, t_stop: 1.0, t_step: 0.25, entropy: true, certify: true },
            point: PointSection { x: None, depth: 40 },
        }
    }

    pub fn dim(&self) -> usize {
        self.model.matrix.len()
    }

    pub fn model_spec(&self) -> ModelSpec {
        let bump = match self.model.family {
            Family::Linear => None,
            _ => Some(BumpSpec {
                center: self.model.center.clone().unwrap_or_else(|| vec![0.0; self.dim()]),
                radius: self.model.radius,
                stable_radius: self.model.stable_radius,
                rho: self.model.rho,
                t: self.model.t,
            }),
        };
        ModelSpec { family: self.model.family, matrix: self.model.matrix.clone(), bump }
    }

    pub fn build_model(&self) -> Result<MapModel<f64>, crate::models::ModelError> {
        MapModel::from_spec(&self.model_spec())
    }

    /// Output directory: the config value, else `$SRBLAB_OUT`, else the default.
    pub fn out_dir(&self) -> String {
        self.run
            .out
            .clone()
            .or_else(|| std::env::var(OUT_DIR_ENV).ok().filter(|s| !s.is_empty()))
            .unwrap_or_else(|| DEFAULT_OUT_DIR.to_string())
    }

    /// Every range and consistency problem, in a fixed order.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| out.push(Issue { path: path.into(), message });
        let m = &self.model;
        let dim = m.matrix.len();
        let square = (1..=3).contains(&dim) && m.matrix.iter().all(|r| r.len() == dim);
        if !square {
            bad("model.matrix", "must be a square integer matrix of dimension 1, 2 or 3".into());
        } else if let Some(im) = IntMatrix::from_rows(&m.matrix) {
            if im.det() == 0 {
                bad("model.matrix", "matrix singular".into());
            }
        }
        if m.family != Family::Linear {
            if !(m.t >= 0.0 && m.t <= 1.0) {
                bad("model.t", format!("{} is outside [0, 1]", m.t));
            }
            if !(m.radius > 0.0) {
                bad("model.radius", "must be positive".into());
            }
            if !(m.stable_radius > 0.0) {
                bad("model.stable_radius", "must be positive".into());
            }
            if let Some(c) = &m.center {
                if c.len() != dim {
                    bad("model.center", format!("has {} coordinates, the matrix has dimension {dim}", c.len()));
                }
            }
            if m.family == Family::Pitchfork && square {
                match pitchfork_rho_interval(&m.matrix) {
                    Some((lo, hi)) if !(m.rho > lo && m.rho < hi) => bad(
                        "model.rho",
                        format!(
                            "{} is outside the admissible interval ({lo:.3}, {hi:.3}) for this matrix: rho must exceed both the weak stable modulus and the inverse of the strong unstable modulus, and stay below 1",
                            m.rho
                        ),
                    ),
                    _ => {}
                }
            }
            if !(m.rho > 0.0) {
                bad("model.rho", "must be positive".into());
            }
        }
        if !(self.cones.width > 0.0) {
            bad("cones.width", "must be positive".into());
        }
        if !(self.cones.stable_width > 0.0) {
            bad("cones.stable_width", "must be positive".into());
        }
        let k = &self.constants;
        if let Some(c) = k.c {
            if !(c > 0.0) {
                bad("constants.c", "must be positive".into());
            }
        }
        if !(k.delta > 0.0 && k.delta < 0.5) {
            bad("constants.delta", "must lie in (0, 0.5)".into());
        }
        if k.grid < 32 {
            bad("constants.grid", format!("{} is below the minimum of 32", k.grid));
        }
        if k.support_grid < 2 {
            bad("constants.support_grid", "must be at least 2".into());
        }
        if k.resolution == Some(0) {
            bad("constants.resolution", "must be positive".into());
        }
        if k.exclude_radius.is_some_and(|r| !(r >= 0.0)) {
            bad("constants.exclude_radius", "must not be negative".into());
        }
        if k.k_max == 0 {
            bad("constants.k_max", "must be positive".into());
        }
        if let Some(g) = k.gamma0 {
            if !(g > 0.5 && g < 1.0) {
                bad("constants.gamma0", "must lie in (0.5, 1)".into());
            }
        }
        let r = &self.run;
        if r.iters == 0 {
            bad("run.iters", "must be positive".into());
        }
        if matches!(self.kind, Kind::Lyapunov | Kind::Entropy) && r.iters < 100 {
            bad("run.iters", "exponent estimates need at least 100 iterations".into());
        }
        if r.samples == 0 {
            bad("run.samples", "must be positive".into());
        }
        if !(r.disk_radius > 0.0 && r.disk_radius < 0.5) {
            bad("run.disk_radius", "must lie in (0, 0.5)".into());
        }
        let s = &self.sweep;
        if !(s.t_step > 0.0) {
            bad("sweep.t_step", "must be positive".into());
        }
        if !(s.t_start >= 0.0 && s.t_stop <= 1.0 && s.t_start <= s.t_stop) {
            bad("sweep", format!("range {}:{} must satisfy 0 <= start <= stop <= 1", s.t_start, s.t_stop));
        }
        if let Some(x) = &self.point.x {
            if x.len() != dim {
                bad("point.x", format!("has {} coordinates, the matrix has dimension {dim}", x.len()));
            }
        }
        if self.point.depth == 0 {
            bad("point.depth", "must be positive".into());
        }
        if out.is_empty() {
            if let Err(e) = self.build_model() {
                out.push(Issue { path: "model".into(), message: e.to_string() });
            }
        }
        out
    }

    /// Canonical JSON of the settings that determine the outputs (the output
    /// directory and worker count are left out).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        c.run.workers = 0;
        serde_json::to_string(&c).expect("config serializes")
    }
}

/// Typed reads from one table, recording problems under `prefix.key`.
struct Reader<'a> {
    table: Option<&'a Table>,
    prefix: &'a str,
    issues: &'a mut Vec<Issue>,
}

impl<'a> Reader<'a> {
    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn issue(&mut self, key: &str, message: impl Into<String>) {
        let path = self.path(key);
        self.issues.push(Issue { path, message: message.into() });
    }

    fn reject_unknown(&mut self, known: &[&str]) {
        let Some(t) = self.table else { return };
        let unknown: Vec<String> = t.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
        for k in unknown {
            self.issue(&k, format!("unknown key (expected one of: {})", known.join(", ")));
        }
    }

    fn value(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn float(&mut self, key: &str, slot: &mut f64) {
        match self.value(key) {
            None => {}
            Some(Value::Float(f)) => *slot = *f,
            Some(Value::Integer(i)) => *slot = *i as f64,
            Some(_) => self.issue(key, "expected a number"),
        }
    }

    fn opt_float(&mut self, key: &str, slot: &mut Option<f64>) {
        if self.value(key).is_some() {
            let mut v = 0.0;
            self.float(key, &mut v);
            *slot = Some(v);
        }
    }

    fn uint(&mut self, key: &str, slot: &mut usize) {
        match self.value(key) {
            None => {}
            Some(Value::Integer(i)) if *i >= 0 => *slot = *i as usize,
            Some(Value::Integer(_)) => self.issue(key, "must not be negative"),
            Some(_) => self.issue(key, "expected an integer"),
        }
    }

    fn opt_uint(&mut self, key: &str, slot: &mut Option<usize>) {
        if self.value(key).is_some() {
            let mut v = 0;
            self.uint(key, &mut v);
            *slot = Some(v);
        }
    }

    fn boolean(&mut self, key: &str, slot: &mut bool) {
        match self.value(key) {
            None => {}
            Some(Value::Boolean(b)) => *slot = *b,
            Some(_) => self.issue(key, "expected true or false"),
        }
    }

    fn string(&mut self, key: &str) -> Option<&'a str> {
        match self.value(key) {
            None => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.issue(key, "expected a string");
                None
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let arr = match self.value(key)? {
            Value::Array(a) => a,
            _ => {
                self.issue(key, "expected an array of numbers");
                return None;
            }
        };
        let v: Option<Vec<f64>> = arr
            .iter()
            .map(|x| match x {
                Value::Float(f) => Some(*f),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            })
            .collect();
        if v.is_none() {
            self.issue(key, "expected an array of numbers");
        }
        v
    }

    fn int_rows(&mut self, key: &str) -> Option<Vec<Vec<i64>>> {
        let rows = match self.value(key)? {
            Value::Array(a) => a,
            _ => {
                self.issue(key, "expected an array of integer rows");
                return None;
            }
        };
        let m: Option<Vec<Vec<i64>>> = rows
            .iter()
            .map(|r| match r {
                Value::Array(cells) => cells.iter().map(|c| c.as_integer()).collect(),
                _ => None,
            })
            .collect();
        if m.is_none() {
            self.issue(key, "expected an array of integer rows");
        }
        m
    }
}

fn section<'a>(root: &'a Table, name: &str, issues: &mut Vec<Issue>) -> Option<&'a Table> {
    match root.get(name) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            issues.push(Issue { path: name.into(), message: "expected a table".into() });
            None
        }
    }
}

/// Parses and validates a configuration. `kind` supplies the experiment when
/// the file has no top-level `kind`; if both are present they must agree.
pub fn parse_config_for(text: &str, kind: Option<Kind>) -> Result<ExperimentConfig, ConfigError> {
    let root: Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    let mut issues = Vec::new();
    let sections = ["kind", "model", "cones", "constants", "run", "sweep", "point"];
    let mut top = Reader { table: Some(&root), prefix: "", issues: &mut issues };
    top.reject_unknown(&sections);
    let file_kind = top.string("kind").map(|s| (s, Kind::parse(s)));
    let kind = match (file_kind, kind) {
        (Some((s, None)), _) => {
            let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
            top.issue("kind", format!("unknown experiment '{s}' (expected one of: {})", names.join(", ")));
            kind.unwrap_or(Kind::Check)
        }
        (Some((_, Some(k))), Some(want)) if k != want => {
            top.issue("kind", format!("file says '{}' but the command is '{}'", k.name(), want.name()));
            want
        }
        (Some((_, Some(k))), _) => k,
        (None, Some(k)) => k,
        (None, None) => {
            top.issue("kind", "missing (expected a top-level kind = \"...\")");
            Kind::Check
        }
    };

    let model_t = section(&root, "model", &mut issues);
    let mut family = Family::Linear;
    {
        let mut r = Reader { table: model_t, prefix: "model", issues: &mut issues };
        match r.string("family") {
            Some("linear") | None => {}
            Some("pitchfork") => family = Family::Pitchfork,
            Some("hopf") => family = Family::Hopf,
            Some(other) => r.issue("family", format!("unknown family '{other}' (expected linear, pitchfork or hopf)")),
        }
    }
    let mut cfg = ExperimentConfig::defaults(kind, family);
    {
        let mut r = Reader { table: model_t, prefix: "model", issues: &mut issues };
        r.reject_unknown(&["family", "matrix", "rho", "radius", "stable_radius", "t", "center"]);
        if let Some(m) = r.int_rows("matrix") {
            cfg.model.matrix = m;
        }
        r.float("rho", &mut cfg.model.rho);
        r.float("radius", &mut cfg.model.radius);
        r.float("stable_radius", &mut cfg.model.stable_radius);
        r.float("t", &mut cfg.model.t);
        cfg.model.center = r.floats("center");
        if family == Family::Linear {
            for key in ["rho", "radius", "stable_radius", "t", "center"] {
                if r.value(key).is_some() {
                    r.issue(key, "only applies to the pitchfork and hopf families");
                }
            }
        }
    }
    {
        let t = section(&root, "cones", &mut issues);
        let mut r = Reader { table: t, prefix: "cones", issues: &mut issues };
        r.reject_unknown(&["width", "stable_width"]);
        r.float("width", &mut cfg.cones.width);
        r.float("stable_width", &mut cfg.cones.stable_width);
    }
    {
        let t = section(&root, "constants", &mut issues);
        let mut r = Reader { table: t, prefix: "constants", issues: &mut issues };
        r.reject_unknown(&["c", "delta", "grid", "support_grid", "resolution", "k_max", "gamma0", "stable_depth", "exclude_radius"]);
        let k = &mut cfg.constants;
        r.opt_float("c", &mut k.c);
        r.float("delta", &mut k.delta);
        r.uint("grid", &mut k.grid);
        r.uint("support_grid", &mut k.support_grid);
        r.opt_uint("resolution", &mut k.resolution);
        r.uint("k_max", &mut k.k_max);
        r.opt_float("gamma0", &mut k.gamma0);
        r.uint("stable_depth", &mut k.stable_depth);
        r.opt_float("exclude_radius", &mut k.exclude_radius);
    }
    {
        let t = section(&root, "run", &mut issues);
        let mut r = Reader { table: t, prefix: "run", issues: &mut issues };
        r.reject_unknown(&["iters", "samples", "starts", "disk_radius", "seed", "out", "workers"]);
        let run = &mut cfg.run;
        r.uint("iters", &mut run.iters);
        r.uint("samples", &mut run.samples);
        r.uint("starts", &mut run.starts);
        r.float("disk_radius", &mut run.disk_radius);
        let mut seed = run.seed as usize;
        r.uint("seed", &mut seed);
        run.seed = seed as u64;
        run.out = r.string("out").map(str::to_string);
        r.uint("workers", &mut run.workers);
    }
    {
        let t = section(&root, "sweep", &mut issues);
        let mut r = Reader { table: t, prefix: "sweep", issues: &mut issues };
        r.reject_unknown(&["t_start", "t_stop", "t_step", "entropy", "certify"]);
        let s = &mut cfg.sweep;
        r.float("t_start", &mut s.t_start);
        r.float("t_stop", &mut s.t_stop);
        r.float("t_step", &mut s.t_step);
        r.boolean("entropy", &mut s.entropy);
        r.boolean("certify", &mut s.certify);
    }
    {
        let t = section(&root, "point", &mut issues);
        let mut r = Reader { table: t, prefix: "point", issues: &mut issues };
        r.reject_unknown(&["x", "depth"]);
        cfg.point.x = r.floats("x");
        r.uint("depth", &mut cfg.point.depth);
    }
    if issues.is_empty() {
        issues = cfg.validate();
    } else {
        // still report range problems in fields that parsed
        let extra = cfg.validate();
        issues.extend(extra.into_iter().filter(|i| i.path != "model"));
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

/// [`parse_config_for`] with the experiment taken from the file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_for(text, None)
}

/// Parses `start:stop:step`.
pub fn parse_t_range(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:stop:step, got '{s}'"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("'{p}' is not a number"))?;
    }
    Ok((v[0], v[1], v[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("kind = \"srb\"\n").unwrap();
        assert_eq!(c.kind, Kind::Srb);
        assert_eq!(c.model.family, Family::Linear);
        assert_eq!(c.model.matrix, cat_matrix());
        assert_eq!(c.constants.k_max, 8);
        assert!(c.build_model().is_ok());
    }

    #[test]
    fn singular_matrix_rejected() {
        let err = parse_config("kind = \"srb\"\n[model]\nmatrix = [[1, 2], [2, 4]]\n").unwrap_err();
        assert_eq!(err.issues(), &[Issue { path: "model.matrix".into(), message: "matrix singular".into() }]);
    }

    #[test]
    fn rho_outside_interval_cites_it() {
        let err = parse_config("kind = \"check\"\n[model]\nfamily = \"pitchfork\"\nrho = 0.3\n").unwrap_err();
        let issue = &err.issues()[0];
        assert_eq!(issue.path, "model.rho");
        assert!(issue.message.contains("(0.382, 1.000)"), "{}", issue.message);
    }

    #[test]
    fn all_problems_reported_together() {
        let text = "kind = \"sweep\"\nbogus = 1\n[run]\niters = \"many\"\nsamples = -3\n[cones]\nwidth = -1\nextra = true\n";
        let err = parse_config(text).unwrap_err();
        let paths: Vec<&str> = err.issues().iter().map(|i| i.path.as_str()).collect();
        for want in ["bogus", "run.iters", "run.samples", "cones.extra", "cones.width"] {
            assert!(paths.contains(&want), "{paths:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("kind = \"srb\"\n[model\n").unwrap_err() {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn kind_must_match_command() {
        assert!(parse_config_for("kind = \"srb\"\n", Some(Kind::Check)).is_err());
        assert_eq!(parse_config_for("", Some(Kind::Check)).unwrap().kind, Kind::Check);
        assert!(parse_config("").is_err());
    }

    #[test]
    fn sweep_grid_and_range() {
        let s = SweepSection { t_start: 0.0, t_stop: 1.0, t_step: 0.25, entropy: false, certify: false };
        assert_eq!(s.grid(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = SweepSection { t_step: 0.1, ..s };
        assert_eq!(s.grid().len(), 11);
        assert_eq!(parse_t_range("0:1:0.5").unwrap(), (0.0, 1.0, 0.5));
        assert!(parse_t_range("0:1").is_err());
    }

    #[test]
    fn canonical_json_ignores_placement() {
        let a = parse_config("kind = \"srb\"\n[run]\nout = \"a\"\nworkers = 4\n").unwrap();
        let b = parse_config("kind = \"srb\"\n[run]\nout = \"b\"\nworkers = 1\n").unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }
}
