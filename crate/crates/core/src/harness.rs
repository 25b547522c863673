//! Experiment configuration, parallel trajectory execution, aggregation and
//! result files.
//!
//! Configuration documents are TOML with three tables: top-level run keys,
//! `[circuit]` for per-trajectory settings and `[sweep]` for the grid (each
//! sweep key accepts a scalar or a list). Optional `[collapse]` and
//! `[replica]` tables configure the analysis experiments. See the README for
//! the full key list.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::channels::ChannelTag;
use crate::circuit::{
    run_trajectory_with, ChannelSpec, CircuitSpec, EventKind, Geometry, LayerDir, DEFAULT_EVENT_ORDER,
    DEFAULT_LAYER_ORDER,
};
use crate::collapse::{fit_collapse, polyfit, poly_eval, CollapseOptions, CollapseResult, ScanPoint};
use crate::error::{Error, Result};
use crate::observables::{Observable, PartitionScheme};
use crate::replica::{self, BondKind, DephasingOperator, Permutation, ReplicaParams, SymmetryReport};
use crate::stab::InitialState;
use crate::tableau::CompressedTableau;

pub const CSV_HEADER: &str = "experiment,L,p,q_n,q_e,observable,mean,stderr,n_samples,wall_seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Scan,
    Collapse,
    Purification,
    NoiseEstimate,
    UnequalRates,
    ReplicaVerify,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Scan,
        ExperimentKind::Collapse,
        ExperimentKind::Purification,
        ExperimentKind::NoiseEstimate,
        ExperimentKind::UnequalRates,
        ExperimentKind::ReplicaVerify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Scan => "scan",
            ExperimentKind::Collapse => "collapse",
            ExperimentKind::Purification => "purification",
            ExperimentKind::NoiseEstimate => "noise_estimate",
            ExperimentKind::UnequalRates => "unequal_rates",
            ExperimentKind::ReplicaVerify => "replica_verify",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn default_observables(self) -> Vec<Observable> {
        match self {
            ExperimentKind::Purification => vec![Observable::CeeFull],
            ExperimentKind::NoiseEstimate => vec![Observable::CeeHalf],
            _ => vec![Observable::I3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Chain,
    Square,
}

impl GeometryKind {
    pub fn with_size(self, l: usize) -> Geometry {
        match self {
            GeometryKind::Chain => Geometry::Chain(l),
            GeometryKind::Square => Geometry::Square(l),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub geometry: GeometryKind,
    pub noise: ChannelTag,
    pub qe: ChannelTag,
    /// Explicit depth; `None` means `depth_factor · L`.
    pub depth: Option<usize>,
    pub depth_factor: usize,
    pub initial: InitialState,
    pub event_order: [EventKind; 3],
    pub layer_order: [LayerDir; 4],
    /// Number of final steps whose layer-averaged values are averaged into
    /// the trajectory value.
    pub record_steps: usize,
    pub partition: PartitionScheme,
    pub observables: Vec<Observable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub l: Vec<usize>,
    pub p: Vec<f64>,
    /// Total rates, split evenly unless `ratio` is given.
    pub q: Vec<f64>,
    /// Explicit rate pairs (zipped); used instead of `q` when non-empty.
    pub q_n: Vec<f64>,
    pub q_e: Vec<f64>,
    /// Values of `q_n / q` for noise estimation.
    pub ratio: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseConfig {
    pub observable: Observable,
    pub poly_order: usize,
    pub threshold: f64,
    pub weighted: bool,
    /// Existing results CSV to fit instead of simulating.
    pub input: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub q: Vec<usize>,
    pub d: u64,
    pub p: f64,
    pub q_n: f64,
    pub q_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub n_realizations: usize,
    pub output: String,
    pub threads: Threads,
    /// Record wall-clock seconds in the CSV (breaks byte-identical output).
    pub timing: bool,
    pub circuit: CircuitConfig,
    pub sweep: SweepConfig,
    pub collapse: CollapseConfig,
    pub replica: ReplicaConfig,
}

impl ExperimentConfig {
    /// Defaults for an experiment kind with an empty sweep.
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: 0,
            n_realizations: 2000,
            output: "results".into(),
            threads: Threads::Auto,
            timing: false,
            circuit: CircuitConfig {
                geometry: GeometryKind::Square,
                noise: ChannelTag::Dephasing,
                qe: ChannelTag::Dephasing,
                depth: None,
                depth_factor: 10,
                initial: if experiment == ExperimentKind::Purification {
                    InitialState::MaximallyMixed
                } else {
                    InitialState::PureZero
                },
                event_order: DEFAULT_EVENT_ORDER,
                layer_order: DEFAULT_LAYER_ORDER,
                record_steps: 1,
                partition: PartitionScheme::Strips,
                observables: experiment.default_observables(),
            },
            sweep: SweepConfig { l: Vec::new(), p: Vec::new(), q: Vec::new(), q_n: Vec::new(), q_e: Vec::new(), ratio: Vec::new() },
            collapse: CollapseConfig { observable: Observable::I3, poly_order: 12, threshold: 1.01, weighted: false, input: None },
            replica: ReplicaConfig { q: vec![2, 3], d: 2, p: 0.3, q_n: 0.2, q_e: 0.2 },
        }
    }

    /// Depth for size `l` (purification defaults to `t = L`).
    pub fn depth_for(&self, l: usize) -> usize {
        match (self.circuit.depth, self.experiment) {
            (Some(d), _) => d,
            (None, ExperimentKind::Purification) => l,
            (None, _) => self.circuit.depth_factor * l,
        }
    }

    /// `(q_n, q_e)` pairs swept by this config.
    pub fn rate_pairs(&self) -> Vec<(f64, f64)> {
        let s = &self.sweep;
        if !s.ratio.is_empty() {
            let qs = if s.q.is_empty() { vec![0.0] } else { s.q.clone() };
            return qs.iter().flat_map(|&q| s.ratio.iter().map(move |&r| (r * q, (1.0 - r) * q))).collect();
        }
        if !s.q_n.is_empty() || !s.q_e.is_empty() {
            return s.q_n.iter().copied().zip(s.q_e.iter().copied()).collect();
        }
        if s.q.is_empty() {
            return vec![(0.0, 0.0)];
        }
        s.q.iter().map(|&q| (q / 2.0, q / 2.0)).collect()
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &l in &self.sweep.l {
            for &(q_n, q_e) in &self.rate_pairs() {
                for &p in &self.sweep.p {
                    out.push(GridPoint { l, p, q_n, q_e });
                }
            }
        }
        out
    }

    pub fn circuit_spec(&self, g: &GridPoint) -> CircuitSpec {
        let geometry = self.circuit.geometry.with_size(g.l);
        let depth = self.depth_for(g.l);
        let mut spec = CircuitSpec::new(geometry, g.p).with_depth(depth).with_initial(self.circuit.initial);
        if g.q_n > 0.0 || g.q_e > 0.0 {
            spec = spec.with_channel(ChannelSpec { noise: self.circuit.noise, qe: self.circuit.qe, q_n: g.q_n, q_e: g.q_e });
        }
        spec.event_order = self.circuit.event_order;
        spec.layer_order = self.circuit.layer_order;
        spec.partition = self.circuit.partition;
        spec.master_seed = point_seed(self.seed, self.experiment, g);
        spec.record_last(self.circuit.record_steps)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config { key: key.into(), line: 0, message };
        if self.n_realizations == 0 {
            return Err(err("n_realizations", "must be at least 1".into()));
        }
        let prob = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(err(key, format!("{v}: probability out of range")))
            }
        };
        for &v in &self.sweep.p {
            prob("p", v)?;
        }
        for &v in &self.sweep.q {
            prob("q", v)?;
        }
        for &v in &self.sweep.q_n {
            prob("q_n", v)?;
        }
        for &v in &self.sweep.q_e {
            prob("q_e", v)?;
        }
        for &v in &self.sweep.ratio {
            prob("ratio", v)?;
        }
        for (a, b) in self.rate_pairs() {
            prob("q_n + q_e", a + b)?;
        }
        if self.sweep.q_n.len() != self.sweep.q_e.len() {
            return Err(err("q_e", "q_n and q_e lists must have equal length".into()));
        }
        if self.circuit.record_steps == 0 {
            return Err(err("record_steps", "must be at least 1".into()));
        }
        if self.circuit.depth == Some(0) || self.circuit.depth_factor == 0 {
            return Err(err("depth", "must be at least 1".into()));
        }
        let needs_grid = !matches!(self.experiment, ExperimentKind::ReplicaVerify)
            && !(self.experiment == ExperimentKind::Collapse && self.collapse.input.is_some());
        if needs_grid {
            if self.sweep.l.is_empty() {
                return Err(err("L", "sweep list must not be empty".into()));
            }
            if self.sweep.p.is_empty() {
                return Err(err("p", "sweep list must not be empty".into()));
            }
            for &l in &self.sweep.l {
                self.circuit.geometry.with_size(l).validate().map_err(|e| err("L", e.to_string()))?;
            }
        }
        if self.experiment == ExperimentKind::NoiseEstimate && self.sweep.ratio.is_empty() {
            return Err(err("ratio", "noise estimation needs a ratio sweep".into()));
        }
        if self.experiment == ExperimentKind::ReplicaVerify {
            if self.replica.q.is_empty() || self.replica.q.iter().any(|q| !(2..=5).contains(q)) {
                return Err(err("q", "replica counts must lie in 2..=5".into()));
            }
            prob("p", self.replica.p)?;
            prob("q_n", self.replica.q_n)?;
            prob("q_e", self.replica.q_e)?;
        }
        if self.collapse.threshold < 1.0 {
            return Err(err("threshold", "must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering; parses back to an equal config.
    pub fn to_toml_string(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let list_f = |v: &[f64]| format!("[{}]", v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", "));
        let list_s = |v: Vec<&str>| format!("[{}]", v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", "));
        let mut s = String::new();
        s += &format!("experiment = \"{}\"\n", self.experiment.name());
        s += &format!("seed = {}\n", self.seed);
        s += &format!("n_realizations = {}\n", self.n_realizations);
        s += &format!("output = {:?}\n", self.output);
        s += &match self.threads {
            Threads::Auto => "threads = \"auto\"\n".to_string(),
            Threads::Fixed(n) => format!("threads = {n}\n"),
        };
        s += &format!("timing = {}\n", self.timing);
        let c = &self.circuit;
        s += "\n[circuit]\n";
        s += &format!("geometry = \"{}\"\n", if c.geometry == GeometryKind::Chain { "chain" } else { "square" });
        s += &format!("noise = \"{}\"\nqe = \"{}\"\n", c.noise.name(), c.qe.name());
        if let Some(d) = c.depth {
            s += &format!("depth = {d}\n");
        }
        s += &format!("depth_factor = {}\n", c.depth_factor);
        s += &format!(
            "initial = \"{}\"\n",
            if c.initial == InitialState::PureZero { "pure_zero" } else { "maximally_mixed" }
        );
        s += &format!("event_order = {}\n", list_s(c.event_order.iter().map(|e| event_name(*e)).collect()));
        s += &format!("layer_order = {}\n", list_s(c.layer_order.iter().map(|d| layer_name(*d)).collect()));
        s += &format!("record_steps = {}\n", c.record_steps);
        s += &format!(
            "partition = \"{}\"\n",
            if c.partition == PartitionScheme::Strips { "strips" } else { "quadrants" }
        );
        s += &format!("observables = {}\n", list_s(c.observables.iter().map(|o| o.name()).collect()));
        let w = &self.sweep;
        s += "\n[sweep]\n";
        s += &format!("L = [{}]\n", w.l.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "));
        s += &format!("p = {}\n", list_f(&w.p));
        s += &format!("q = {}\n", list_f(&w.q));
        s += &format!("q_n = {}\n", list_f(&w.q_n));
        s += &format!("q_e = {}\n", list_f(&w.q_e));
        s += &format!("ratio = {}\n", list_f(&w.ratio));
        let k = &self.collapse;
        s += "\n[collapse]\n";
        s += &format!("observable = \"{}\"\n", k.observable.name());
        s += &format!("poly_order = {}\nthreshold = {}\nweighted = {}\n", k.poly_order, f(k.threshold), k.weighted);
        if let Some(i) = &k.input {
            s += &format!("input = {i:?}\n");
        }
        let r = &self.replica;
        s += "\n[replica]\n";
        s += &format!("q = [{}]\n", r.q.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "));
        s += &format!("d = {}\np = {}\nq_n = {}\nq_e = {}\n", r.d, f(r.p), f(r.q_n), f(r.q_e));
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

fn event_name(e: EventKind) -> &'static str {
    match e {
        EventKind::Measure => "measure",
        EventKind::Noise => "noise",
        EventKind::Qe => "qe",
    }
}

fn layer_name(d: LayerDir) -> &'static str {
    match d {
        LayerDir::HorizontalEven => "horizontal_even",
        LayerDir::HorizontalOdd => "horizontal_odd",
        LayerDir::VerticalEven => "vertical_even",
        LayerDir::VerticalOdd => "vertical_odd",
    }
}

/// Seed of one grid point: hash of the master seed and the point's
/// parameters, so adding points leaves existing ones untouched.
pub fn point_seed(master: u64, kind: ExperimentKind, g: &GridPoint) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(kind.name().as_bytes());
    h.update((g.l as u64).to_le_bytes());
    h.update(g.p.to_bits().to_le_bytes());
    h.update(g.q_n.to_bits().to_le_bytes());
    h.update(g.q_e.to_bits().to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

// ---------------------------------------------------------------------------
// parsing

/// Line (1-based) of `key` inside `section` (`""` for the top level).
fn line_of(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return i + 1;
                }
            }
        }
    }
    0
}

struct Ctx<'a> {
    text: &'a str,
    section: &'a str,
}

impl Ctx<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config { key: key.into(), line: line_of(self.text, self.section, key), message: message.into() }
    }

    fn str(&self, key: &str, v: &Value) -> Result<String> {
        v.as_str().map(str::to_string).ok_or_else(|| self.err(key, "expected a string"))
    }

    fn float(&self, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(key, "expected a number")),
        }
    }

    fn uint(&self, key: &str, v: &Value) -> Result<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(self.err(key, "expected a non-negative integer")),
        }
    }

    fn boolean(&self, key: &str, v: &Value) -> Result<bool> {
        v.as_bool().ok_or_else(|| self.err(key, "expected true or false"))
    }

    fn list<T>(&self, _key: &str, v: &Value, f: impl Fn(&Value) -> Result<T>) -> Result<Vec<T>> {
        match v {
            Value::Array(a) => a.iter().map(f).collect(),
            other => Ok(vec![f(other)?]),
        }
    }

    fn prob(&self, key: &str, v: f64) -> Result<f64> {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(self.err(key, format!("{v}: probability out of range")))
        }
    }
}

fn table<'a>(root: &'a toml::Table, name: &str, text: &str) -> Result<Option<&'a toml::Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::Config { key: name.into(), line: line_of(text, "", name), message: "expected a table".into() }),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: toml::Table = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        Error::Config { key: String::new(), line, message: e.message().to_string() }
    })?;
    let top = Ctx { text, section: "" };
    let kind = match root.get("experiment") {
        Some(v) => {
            let s = top.str("experiment", v)?;
            ExperimentKind::parse(&s).ok_or_else(|| top.err("experiment", format!("unknown experiment {s:?}")))?
        }
        None => ExperimentKind::Scan,
    };
    let mut cfg = ExperimentConfig::new(kind);
    for (k, v) in &root {
        match k.as_str() {
            "experiment" | "circuit" | "sweep" | "collapse" | "replica" => {}
            "seed" => cfg.seed = top.uint(k, v)?,
            "n_realizations" => cfg.n_realizations = top.uint(k, v)? as usize,
            "output" => cfg.output = top.str(k, v)?,
            "timing" => cfg.timing = top.boolean(k, v)?,
            "threads" => {
                cfg.threads = match v {
                    Value::String(s) if s == "auto" => Threads::Auto,
                    Value::Integer(n) if *n >= 1 => Threads::Fixed(*n as usize),
                    _ => return Err(top.err(k, "expected \"auto\" or a positive integer")),
                }
            }
            other => return Err(top.err(other, "unknown key")),
        }
    }

    if let Some(t) = table(&root, "circuit", text)? {
        let c = Ctx { text, section: "circuit" };
        for (k, v) in t {
            let cc = &mut cfg.circuit;
            match k.as_str() {
                "geometry" => {
                    cc.geometry = match c.str(k, v)?.as_str() {
                        "chain" => GeometryKind::Chain,
                        "square" => GeometryKind::Square,
                        s => return Err(c.err(k, format!("unknown geometry {s:?}"))),
                    }
                }
                "noise" | "qe" => {
                    let s = c.str(k, v)?;
                    let tag = ChannelTag::parse(&s).ok_or_else(|| c.err(k, format!("unknown channel {s:?}")))?;
                    if k == "noise" {
                        cc.noise = tag;
                    } else {
                        cc.qe = tag;
                    }
                }
                "depth" => cc.depth = Some(c.uint(k, v)? as usize),
                "depth_factor" => cc.depth_factor = c.uint(k, v)? as usize,
                "initial" => {
                    cc.initial = match c.str(k, v)?.as_str() {
                        "pure_zero" => InitialState::PureZero,
                        "maximally_mixed" => InitialState::MaximallyMixed,
                        s => return Err(c.err(k, format!("unknown initial state {s:?}"))),
                    }
                }
                "event_order" => {
                    let v = c.list(k, v, |x| {
                        let s = c.str(k, x)?;
                        [EventKind::Measure, EventKind::Noise, EventKind::Qe]
                            .into_iter()
                            .find(|e| event_name(*e) == s)
                            .ok_or_else(|| c.err(k, format!("unknown event {s:?}")))
                    })?;
                    cc.event_order = v.try_into().map_err(|_| c.err(k, "expected three events"))?;
                }
                "layer_order" => {
                    let v = c.list(k, v, |x| {
                        let s = c.str(k, x)?;
                        DEFAULT_LAYER_ORDER
                            .into_iter()
                            .find(|d| layer_name(*d) == s)
                            .ok_or_else(|| c.err(k, format!("unknown layer {s:?}")))
                    })?;
                    cc.layer_order = v.try_into().map_err(|_| c.err(k, "expected four layers"))?;
                }
                "record_steps" => cc.record_steps = c.uint(k, v)? as usize,
                "partition" => {
                    cc.partition = match c.str(k, v)?.as_str() {
                        "strips" => PartitionScheme::Strips,
                        "quadrants" => PartitionScheme::Quadrants,
                        s => return Err(c.err(k, format!("unknown partition {s:?}"))),
                    }
                }
                "observables" => {
                    cc.observables = c.list(k, v, |x| {
                        let s = c.str(k, x)?;
                        Observable::parse(&s).ok_or_else(|| c.err(k, format!("unknown observable {s:?}")))
                    })?
                }
                other => return Err(c.err(other, "unknown key")),
            }
        }
    }

    if let Some(t) = table(&root, "sweep", text)? {
        let c = Ctx { text, section: "sweep" };
        for (k, v) in t {
            let probs = |key: &str| c.list(key, v, |x| c.prob(key, c.float(key, x)?));
            match k.as_str() {
                "L" => cfg.sweep.l = c.list(k, v, |x| c.uint(k, x).map(|u| u as usize))?,
                "p" => cfg.sweep.p = probs(k)?,
                "q" => cfg.sweep.q = probs(k)?,
                "q_n" => cfg.sweep.q_n = probs(k)?,
                "q_e" => cfg.sweep.q_e = probs(k)?,
                "ratio" => cfg.sweep.ratio = probs(k)?,
                other => return Err(c.err(other, "unknown key")),
            }
        }
    }

    if let Some(t) = table(&root, "collapse", text)? {
        let c = Ctx { text, section: "collapse" };
        for (k, v) in t {
            match k.as_str() {
                "observable" => {
                    let s = c.str(k, v)?;
                    cfg.collapse.observable =
                        Observable::parse(&s).ok_or_else(|| c.err(k, format!("unknown observable {s:?}")))?;
                }
                "poly_order" => cfg.collapse.poly_order = c.uint(k, v)? as usize,
                "threshold" => cfg.collapse.threshold = c.float(k, v)?,
                "weighted" => cfg.collapse.weighted = c.boolean(k, v)?,
                "input" => cfg.collapse.input = Some(c.str(k, v)?),
                other => return Err(c.err(other, "unknown key")),
            }
        }
    }

    if let Some(t) = table(&root, "replica", text)? {
        let c = Ctx { text, section: "replica" };
        for (k, v) in t {
            match k.as_str() {
                "q" => cfg.replica.q = c.list(k, v, |x| c.uint(k, x).map(|u| u as usize))?,
                "d" => cfg.replica.d = c.uint(k, v)?,
                "p" => cfg.replica.p = c.prob(k, c.float(k, v)?)?,
                "q_n" => cfg.replica.q_n = c.prob(k, c.float(k, v)?)?,
                "q_e" => cfg.replica.q_e = c.prob(k, c.float(k, v)?)?,
                other => return Err(c.err(other, "unknown key")),
            }
        }
    }

    cfg.validate().map_err(|e| match e {
        Error::Config { key, message, .. } => {
            let section = ["sweep", "circuit", "collapse", "replica", ""]
                .into_iter()
                .find(|s| line_of(text, s, &key) > 0)
                .unwrap_or("");
            Error::Config { line: line_of(text, section, &key), key, message }
        }
        other => other,
    })?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// execution

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub l: usize,
    pub p: f64,
    pub q_n: f64,
    pub q_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub l: usize,
    pub p: f64,
    pub q_n: f64,
    pub q_e: f64,
    pub observable: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub wall_seconds: f64,
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`), summed in the given order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let sum: f64 = values.iter().sum();
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt())
}

fn pool(threads: Threads) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Threads::Fixed(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Other(format!("thread pool: {e}")))
}

/// Per-trajectory values (mean over recorded steps) for one grid point, in
/// trajectory order.
pub fn simulate_point(spec: &CircuitSpec, observables: &[Observable], n: usize) -> Result<Vec<Vec<f64>>> {
    let sites = spec.geometry.num_sites();
    let per_traj: Vec<Result<Vec<f64>>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let rec = run_trajectory_with(spec, observables, i, || CompressedTableau::new(sites, spec.initial))?;
            Ok(observables.iter().map(|&o| rec.recorded_mean(o).unwrap_or(f64::NAN)).collect())
        })
        .collect();
    per_traj.into_iter().collect()
}

fn rows_for(cfg: &ExperimentConfig, g: &GridPoint, values: &[Vec<f64>], wall: f64) -> Vec<ResultRow> {
    cfg.circuit
        .observables
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
            let (mean, stderr) = mean_stderr(&col);
            ResultRow {
                experiment: cfg.experiment.name().into(),
                l: g.l,
                p: g.p,
                q_n: g.q_n,
                q_e: g.q_e,
                observable: o.name().into(),
                mean,
                stderr,
                n_samples: col.len(),
                wall_seconds: if cfg.timing { wall } else { 0.0 },
            }
        })
        .collect()
}

fn csv_line(r: &ResultRow) -> String {
    format!(
        "{},{},{:?},{:?},{:?},{},{:?},{:?},{},{:?}",
        r.experiment, r.l, r.p, r.q_n, r.q_e, r.observable, r.mean, r.stderr, r.n_samples, r.wall_seconds
    )
}

/// Writes a complete CSV (header plus rows, in the given order).
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s += &csv_line(r);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Other(format!("{}: {e}", path.display())))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::InvalidInput(format!("{}: unexpected CSV header", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::InvalidInput(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        let u = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| Error::InvalidInput(format!("{}: bad integer {:?}", path.display(), &rec[i])))
        };
        out.push(ResultRow {
            experiment: rec[0].to_string(),
            l: u(1)?,
            p: f(2)?,
            q_n: f(3)?,
            q_e: f(4)?,
            observable: rec[5].to_string(),
            mean: f(6)?,
            stderr: f(7)?,
            n_samples: u(8)?,
            wall_seconds: f(9)?,
        });
    }
    Ok(out)
}

/// Scan points of one observable.
pub fn scan_points(rows: &[ResultRow], observable: Observable) -> Vec<ScanPoint> {
    rows.iter()
        .filter(|r| r.observable == observable.name())
        .map(|r| ScanPoint { p: r.p, l: r.l, value: r.mean, stderr: r.stderr, n_samples: r.n_samples })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_toml: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub start: String,
    pub end: Option<String>,
    pub complete: bool,
    pub stderr_convention: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

/// Everything produced by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub collapse: Option<CollapseResult>,
    pub noise_estimates: Vec<(usize, std::result::Result<NoiseEstimate, String>)>,
    pub replica: Vec<SymmetryReport>,
    pub replica_identities: Vec<IdentityCheck>,
    pub files: Vec<PathBuf>,
}

/// Runs the grid of `cfg`, writing `<out>/<experiment>.csv` progressively
/// and `<out>/manifest.json`. Grid points already present in a partial CSV
/// with a matching manifest hash are not recomputed.
pub fn run_grid(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ResultRow>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join(format!("{}.csv", cfg.experiment.name()));
    let manifest_path = out.join("manifest.json");
    let hash = cfg.hash();

    let mut done: Vec<ResultRow> = Vec::new();
    if let Ok(text) = fs::read_to_string(&manifest_path) {
        if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
            if m.config_hash == hash && csv_path.exists() {
                done = read_results(&csv_path)?;
            }
        }
    }
    let start = now();
    let mut manifest = Manifest {
        config: cfg.clone(),
        config_toml: cfg.to_toml_string(),
        config_hash: hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        start,
        end: None,
        complete: false,
        stderr_convention: "sample standard deviation / sqrt(n_samples)".into(),
    };
    write_json(&manifest, &manifest_path)?;

    let grid = cfg.grid();
    let n_obs = cfg.circuit.observables.len();
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
    let tp = pool(cfg.threads)?;
    for g in &grid {
        let cached: Vec<ResultRow> = done
            .iter()
            .filter(|r| r.l == g.l && r.p == g.p && r.q_n == g.q_n && r.q_e == g.q_e)
            .cloned()
            .collect();
        let point_rows = if cached.len() == n_obs {
            cached
        } else {
            let spec = cfg.circuit_spec(g);
            let t0 = Instant::now();
            let values = tp.install(|| simulate_point(&spec, &cfg.circuit.observables, cfg.n_realizations))?;
            rows_for(cfg, g, &values, t0.elapsed().as_secs_f64())
        };
        for r in &point_rows {
            writeln!(file, "{}", csv_line(r)).map_err(|e| Error::io(&csv_path, e))?;
        }
        file.flush().map_err(|e| Error::io(&csv_path, e))?;
        rows.extend(point_rows);
    }
    manifest.end = Some(now());
    manifest.complete = true;
    write_json(&manifest, &manifest_path)?;
    Ok(rows)
}

/// Dispatches on the experiment kind. Output files go to `out` (or the
/// configured output directory).
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output));
    let mut result = ExperimentOutput::default();
    match cfg.experiment {
        ExperimentKind::Scan | ExperimentKind::Purification | ExperimentKind::UnequalRates => {
            result.rows = run_grid(cfg, &out_dir)?;
        }
        ExperimentKind::Collapse => {
            let rows = match &cfg.collapse.input {
                Some(input) => read_results(Path::new(input))?,
                None => run_grid(cfg, &out_dir)?,
            };
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let opts = CollapseOptions {
                poly_order: cfg.collapse.poly_order,
                weighted: cfg.collapse.weighted,
                threshold: cfg.collapse.threshold,
                ..CollapseOptions::default()
            };
            let fit = fit_collapse(&scan_points(&rows, cfg.collapse.observable), &opts)?;
            let path = out_dir.join("collapse.json");
            write_json(&fit, &path)?;
            result.files.push(path);
            result.collapse = Some(fit);
            result.rows = rows;
        }
        ExperimentKind::NoiseEstimate => {
            let rows = run_grid(cfg, &out_dir)?;
            let mut sizes: Vec<usize> = rows.iter().map(|r| r.l).collect();
            sizes.dedup();
            let mut json = Vec::new();
            for l in sizes {
                let est = estimate_noise_rate(&rows, l);
                json.push(serde_json::json!({
                    "L": l,
                    "estimate": est.as_ref().ok(),
                    "error": est.as_ref().err().map(|e| e.to_string()),
                }));
                result.noise_estimates.push((l, est.map_err(|e| e.to_string())));
            }
            let path = out_dir.join("noise_estimate.json");
            write_json(&json, &path)?;
            result.files.push(path);
            result.rows = rows;
        }
        ExperimentKind::ReplicaVerify => {
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let (ids, reports) = replica_verify(&cfg.replica)?;
            let path = out_dir.join("replica_verify.json");
            write_json(&serde_json::json!({ "identities": ids, "symmetry": reports }), &path)?;
            result.files.push(path);
            result.replica = reports;
            result.replica_identities = ids;
        }
    }
    if matches!(cfg.experiment, ExperimentKind::Scan | ExperimentKind::Purification | ExperimentKind::UnequalRates | ExperimentKind::NoiseEstimate)
        || (cfg.experiment == ExperimentKind::Collapse && cfg.collapse.input.is_none())
    {
        result.files.push(out_dir.join(format!("{}.csv", cfg.experiment.name())));
        result.files.push(out_dir.join("manifest.json"));
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// noise-rate estimation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub l: usize,
    pub ratio: f64,
    pub lo: f64,
    pub hi: f64,
    /// `(p_a, p_b, crossing ratio)` for every pair of measurement rates.
    pub pairs: Vec<(f64, f64, f64)>,
}

/// Intersection ratio `q_n / q` of the `cee_half` curves for different `p`
/// at size `l`. Each curve is fitted with a polynomial of degree
/// `min(3, points - 2)`; each pair's crossing is the root of the fitted
/// difference inside the scanned range closest to its centre.
pub fn estimate_noise_rate(rows: &[ResultRow], l: usize) -> Result<NoiseEstimate> {
    let mut ps: Vec<f64> = Vec::new();
    let sel: Vec<&ResultRow> =
        rows.iter().filter(|r| r.l == l && r.observable == Observable::CeeHalf.name()).collect();
    for r in &sel {
        if !ps.contains(&r.p) {
            ps.push(r.p);
        }
    }
    ps.sort_by(f64::total_cmp);
    if ps.len() < 2 {
        return Err(Error::InvalidInput(format!("L = {l}: need at least two measurement rates, got {}", ps.len())));
    }
    let mut fits = Vec::new();
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in &ps {
        let mut pts: Vec<(f64, f64)> = sel
            .iter()
            .filter(|r| r.p == p)
            .map(|r| {
                let q = r.q_n + r.q_e;
                (if q > 0.0 { r.q_n / q } else { 0.5 }, r.mean)
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() < 4 {
            return Err(Error::InvalidInput(format!("L = {l}, p = {p}: need at least four ratio points")));
        }
        rmin = rmin.min(pts[0].0);
        rmax = rmax.max(pts[pts.len() - 1].0);
        let x: Vec<f64> = pts.iter().map(|v| v.0).collect();
        let y: Vec<f64> = pts.iter().map(|v| v.1).collect();
        let order = 3.min(pts.len() - 2);
        let (c, s, _) = polyfit(&x, &y, None, order)?;
        fits.push((p, c, s, y.iter().fold(0.0f64, |a, v| a.max(v.abs()))));
    }
    let mut pairs = Vec::new();
    for i in 0..fits.len() {
        for j in i + 1..fits.len() {
            let (pa, ca, sa, ya) = &fits[i];
            let (pb, cb, sb, yb) = &fits[j];
            let diff = |x: f64| poly_eval(ca, *sa, x) - poly_eval(cb, *sb, x);
            let n = 2000;
            let xs: Vec<f64> = (0..=n).map(|k| rmin + (rmax - rmin) * k as f64 / n as f64).collect();
            let ds: Vec<f64> = xs.iter().map(|&x| diff(x)).collect();
            let scale = ya.max(*yb).max(1e-300);
            if ds.iter().all(|d| d.abs() <= 1e-9 * scale) {
                return Err(Error::Fit(format!("degenerate intersection: curves p = {pa} and p = {pb} coincide")));
            }
            let mut roots = Vec::new();
            for k in 0..n {
                if ds[k] == 0.0 {
                    roots.push(xs[k]);
                } else if ds[k] * ds[k + 1] < 0.0 {
                    let (mut a, mut b) = (xs[k], xs[k + 1]);
                    for _ in 0..60 {
                        let m = 0.5 * (a + b);
                        if diff(a) * diff(m) <= 0.0 {
                            b = m;
                        } else {
                            a = m;
                        }
                    }
                    roots.push(0.5 * (a + b));
                }
            }
            if ds[n] == 0.0 {
                roots.push(xs[n]);
            }
            let centre = 0.5 * (rmin + rmax);
            let Some(root) = roots.into_iter().min_by(|a, b| (a - centre).abs().total_cmp(&(b - centre).abs())) else {
                return Err(Error::Fit(format!(
                    "curves p = {pa} and p = {pb} do not intersect in [{rmin}, {rmax}] (differences {:.4} to {:.4})",
                    ds[0], ds[n]
                )));
            };
            pairs.push((*pa, *pb, root));
        }
    }
    let ratio = pairs.iter().map(|v| v.2).sum::<f64>() / pairs.len() as f64;
    let lo = pairs.iter().map(|v| v.2).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(NoiseEstimate { l, ratio, lo, hi, pairs })
}

// ---------------------------------------------------------------------------
// replica verification

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub q: usize,
    pub checked: usize,
    pub violations: usize,
}

/// The cyclic element used for replica count `q`: the transposition at
/// `Q = 2`, otherwise a single `(Q-1)`-cycle block (`n = Q - 1`, `k = 1`).
pub fn default_cyclic(q: usize) -> Permutation {
    if q == 2 {
        Permutation::transposition(2, 0, 1)
    } else {
        Permutation::block_cyclic(q - 1, 1)
    }
}

/// Checks the `𝒩`/`𝒬` identities for `Q ≤ 4` and runs the bond-weight
/// symmetry checks for every configured `Q` and kind.
pub fn replica_verify(cfg: &ReplicaConfig) -> Result<(Vec<IdentityCheck>, Vec<SymmetryReport>)> {
    let mut ids = Vec::new();
    for &q in &cfg.q {
        let params = ReplicaParams::with_cyclic(default_cyclic(q), cfg.d)?;
        if q <= 4 {
            let id = params.identity();
            let ci = params.cyclic.inverse();
            let mut n_check = IdentityCheck { name: "N_identity".into(), q, checked: 0, violations: 0 };
            let mut q_check = IdentityCheck { name: "Q_cyclic".into(), q, checked: 0, violations: 0 };
            for s in Permutation::all(q) {
                n_check.checked += 1;
                let want = replica::inner(&s, &Permutation::identity(q), cfg.d)?;
                if replica::dephasing_exact_inner(&s, &id, &params, DephasingOperator::N)? != (cfg.d).pow(s.cycle_count() as u32)
                    || want != (cfg.d).pow(s.cycle_count() as u32)
                {
                    n_check.violations += 1;
                }
                q_check.checked += 1;
                let want = (cfg.d).pow(s.compose(&ci).cycle_count() as u32);
                if replica::dephasing_exact_inner(&s, &params.cyclic, &params, DephasingOperator::QOp)? != want {
                    q_check.violations += 1;
                }
            }
            ids.push(n_check);
            ids.push(q_check);
        }
    }
    let mut reports = Vec::new();
    for &q in &cfg.q {
        let params = ReplicaParams::with_cyclic(default_cyclic(q), cfg.d)?;
        for kind in BondKind::ALL {
            reports.push(replica::symmetry_check(&params, kind, cfg.p, cfg.q_n, cfg.q_e)?);
        }
    }
    Ok((ids, reports))
}

/// Distinct sizes present in `rows`, ascending.
pub fn sizes(rows: &[ResultRow]) -> Vec<usize> {
    rows.iter().map(|r| r.l).collect::<BTreeSet<_>>().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scan_config() {
        let cfg = parse_config(
            "experiment = \"scan\"\n[circuit]\ngeometry = \"square\"\n[sweep]\nL = [8]\np = [0.1, 0.3]\nq = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.depth_for(8), 80);
        assert_eq!(cfg.collapse.threshold, 1.01);
        assert_eq!(cfg.collapse.poly_order, 12);
        assert_eq!(cfg.rate_pairs(), vec![(0.05, 0.05)]);
    }

    #[test]
    fn out_of_range_rate_rejected() {
        let e = parse_config("[sweep]\nL = 8\np = 0.1\nq_n = 1.2\nq_e = 0.1\n").unwrap_err();
        let s = e.to_string();
        assert!(s.contains("probability out of range"), "{s}");
        assert!(s.contains("line 4"), "{s}");
    }

    #[test]
    fn unknown_key_named_with_line() {
        let e = parse_config("[sweep]\nL = 8\np = 0.1\n\n[circuit]\ncolour = \"red\"\n").unwrap_err();
        let s = e.to_string();
        assert!(s.contains("colour") && s.contains("line 6"), "{s}");
    }

    #[test]
    fn type_mismatch_rejected() {
        assert!(parse_config("n_realizations = \"many\"\n[sweep]\nL = 8\np = 0.1\n").is_err());
    }

    #[test]
    fn aggregation_matches_definition() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (1.6666666666666667f64).sqrt() / 2.0).abs() < 1e-15);
    }
}
