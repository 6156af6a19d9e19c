//! Scenario and QP-instance files.
//!
//! Both formats are sectioned `key = value` text:
//!
//! ```text
//! # comment
//! [graph]
//! vertices = 3
//! edge = 1 2        # tail head, 1-indexed, one line per edge
//! edge = 2 3
//! terminal = 1 +1   # vertex sign
//! ```
//!
//! Lists are separated by whitespace or commas. A single value given for a
//! per-vertex or per-edge key is broadcast. `inf` and `-inf` are accepted.
//! The full grammar is documented in `docs/scenario-format.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::adaptive::{
    AdaptiveOptions, Black2Closure, BoundSolver, ClassifierOptions, FlowBasis,
};
use crate::controller::{ClosedLoop, ConstraintPolicy, Disturbance, PIController, SystemState};
use crate::error::{Error, Result};
use crate::graph::{BoxBounds, InteriorOptions, NetworkGraph};
use crate::hamiltonian::{
    ControllerHamiltonian, HydraulicParams, StorageForm, VertexHamiltonian, MAX_EXPONENT,
};
use crate::sim::{BoundRefresh, Integrator, SimConfig};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    section: String,
    key: String,
    value: String,
    /// 0 for overrides
    line: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, format!("unterminated section header `{body}`")))?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(parse_err(line, format!("bad section name `{name}`")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, found `{body}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_err(line, "missing key before `=`"));
        }
        if section.is_empty() {
            return Err(parse_err(line, format!("key `{key}` appears before any section")));
        }
        out.push(Entry {
            section: section.clone(),
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Replaces every `section.key` entry named by an override, or appends it.
fn apply_overrides(entries: &mut Vec<Entry>, overrides: &[String]) -> Result<Vec<(String, String)>> {
    let mut echoed = Vec::new();
    for o in overrides {
        let (path, value) = o
            .split_once('=')
            .ok_or_else(|| parse_err(0, format!("override `{o}` is not of the form section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| parse_err(0, format!("override `{o}` is missing a section prefix")))?;
        let (section, key) = (section.trim(), key.trim());
        if section.is_empty() || key.is_empty() {
            return Err(parse_err(0, format!("override `{o}` has an empty section or key")));
        }
        let value = value.trim();
        entries.retain(|e| !(e.section == section && e.key == key));
        entries.push(Entry {
            section: section.into(),
            key: key.into(),
            value: value.into(),
            line: 0,
        });
        echoed.push((format!("{section}.{key}"), value.to_string()));
    }
    Ok(echoed)
}

/// Entries grouped by section with unused-key tracking.
struct Sections {
    by_section: BTreeMap<String, Vec<Entry>>,
}

struct Section<'a> {
    name: &'a str,
    entries: Vec<&'a Entry>,
    used: std::cell::RefCell<Vec<bool>>,
}

impl Sections {
    fn new(entries: Vec<Entry>, known: &[&str]) -> Result<Self> {
        let mut by_section: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
        for e in entries {
            if !known.contains(&e.section.as_str()) {
                return Err(parse_err(e.line, format!("unknown section `[{}]`", e.section)));
            }
            by_section.entry(e.section.clone()).or_default().push(e);
        }
        Ok(Self { by_section })
    }

    fn get<'a>(&'a self, name: &'a str) -> Section<'a> {
        let entries: Vec<&Entry> = self
            .by_section
            .get(name)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        let used = std::cell::RefCell::new(vec![false; entries.len()]);
        Section {
            name,
            entries,
            used,
        }
    }
}

impl<'a> Section<'a> {
    fn all(&self, key: &str) -> Vec<&'a Entry> {
        let mut used = self.used.borrow_mut();
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key == key)
            .map(|(i, e)| {
                used[i] = true;
                *e
            })
            .collect()
    }

    fn one(&self, key: &str) -> Result<Option<&'a Entry>> {
        let all = self.all(key);
        match all.as_slice() {
            [] => Ok(None),
            [e] => Ok(Some(e)),
            [_, second, ..] => Err(parse_err(
                second.line,
                format!("key `{}` repeated in [{}]", key, self.name),
            )),
        }
    }

    fn required(&self, key: &str) -> Result<&'a Entry> {
        self.one(key)?.ok_or_else(|| {
            parse_err(0, format!("missing required key `{key}` in [{}]", self.name))
        })
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().zip(used.iter()).find(|(_, u)| !**u) {
            Some((e, _)) => Err(parse_err(
                e.line,
                format!("unknown key `{}` in [{}]", e.key, self.name),
            )),
            None => Ok(()),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        match self.one(key)? {
            None => Ok(default),
            Some(e) => parse_float(e.line, &e.value),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<(usize, Vec<f64>)>> {
        match self.one(key)? {
            None => Ok(None),
            Some(e) => Ok(Some((e.line, parse_floats(e.line, &e.value)?))),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.one(key)? {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| parse_err(e.line, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.one(key)? {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                v => Err(parse_err(e.line, format!("`{v}` is not a boolean"))),
            },
        }
    }

    fn choice<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        match self.one(key)? {
            None => Ok(default),
            Some(e) => options
                .iter()
                .find(|(name, _)| *name == e.value)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    parse_err(
                        e.line,
                        format!("`{}` must be one of {}", key, names.join(", ")),
                    )
                }),
        }
    }
}

fn parse_float(line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("`{s}` is not a number")))?;
    if v.is_nan() {
        return Err(parse_err(line, "NaN is not allowed"));
    }
    Ok(v)
}

fn parse_floats(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| parse_float(line, t))
        .collect()
}

fn parse_indices(line: usize, s: &str) -> Result<Vec<usize>> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: usize = t
                .parse()
                .map_err(|_| parse_err(line, format!("`{t}` is not a 1-based index")))?;
            if v == 0 {
                return Err(parse_err(line, "indices are 1-based, found 0"));
            }
            Ok(v - 1)
        })
        .collect()
}

/// Dense incidence matrices make larger graphs impractical anyway.
pub const MAX_VERTICES: usize = 10_000;

/// Expands a scalar to `len` entries or checks the length of a list.
fn broadcast(line: usize, key: &str, v: &[f64], len: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; len]),
        l if l == len => Ok(v.to_vec()),
        l => Err(parse_err(
            line,
            format!("`{key}` has {l} values; expected 1 or {len} ({what})"),
        )),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub vertices: usize,
    /// 0-based `(tail, head)`
    pub edges: Vec<(usize, usize)>,
    /// 0-based vertex and sign
    pub terminals: Vec<(usize, i8)>,
    /// interior edges must touch every vertex
    pub interior_spanning: bool,
}

impl GraphSpec {
    pub fn build(&self) -> Result<NetworkGraph> {
        NetworkGraph::new(self.vertices, &self.edges, &self.terminals)
    }

    fn parse(s: &Section) -> Result<Self> {
        let vertices = s.required("vertices")?;
        let n: usize = vertices
            .value
            .parse()
            .map_err(|_| parse_err(vertices.line, format!("`{}` is not a vertex count", vertices.value)))?;
        if n > MAX_VERTICES {
            return Err(parse_err(vertices.line, format!("{n} vertices exceeds the limit of {MAX_VERTICES}")));
        }
        let mut edges = Vec::new();
        for e in s.all("edge") {
            let idx = parse_indices(e.line, &e.value)?;
            let [t, h] = idx[..] else {
                return Err(parse_err(e.line, format!("edge needs `tail head`, found `{}`", e.value)));
            };
            for v in [t, h] {
                if v >= n {
                    return Err(parse_err(
                        e.line,
                        format!("edge endpoint {} is outside 1..={n}", v + 1),
                    ));
                }
            }
            if t == h {
                return Err(parse_err(e.line, format!("edge {} → {} is a self-loop", t + 1, h + 1)));
            }
            edges.push((t, h));
        }
        let mut terminals = Vec::new();
        for e in s.all("terminal") {
            let mut parts = e.value.split_whitespace();
            let (Some(v), Some(sign), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err(e.line, format!("terminal needs `vertex sign`, found `{}`", e.value)));
            };
            let [v] = parse_indices(e.line, v)?[..] else {
                return Err(parse_err(e.line, format!("terminal needs one vertex, found `{v}`")));
            };
            if v >= n {
                return Err(parse_err(e.line, format!("terminal vertex {} is outside 1..={n}", v + 1)));
            }
            let sign: i8 = match sign {
                "+1" | "1" | "+" => 1,
                "-1" | "-" => -1,
                other => return Err(parse_err(e.line, format!("terminal sign must be +1 or -1, found `{other}`"))),
            };
            terminals.push((v, sign));
        }
        let interior_spanning = s.boolean("interior_spanning", true)?;
        Ok(Self {
            vertices: n,
            edges,
            terminals,
            interior_spanning,
        })
    }

    fn write(&self, out: &mut String) {
        let _ = writeln!(out, "[graph]");
        let _ = writeln!(out, "vertices = {}", self.vertices);
        for (t, h) in &self.edges {
            let _ = writeln!(out, "edge = {} {}", t + 1, h + 1);
        }
        for (v, s) in &self.terminals {
            let _ = writeln!(out, "terminal = {} {}", v + 1, if *s > 0 { "+1" } else { "-1" });
        }
        let _ = writeln!(out, "interior_spanning = {}", self.interior_spanning);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormKind {
    Quadratic,
    EvenPower,
    Hydraulic,
}

impl FormKind {
    fn name(self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::EvenPower => "even_power",
            Self::Hydraulic => "hydraulic",
        }
    }
}

/// Storage functions as written in the file; lists of length one broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub form: FormKind,
    pub weight: Vec<f64>,
    pub minimizer: Vec<f64>,
    /// full exponent `2p` of the even-power form
    pub exponent: u32,
    pub area: Vec<f64>,
    pub rho: f64,
    pub g: f64,
    pub h_ref: Vec<f64>,
    /// Bregman reference point, per vertex
    pub shift: Option<Vec<f64>>,
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        Self {
            form: FormKind::Quadratic,
            weight: vec![1.0],
            minimizer: vec![0.0],
            exponent: 4,
            area: vec![1.0],
            rho: 1.0,
            g: HydraulicParams::DEFAULT_GRAVITY,
            h_ref: vec![0.0],
            shift: None,
        }
    }
}

impl HamiltonianSpec {
    pub fn build(&self, n: usize) -> Result<VertexHamiltonian> {
        let per = |key: &str, v: &[f64]| broadcast(0, key, v, n, "one per vertex");
        let base = match self.form {
            FormKind::Quadratic => {
                VertexHamiltonian::quadratic(&per("weight", &self.weight)?, &per("minimizer", &self.minimizer)?)?
            }
            FormKind::EvenPower => {
                let w = per("weight", &self.weight)?;
                let g = per("minimizer", &self.minimizer)?;
                let forms = w
                    .iter()
                    .zip(&g)
                    .map(|(&wi, &gi)| StorageForm::even_power(wi, gi, self.exponent))
                    .collect::<Result<Vec<_>>>()?;
                VertexHamiltonian::new(forms)?
            }
            FormKind::Hydraulic => VertexHamiltonian::hydraulic(&HydraulicParams {
                area: per("area", &self.area)?,
                rho: self.rho,
                g: self.g,
                h_ref: per("h_ref", &self.h_ref)?,
            })?,
        };
        match &self.shift {
            None => Ok(base),
            Some(r) => base.bregman_shift(&per("shift", r)?),
        }
    }

    fn parse(s: &Section, n: usize) -> Result<Self> {
        let d = Self::default();
        let form = s.choice(
            "form",
            FormKind::Quadratic,
            &[
                ("quadratic", FormKind::Quadratic),
                ("even_power", FormKind::EvenPower),
                ("hydraulic", FormKind::Hydraulic),
            ],
        )?;
        let list = |key: &str, default: Vec<f64>| -> Result<Vec<f64>> {
            match s.floats(key)? {
                None => Ok(default),
                Some((line, v)) => {
                    broadcast(line, key, &v, n, "one per vertex")?;
                    Ok(v)
                }
            }
        };
        let exponent = match s.one("exponent")? {
            None => d.exponent,
            Some(e) => {
                let p: u32 = e
                    .value
                    .parse()
                    .map_err(|_| parse_err(e.line, format!("`{}` is not an exponent", e.value)))?;
                if p < 2 || !p.is_multiple_of(2) || p > MAX_EXPONENT {
                    return Err(parse_err(
                        e.line,
                        format!("exponent must be even and in 2..={MAX_EXPONENT}, found {p}"),
                    ));
                }
                p
            }
        };
        let spec = Self {
            form,
            weight: list("weight", d.weight)?,
            minimizer: list("minimizer", d.minimizer)?,
            exponent,
            area: list("area", d.area)?,
            rho: s.float("rho", d.rho)?,
            g: s.float("g", d.g)?,
            h_ref: list("h_ref", d.h_ref)?,
            shift: match s.floats("shift")? {
                None => None,
                Some((line, v)) => {
                    broadcast(line, "shift", &v, n, "one per vertex")?;
                    Some(v)
                }
            },
        };
        // surface invalid parameters with a line number when possible
        spec.build(n).map_err(|e| match s.entries.first() {
            Some(first) => parse_err(first.line, format!("[hamiltonian]: {e}")),
            None => e,
        })?;
        Ok(spec)
    }

    fn write(&self, out: &mut String) {
        let _ = writeln!(out, "[hamiltonian]");
        let _ = writeln!(out, "form = {}", self.form.name());
        let _ = writeln!(out, "weight = {}", fmt_list(&self.weight));
        let _ = writeln!(out, "minimizer = {}", fmt_list(&self.minimizer));
        let _ = writeln!(out, "exponent = {}", self.exponent);
        let _ = writeln!(out, "area = {}", fmt_list(&self.area));
        let _ = writeln!(out, "rho = {}", self.rho);
        let _ = writeln!(out, "g = {}", self.g);
        let _ = writeln!(out, "h_ref = {}", fmt_list(&self.h_ref));
        if let Some(s) = &self.shift {
            let _ = writeln!(out, "shift = {}", fmt_list(s));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Unconstrained,
    Box,
    Adaptive,
}

impl ConstraintKind {
    fn name(self) -> &'static str {
        match self {
            Self::Unconstrained => "unconstrained",
            Self::Box => "box",
            Self::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub gain: Vec<f64>,
    pub hc_weight: Vec<f64>,
    pub constraint: ConstraintKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// one value per terminal, empty for none
    pub disturbance: Vec<f64>,
    pub allow_general_hc: bool,
    pub bound_solver: BoundSolver,
    pub rescale_tol: f64,
    pub rescale_max_iter: usize,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        let a = AdaptiveOptions::default();
        Self {
            gain: vec![1.0],
            hc_weight: vec![1.0],
            constraint: ConstraintKind::Unconstrained,
            lower: vec![f64::NEG_INFINITY],
            upper: vec![f64::INFINITY],
            disturbance: Vec::new(),
            allow_general_hc: false,
            bound_solver: BoundSolver::Qp,
            rescale_tol: a.rescale_tol,
            rescale_max_iter: a.rescale_max_iter,
        }
    }
}

/// Everything the command-line tool needs to run or check one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: GraphSpec,
    pub hamiltonian: HamiltonianSpec,
    pub controller: ControllerSpec,
    pub x0: Vec<f64>,
    pub eta0: Vec<f64>,
    pub sim: SimConfig,
    pub monitors: Monitors,
    pub classifier: ClassifierOptions,
    /// overrides applied on top of the file, as `section.key`, value
    pub overrides: Vec<(String, String)>,
}

/// Which invariant monitors decide the exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Monitors {
    pub lower_bound: bool,
    pub conservation: bool,
    pub lyapunov: bool,
    pub consensus: bool,
}

impl Default for Monitors {
    fn default() -> Self {
        Self {
            lower_bound: true,
            conservation: true,
            lyapunov: true,
            consensus: true,
        }
    }
}

impl Monitors {
    pub const NAMES: [&'static str; 4] = ["lower_bound", "conservation", "lyapunov", "consensus"];

    fn parse(line: usize, s: &str) -> Result<Self> {
        let mut m = Self {
            lower_bound: false,
            conservation: false,
            lyapunov: false,
            consensus: false,
        };
        for name in s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            match name {
                "lower_bound" => m.lower_bound = true,
                "conservation" => m.conservation = true,
                "lyapunov" => m.lyapunov = true,
                "consensus" => m.consensus = true,
                "none" => {}
                other => {
                    return Err(parse_err(
                        line,
                        format!("unknown monitor `{other}` (known: {})", Self::NAMES.join(", ")),
                    ))
                }
            }
        }
        Ok(m)
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [self.lower_bound, self.conservation, self.lyapunov, self.consensus];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect()
    }
}

const SCENARIO_SECTIONS: [&str; 6] = ["graph", "hamiltonian", "controller", "initial", "sim", "classifier"];

fn parse_classifier(s: &Section) -> Result<ClassifierOptions> {
    let d = ClassifierOptions::default();
    let gray_tolerance = s.float("gray_tolerance", d.gray_tolerance)?;
    if !(gray_tolerance > 0.0 && gray_tolerance.is_finite()) {
        let line = s.one("gray_tolerance")?.map_or(0, |e| e.line);
        return Err(parse_err(line, "gray_tolerance must be positive"));
    }
    Ok(ClassifierOptions {
        gray_tolerance,
        black2_closure: s.choice(
            "black2_closure",
            d.black2_closure,
            &[("one_level", Black2Closure::OneLevel), ("transitive", Black2Closure::Transitive)],
        )?,
        flow_basis: s.choice(
            "flow_basis",
            d.flow_basis,
            &[("raw_mu", FlowBasis::RawMu), ("saturated_mu", FlowBasis::SaturatedMu)],
        )?,
    })
}

fn write_classifier(c: &ClassifierOptions, out: &mut String) {
    let _ = writeln!(out, "[classifier]");
    let _ = writeln!(out, "gray_tolerance = {}", c.gray_tolerance);
    let closure = match c.black2_closure {
        Black2Closure::OneLevel => "one_level",
        Black2Closure::Transitive => "transitive",
    };
    let basis = match c.flow_basis {
        FlowBasis::RawMu => "raw_mu",
        FlowBasis::SaturatedMu => "saturated_mu",
    };
    let _ = writeln!(out, "black2_closure = {closure}");
    let _ = writeln!(out, "flow_basis = {basis}");
}

fn solver_choice() -> [(&'static str, BoundSolver); 2] {
    [("qp", BoundSolver::Qp), ("iterative", BoundSolver::Iterative)]
}

impl Scenario {
    /// Parses a scenario file and applies `section.key=value` overrides last.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries = tokenize(text)?;
        let echoed = apply_overrides(&mut entries, overrides)?;
        let sections = Sections::new(entries, &SCENARIO_SECTIONS)?;

        let gs = sections.get("graph");
        let graph = GraphSpec::parse(&gs)?;
        gs.finish()?;
        let (n, m) = (graph.vertices, graph.edges.len());

        let hs = sections.get("hamiltonian");
        let hamiltonian = HamiltonianSpec::parse(&hs, n)?;
        hs.finish()?;

        let cs = sections.get("controller");
        let d = ControllerSpec::default();
        let per_edge = |key: &str, default: Vec<f64>| -> Result<Vec<f64>> {
            match cs.floats(key)? {
                None => Ok(default),
                Some((line, v)) => {
                    broadcast(line, key, &v, m, "one per edge")?;
                    Ok(v)
                }
            }
        };
        let gain = per_edge("gain", d.gain)?;
        let hc_weight = per_edge("hc_weight", d.hc_weight)?;
        let lower = per_edge("lower", d.lower)?;
        let upper = per_edge("upper", d.upper)?;
        let constraint = cs.choice(
            "constraint",
            d.constraint,
            &[
                ("unconstrained", ConstraintKind::Unconstrained),
                ("box", ConstraintKind::Box),
                ("adaptive", ConstraintKind::Adaptive),
            ],
        )?;
        let disturbance = match cs.floats("disturbance")? {
            None => Vec::new(),
            Some((line, v)) => {
                if graph.terminals.is_empty() {
                    return Err(parse_err(line, "disturbance given but the graph has no terminals"));
                }
                broadcast(line, "disturbance", &v, graph.terminals.len(), "one per terminal")?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(parse_err(line, "disturbance values must be finite"));
                }
                v
            }
        };
        let controller = ControllerSpec {
            gain,
            hc_weight,
            constraint,
            lower,
            upper,
            disturbance,
            allow_general_hc: cs.boolean("allow_general_hc", d.allow_general_hc)?,
            bound_solver: cs.choice("bound_solver", d.bound_solver, &solver_choice())?,
            rescale_tol: cs.float("rescale_tol", d.rescale_tol)?,
            rescale_max_iter: cs.usize("rescale_max_iter", d.rescale_max_iter)?,
        };
        let ctrl_line = cs.entries.first().map_or(0, |e| e.line);
        cs.finish()?;

        let is = sections.get("initial");
        let (x_line, x) = is
            .floats("x")?
            .ok_or_else(|| parse_err(0, "missing required key `x` in [initial]"))?;
        let x0 = broadcast(x_line, "x", &x, n, "one per vertex")?;
        let eta0 = match is.floats("eta")? {
            None => vec![0.0; m],
            Some((line, v)) => broadcast(line, "eta", &v, m, "one per edge")?,
        };
        if let Some(i) = x0.iter().chain(&eta0).position(|v| !v.is_finite()) {
            return Err(parse_err(x_line, format!("initial state entry {} is not finite", i + 1)));
        }
        is.finish()?;

        let ss = sections.get("sim");
        let dc = SimConfig::default();
        let sim = SimConfig {
            t_end: ss.float("t_end", dc.t_end)?,
            step: ss.float("step", dc.step)?,
            integrator: ss.choice(
                "integrator",
                dc.integrator,
                &[("rk4", Integrator::Rk4), ("euler", Integrator::Euler)],
            )?,
            record_every: ss.usize("record_every", dc.record_every)?,
            consensus_tol: ss.float("consensus_tol", dc.consensus_tol)?,
            lyapunov_slack: ss.float("lyapunov_slack", dc.lyapunov_slack)?,
            clamp_guard: ss.boolean("clamp_guard", dc.clamp_guard)?,
            bound_refresh: ss.choice(
                "bound_refresh",
                dc.bound_refresh,
                &[("stage", BoundRefresh::Stage), ("step", BoundRefresh::Step)],
            )?,
            locate_events: ss.boolean("locate_events", dc.locate_events)?,
        };
        let monitors = match ss.one("monitors")? {
            None => Monitors::default(),
            Some(e) => Monitors::parse(e.line, &e.value)?,
        };
        let sim_line = ss.entries.first().map_or(0, |e| e.line);
        ss.finish()?;
        sim.validate().map_err(|e| parse_err(sim_line, format!("[sim]: {e}")))?;

        let ks = sections.get("classifier");
        let classifier = parse_classifier(&ks)?;
        ks.finish()?;

        let scenario = Self {
            graph,
            hamiltonian,
            controller,
            x0,
            eta0,
            sim,
            monitors,
            classifier,
            overrides: echoed,
        };
        scenario
            .validate()
            .map_err(|e| parse_err(ctrl_line, format!("[controller]: {e}")))?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        let sys = self.closed_loop()?;
        let policy = self.policy()?;
        if let ConstraintPolicy::Adaptive(_) = policy {
            if !self.controller.disturbance.iter().all(|&d| d == 0.0) {
                return Err(Error::Config(
                    "adaptive bounds are defined only without external in/outflows; remove the disturbance".into(),
                ));
            }
            if !sys.controller.hamiltonian().is_standard() && !self.controller.allow_general_hc {
                return Err(Error::Config(
                    "adaptive bounds with a weighted H_c lie outside the proven guarantee; set allow_general_hc = true to run anyway".into(),
                ));
            }
            let gamma = sys.storage.minimizers();
            if let Some(i) = (0..self.x0.len()).find(|&i| self.x0[i] < gamma[i]) {
                return Err(Error::Config(format!(
                    "adaptive policy needs x(0) ≥ γ, but x{} = {} < {}",
                    i + 1,
                    self.x0[i],
                    gamma[i]
                )));
            }
        }
        if !(self.controller.rescale_tol > 0.0) || self.controller.rescale_max_iter == 0 {
            return Err(Error::Config("rescale_tol and rescale_max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let g = self.graph.build()?;
        let n = g.vertex_count();
        let m = g.edge_count();
        let storage = self.hamiltonian.build(n)?;
        let gains = broadcast(0, "gain", &self.controller.gain, m, "one per edge")?;
        let hc = ControllerHamiltonian::weighted(broadcast(
            0,
            "hc_weight",
            &self.controller.hc_weight,
            m,
            "one per edge",
        )?)?;
        let controller = PIController::new(gains, hc)?;
        let disturbance = if self.controller.disturbance.is_empty() {
            None
        } else {
            Some(Disturbance::new(broadcast(
                0,
                "disturbance",
                &self.controller.disturbance,
                g.terminal_count(),
                "one per terminal",
            )?)?)
        };
        ClosedLoop::new(g, storage, controller, disturbance)
    }

    pub fn box_bounds(&self) -> Result<BoxBounds> {
        let m = self.graph.edges.len();
        BoxBounds::new(
            broadcast(0, "lower", &self.controller.lower, m, "one per edge")?,
            broadcast(0, "upper", &self.controller.upper, m, "one per edge")?,
        )
    }

    pub fn adaptive_options(&self) -> AdaptiveOptions {
        AdaptiveOptions {
            classifier: self.classifier,
            solver: self.controller.bound_solver,
            rescale_tol: self.controller.rescale_tol,
            rescale_max_iter: self.controller.rescale_max_iter,
        }
    }

    pub fn policy(&self) -> Result<ConstraintPolicy> {
        Ok(match self.controller.constraint {
            ConstraintKind::Unconstrained => ConstraintPolicy::Unconstrained,
            ConstraintKind::Box => ConstraintPolicy::ConstantBox(self.box_bounds()?),
            ConstraintKind::Adaptive => ConstraintPolicy::Adaptive(self.adaptive_options()),
        })
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState::new(self.x0.clone(), self.eta0.clone())
    }

    pub fn interior_options(&self) -> InteriorOptions {
        InteriorOptions {
            require_all_vertices: self.graph.interior_spanning,
        }
    }

    /// Text that parses back to an equal scenario (without the override echo).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.graph.write(&mut out);
        out.push('\n');
        self.hamiltonian.write(&mut out);
        out.push('\n');
        let c = &self.controller;
        let _ = writeln!(out, "[controller]");
        let _ = writeln!(out, "gain = {}", fmt_list(&c.gain));
        let _ = writeln!(out, "hc_weight = {}", fmt_list(&c.hc_weight));
        let _ = writeln!(out, "constraint = {}", c.constraint.name());
        let _ = writeln!(out, "lower = {}", fmt_list(&c.lower));
        let _ = writeln!(out, "upper = {}", fmt_list(&c.upper));
        if !c.disturbance.is_empty() {
            let _ = writeln!(out, "disturbance = {}", fmt_list(&c.disturbance));
        }
        let _ = writeln!(out, "allow_general_hc = {}", c.allow_general_hc);
        let solver = match c.bound_solver {
            BoundSolver::Qp => "qp",
            BoundSolver::Iterative => "iterative",
        };
        let _ = writeln!(out, "bound_solver = {solver}");
        let _ = writeln!(out, "rescale_tol = {}", c.rescale_tol);
        let _ = writeln!(out, "rescale_max_iter = {}", c.rescale_max_iter);
        out.push('\n');
        let _ = writeln!(out, "[initial]");
        let _ = writeln!(out, "x = {}", fmt_list(&self.x0));
        if !self.eta0.is_empty() {
            let _ = writeln!(out, "eta = {}", fmt_list(&self.eta0));
        }
        out.push('\n');
        let s = &self.sim;
        let _ = writeln!(out, "[sim]");
        let _ = writeln!(out, "t_end = {}", s.t_end);
        let _ = writeln!(out, "step = {}", s.step);
        let integrator = match s.integrator {
            Integrator::Rk4 => "rk4",
            Integrator::Euler => "euler",
        };
        let _ = writeln!(out, "integrator = {integrator}");
        let _ = writeln!(out, "record_every = {}", s.record_every);
        let _ = writeln!(out, "consensus_tol = {}", s.consensus_tol);
        let _ = writeln!(out, "lyapunov_slack = {}", s.lyapunov_slack);
        let _ = writeln!(out, "clamp_guard = {}", s.clamp_guard);
        let refresh = match s.bound_refresh {
            BoundRefresh::Stage => "stage",
            BoundRefresh::Step => "step",
        };
        let _ = writeln!(out, "bound_refresh = {refresh}");
        let _ = writeln!(out, "locate_events = {}", s.locate_events);
        let enabled = self.monitors.enabled();
        let _ = writeln!(
            out,
            "monitors = {}",
            if enabled.is_empty() { "none".to_string() } else { enabled.join(" ") }
        );
        out.push('\n');
        write_classifier(&self.classifier, &mut out);
        out
    }
}

/// Which vertices are gray in a QP instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Designation {
    /// 0-based gray vertices
    Gray(Vec<usize>),
    /// storages and lower bounds, classified with the gray tolerance
    State { x: Vec<f64>, gamma: Vec<f64> },
}

/// A single bound computation: graph, flows and gray designation.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub graph: GraphSpec,
    pub mu: Vec<f64>,
    pub designation: Designation,
    pub classifier: ClassifierOptions,
    pub rescale_tol: f64,
    pub rescale_max_iter: usize,
}

const QP_SECTIONS: [&str; 5] = ["graph", "flows", "designation", "classifier", "rescaling"];

impl QpInstance {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = tokenize(text)?;
        let sections = Sections::new(entries, &QP_SECTIONS)?;
        let gs = sections.get("graph");
        let graph = GraphSpec::parse(&gs)?;
        gs.finish()?;
        let (n, m) = (graph.vertices, graph.edges.len());

        let fs = sections.get("flows");
        let mu_e = fs.required("mu")?;
        let mu = parse_floats(mu_e.line, &mu_e.value)?;
        if mu.len() != m {
            return Err(parse_err(mu_e.line, format!("`mu` has {} values; expected {m}", mu.len())));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(mu_e.line, "flows must be finite"));
        }
        fs.finish()?;

        let ds = sections.get("designation");
        let gray = ds.one("gray")?;
        let x = ds.floats("x")?;
        let gamma = ds.floats("gamma")?;
        let designation = match (gray, x, gamma) {
            (Some(e), None, None) => {
                let idx = parse_indices(e.line, &e.value)?;
                if let Some(&v) = idx.iter().find(|&&v| v >= n) {
                    return Err(parse_err(e.line, format!("gray vertex {} is outside 1..={n}", v + 1)));
                }
                Designation::Gray(idx)
            }
            (None, Some((lx, x)), gamma) => {
                let x = broadcast(lx, "x", &x, n, "one per vertex")?;
                let gamma = match gamma {
                    None => vec![0.0; n],
                    Some((lg, g)) => broadcast(lg, "gamma", &g, n, "one per vertex")?,
                };
                Designation::State { x, gamma }
            }
            (None, None, None) => Designation::Gray(Vec::new()),
            _ => {
                let line = ds.entries.first().map_or(0, |e| e.line);
                return Err(parse_err(line, "give either `gray` or `x` (with optional `gamma`), not both"));
            }
        };
        ds.finish()?;

        let ks = sections.get("classifier");
        let classifier = parse_classifier(&ks)?;
        ks.finish()?;

        let rs = sections.get("rescaling");
        let d = AdaptiveOptions::default();
        let rescale_tol = rs.float("tol", d.rescale_tol)?;
        let rescale_max_iter = rs.usize("max_iter", d.rescale_max_iter)?;
        if !(rescale_tol > 0.0) || rescale_max_iter == 0 {
            let line = rs.entries.first().map_or(0, |e| e.line);
            return Err(parse_err(line, "rescaling tol and max_iter must be positive"));
        }
        rs.finish()?;

        Ok(Self {
            graph,
            mu,
            designation,
            classifier,
            rescale_tol,
            rescale_max_iter,
        })
    }

    pub fn gray_mask(&self) -> Vec<bool> {
        match &self.designation {
            Designation::Gray(v) => {
                let mut mask = vec![false; self.graph.vertices];
                for &i in v {
                    mask[i] = true;
                }
                mask
            }
            Designation::State { x, gamma } => self.classifier.gray_mask(x, gamma),
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.graph.write(&mut out);
        let _ = writeln!(out, "\n[flows]\nmu = {}\n", fmt_list(&self.mu));
        let _ = writeln!(out, "[designation]");
        match &self.designation {
            Designation::Gray(v) => {
                let list: Vec<String> = v.iter().map(|i| (i + 1).to_string()).collect();
                if !list.is_empty() {
                    let _ = writeln!(out, "gray = {}", list.join(" "));
                }
            }
            Designation::State { x, gamma } => {
                let _ = writeln!(out, "x = {}", fmt_list(x));
                let _ = writeln!(out, "gamma = {}", fmt_list(gamma));
            }
        }
        out.push('\n');
        write_classifier(&self.classifier, &mut out);
        let _ = writeln!(
            out,
            "\n[rescaling]\ntol = {}\nmax_iter = {}",
            self.rescale_tol, self.rescale_max_iter
        );
        out
    }
}
