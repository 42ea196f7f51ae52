use std::collections::HashMap;
use std::path::PathBuf;

use super::fmt_f64;
use crate::dynamics::{Scheme, StepperConfig};
use crate::error::{KsnsError, Result};
use crate::model::{
    self, AssumptionReport, Blob, DiagnosticsSettings, FluidModel, InitialConditionSpec, ModelConfig, Oxygen,
    SensitivitySpec, VelocityInit,
};
use crate::spectral::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub snapshots: bool,
    pub plot_data: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshots: true, plot_data: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub initial: InitialConditionSpec,
    pub output: OutputSettings,
    pub assumptions: AssumptionReport,
}

const SECTIONS: [&str; 6] = ["model", "grid", "stepper", "initial", "diagnostics", "output"];

const KEYS: &[(&str, &[&str])] = &[
    ("model", &["mu", "fluid", "chi0", "chi1", "kappa1", "kappa2", "grad_phi_x", "grad_phi_y"]),
    ("grid", &["nx", "ny", "lx", "ly"]),
    (
        "stepper",
        &[
            "scheme",
            "t_end",
            "sample_interval",
            "dt_init",
            "dt_min",
            "dt_max",
            "cfl_safety",
            "adaptive",
            "filter_order",
            "blowup_factor",
        ],
    ),
    ("initial", &["n_blob", "c_blob", "c_background", "velocity", "velocity_amplitude"]),
    ("diagnostics", &["weight_p", "weight_beta"]),
    ("output", &["dir", "snapshots", "plot_data"]),
];

const REPEATABLE: [&str; 2] = ["n_blob", "c_blob"];

struct Entry {
    line: usize,
    value: String,
}

struct Doc {
    entries: HashMap<(String, String), Vec<Entry>>,
    section_lines: HashMap<String, usize>,
}

fn err(line: usize, msg: impl Into<String>) -> KsnsError {
    KsnsError::Config { line, msg: msg.into() }
}

fn strip_comment(s: &str) -> &str {
    match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    }
}

fn tokenize(text: &str) -> Result<Doc> {
    let mut doc = Doc { entries: HashMap::new(), section_lines: HashMap::new() };
    let mut section: Option<String> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = strip_comment(raw).trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("malformed section header `{s}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            if doc.section_lines.insert(name.to_string(), line).is_some() {
                return Err(err(line, format!("section [{name}] appears twice")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{s}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| err(line, format!("key `{key}` outside any section")))?;
        let known = KEYS.iter().find(|(n, _)| *n == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(err(line, format!("unknown key `{key}` in [{sec}]")));
        }
        let slot = doc.entries.entry((sec.to_string(), key.to_string())).or_default();
        if !slot.is_empty() && !REPEATABLE.contains(&key) {
            return Err(err(line, format!("duplicate key `{key}` in [{sec}]")));
        }
        slot.push(Entry { line, value: value.to_string() });
    }
    Ok(doc)
}

impl Doc {
    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(sec.to_string(), key.to_string())).and_then(|v| v.first())
    }

    fn all(&self, sec: &str, key: &str) -> &[Entry] {
        self.entries.get(&(sec.to_string(), key.to_string())).map(Vec::as_slice).unwrap_or(&[])
    }

    fn section_line(&self, sec: &str) -> usize {
        self.section_lines.get(sec).copied().unwrap_or(0)
    }

    fn require(&self, sec: &str, key: &str) -> Result<&Entry> {
        self.get(sec, key)
            .ok_or_else(|| err(self.section_line(sec), format!("missing required key `{key}` in [{sec}]")))
    }

    fn f64_or(&self, sec: &str, key: &str, default: f64) -> Result<f64> {
        self.get(sec, key).map_or(Ok(default), parse_f64)
    }

    fn f64_req(&self, sec: &str, key: &str) -> Result<f64> {
        parse_f64(self.require(sec, key)?)
    }

    fn usize_or(&self, sec: &str, key: &str, default: Option<usize>) -> Result<usize> {
        match (self.get(sec, key), default) {
            (Some(e), _) => e.value.parse().map_err(|_| err(e.line, format!("`{key}` must be a nonnegative integer, got `{}`", e.value))),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(err(self.section_line(sec), format!("missing required key `{key}` in [{sec}]"))),
        }
    }

    fn bool_or(&self, sec: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                v => Err(err(e.line, format!("`{key}` must be true or false, got `{v}`"))),
            },
        }
    }
}

fn parse_f64(e: &Entry) -> Result<f64> {
    let v: f64 = e.value.parse().map_err(|_| err(e.line, format!("expected a number, got `{}`", e.value)))?;
    if !v.is_finite() {
        return Err(err(e.line, format!("value `{}` is not finite", e.value)));
    }
    Ok(v)
}

fn parse_blob(e: &Entry) -> Result<Blob> {
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(err(e.line, "blob needs `amplitude center_x center_y width`"));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = parse_f64(&Entry { line: e.line, value: p.to_string() })?;
    }
    Ok(Blob::new(v[0], [v[1], v[2]], v[3]))
}

fn at_line(line: usize, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        KsnsError::InvalidConfig(m) | KsnsError::InvalidGrid(m) => err(line, m),
        other => err(line, other.to_string()),
    })
}

/// Parses and fully validates a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let d = tokenize(text)?;

    let mu_e = d.require("model", "mu")?;
    let oxygen = match mu_e.value.as_str() {
        "0" => Oxygen::Hyperbolic,
        "1" => Oxygen::Parabolic,
        v => return Err(err(mu_e.line, format!("mu must be 0 or 1, got `{v}`"))),
    };
    let fl = d.require("model", "fluid")?;
    let fluid = FluidModel::parse(&fl.value).ok_or_else(|| {
        err(fl.line, format!("fluid must be navier_stokes, stokes or none, got `{}`", fl.value))
    })?;
    let sensitivity = SensitivitySpec {
        chi0: d.f64_req("model", "chi0")?,
        chi1_lin: d.f64_or("model", "chi1", 0.0)?,
        kap1: d.f64_req("model", "kappa1")?,
        kap2: d.f64_or("model", "kappa2", 0.0)?,
    };
    at_line(d.section_line("model"), sensitivity.validate())?;

    let nx = d.usize_or("grid", "nx", None)?;
    let ny = d.usize_or("grid", "ny", Some(nx))?;
    let lx = d.f64_req("grid", "lx")?;
    let ly = d.f64_or("grid", "ly", lx)?;
    let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| err(d.section_line("grid"), e.to_string()))?;

    let def = StepperConfig::default();
    let scheme = match d.get("stepper", "scheme") {
        None => def.scheme,
        Some(e) => Scheme::parse(&e.value)
            .ok_or_else(|| err(e.line, format!("scheme must be imex_euler or imex_bdf2, got `{}`", e.value)))?,
    };
    let filter_order = match d.get("stepper", "filter_order") {
        None => def.hyperbolic_filter_order,
        Some(e) => e.value.parse().map_err(|_| err(e.line, format!("filter_order must be an integer, got `{}`", e.value)))?,
    };
    let stepper = StepperConfig {
        scheme,
        dt_init: d.f64_or("stepper", "dt_init", def.dt_init)?,
        cfl_safety: d.f64_or("stepper", "cfl_safety", def.cfl_safety)?,
        dt_max: d.f64_or("stepper", "dt_max", def.dt_max)?,
        dt_min: d.f64_or("stepper", "dt_min", def.dt_min)?,
        hyperbolic_filter_order: filter_order,
        adaptive: d.bool_or("stepper", "adaptive", def.adaptive)?,
        blowup_factor: d.f64_or("stepper", "blowup_factor", def.blowup_factor)?,
    };
    at_line(d.section_line("stepper"), stepper.validate())?;

    let diagnostics = DiagnosticsSettings {
        weight_p: d.f64_or("diagnostics", "weight_p", 2.0)?,
        weight_beta: match d.get("diagnostics", "weight_beta") {
            None => None,
            Some(e) if e.value == "formula" => None,
            Some(e) => {
                let b = parse_f64(e)?;
                if b < 0.0 {
                    return Err(err(e.line, "weight_beta must be >= 0"));
                }
                Some(b)
            }
        },
    };

    let model = ModelConfig {
        oxygen,
        fluid,
        grad_phi: [d.f64_or("model", "grad_phi_x", 0.0)?, d.f64_or("model", "grad_phi_y", 0.0)?],
        sensitivity,
        grid,
        t_end: d.f64_req("stepper", "t_end")?,
        sample_interval: d.f64_req("stepper", "sample_interval")?,
        stepper,
        diagnostics,
    };
    at_line(d.section_line("stepper"), model.validate())?;

    let velocity = match d.get("initial", "velocity") {
        None => VelocityInit::Zero,
        Some(e) => match e.value.as_str() {
            "zero" => VelocityInit::Zero,
            "taylor_green" => VelocityInit::TaylorGreen(d.f64_or("initial", "velocity_amplitude", 1.0)?),
            v => return Err(err(e.line, format!("velocity must be zero or taylor_green, got `{v}`"))),
        },
    };
    let initial = InitialConditionSpec {
        n_blobs: d.all("initial", "n_blob").iter().map(parse_blob).collect::<Result<_>>()?,
        c_blobs: d.all("initial", "c_blob").iter().map(parse_blob).collect::<Result<_>>()?,
        c_background: d.f64_or("initial", "c_background", 0.0)?,
        velocity,
    };
    at_line(d.section_line("initial"), initial.validate())?;

    let output = OutputSettings {
        dir: d.get("output", "dir").map_or_else(|| OutputSettings::default().dir, |e| PathBuf::from(&e.value)),
        snapshots: d.bool_or("output", "snapshots", true)?,
        plot_data: d.bool_or("output", "plot_data", false)?,
    };

    let c0_max = model::sample_c0(&model.grid, &initial).max();
    let assumptions = model::validate_assumptions(&model, c0_max);
    if !(assumptions.chi_k_signs_ok && assumptions.k_zero_ok) {
        return Err(err(d.section_line("model"), "sensitivity or consumption violates the sign conditions"));
    }
    Ok(RunConfig { model, initial, output, assumptions })
}

/// Serializes a configuration; parsing the result gives identical values.
pub fn write_config(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let s = &m.sensitivity;
    let st = &m.stepper;
    let f = fmt_f64;
    let mut out = String::new();
    let mut push = |l: String| {
        out.push_str(&l);
        out.push('\n');
    };
    push("[model]".into());
    push(format!("mu = {}", m.oxygen.code()));
    push(format!("fluid = {}", m.fluid.name()));
    push(format!("chi0 = {}", f(s.chi0)));
    push(format!("chi1 = {}", f(s.chi1_lin)));
    push(format!("kappa1 = {}", f(s.kap1)));
    push(format!("kappa2 = {}", f(s.kap2)));
    push(format!("grad_phi_x = {}", f(m.grad_phi[0])));
    push(format!("grad_phi_y = {}", f(m.grad_phi[1])));
    push("\n[grid]".into());
    push(format!("nx = {}", m.grid.nx()));
    push(format!("ny = {}", m.grid.ny()));
    push(format!("lx = {}", f(m.grid.lx())));
    push(format!("ly = {}", f(m.grid.ly())));
    push("\n[stepper]".into());
    push(format!("scheme = {}", st.scheme.name()));
    push(format!("t_end = {}", f(m.t_end)));
    push(format!("sample_interval = {}", f(m.sample_interval)));
    push(format!("dt_init = {}", f(st.dt_init)));
    push(format!("dt_min = {}", f(st.dt_min)));
    push(format!("dt_max = {}", f(st.dt_max)));
    push(format!("cfl_safety = {}", f(st.cfl_safety)));
    push(format!("adaptive = {}", st.adaptive));
    push(format!("filter_order = {}", st.hyperbolic_filter_order));
    push(format!("blowup_factor = {}", f(st.blowup_factor)));
    push("\n[initial]".into());
    let blob = |b: &Blob| format!("{} {} {} {}", f(b.amplitude), f(b.center[0]), f(b.center[1]), f(b.width));
    for b in &cfg.initial.n_blobs {
        push(format!("n_blob = {}", blob(b)));
    }
    for b in &cfg.initial.c_blobs {
        push(format!("c_blob = {}", blob(b)));
    }
    push(format!("c_background = {}", f(cfg.initial.c_background)));
    match cfg.initial.velocity {
        VelocityInit::Zero => push("velocity = zero".into()),
        VelocityInit::TaylorGreen(a) => {
            push("velocity = taylor_green".into());
            push(format!("velocity_amplitude = {}", f(a)));
        }
    }
    push("\n[diagnostics]".into());
    push(format!("weight_p = {}", f(m.diagnostics.weight_p)));
    push(match m.diagnostics.weight_beta {
        None => "weight_beta = formula".into(),
        Some(b) => format!("weight_beta = {}", f(b)),
    });
    push("\n[output]".into());
    push(format!("dir = {}", cfg.output.dir.display()));
    push(format!("snapshots = {}", cfg.output.snapshots));
    push(format!("plot_data = {}", cfg.output.plot_data));
    out
}
