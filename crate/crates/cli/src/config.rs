//! Plain-text experiment configuration.
//!
//! One `section.key = value` assignment per line, `#` starts a comment,
//! blank lines are ignored. Lists are comma separated. Every key has a
//! default except `geometry.kind`; unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Spectrum,
    Semigroup,
    KernelBound,
    Inequalities,
    Sample,
    Modulus,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Spectrum, Suite::Semigroup, Suite::KernelBound, Suite::Inequalities, Suite::Sample, Suite::Modulus];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Spectrum => "spectrum",
            Suite::Semigroup => "semigroup",
            Suite::KernelBound => "kernel-bound",
            Suite::Inequalities => "inequalities",
            Suite::Sample => "sample",
            Suite::Modulus => "modulus",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse_selection(s: &str) -> Option<Vec<Suite>> {
        if s == "all" {
            return Some(Suite::ALL.to_vec());
        }
        Suite::ALL.iter().find(|x| x.name() == s).map(|x| vec![*x])
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    Flat,
    Circle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBlock {
    pub kind: GeometryKind,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    pub length: f64,
    pub n_quad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBlock {
    pub ns: usize,
    pub nv: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Contour,
    CrankNicolson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupBlock {
    pub scheme: SchemeChoice,
    pub dt: f64,
    pub nodes: usize,
    pub cn_steps: usize,
    pub functions: usize,
    pub markov_trials: usize,
    pub alpha_offset: f64,
    pub ultra_t_list: Vec<f64>,
    pub ultra_sources: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub t_list: Vec<f64>,
    pub sources: usize,
    pub verify_tol: f64,
    pub smoothing_modes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalitiesBlock {
    pub ns: usize,
    pub nv: usize,
    pub eps: f64,
    pub random: usize,
    pub pairs: usize,
    pub fit_functions: usize,
    pub theta_list: Vec<f64>,
    pub tau_list: Vec<f64>,
    pub rosen_p: Vec<u32>,
    pub fit_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerMode {
    Guided,
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerBlock {
    pub t_end: f64,
    pub h: f64,
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    pub mode: SamplerMode,
    pub floor: f64,
    pub cross_times: Vec<f64>,
    pub cross_n: usize,
    pub htransform_eps: f64,
    pub htransform_ns: usize,
    pub htransform_nv: usize,
    pub htransform_steps: usize,
    pub htransform_n: usize,
    pub write_paths: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusBlock {
    pub m: u32,
    pub lags: Vec<f64>,
    pub n: usize,
    pub h: f64,
    pub t_end: f64,
    pub min_exponent: f64,
    pub bound_exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: GeometryBlock,
    pub ns: usize,
    pub nv: usize,
    pub eps_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub suites: Vec<Suite>,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub spectrum: SpectrumBlock,
    pub semigroup: SemigroupBlock,
    pub kernel: KernelBlock,
    pub inequalities: InequalitiesBlock,
    pub sampler: SamplerBlock,
    pub modulus: ModulusBlock,
}

/// Every accepted key with its default, in canonical order. `None` marks
/// a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("geometry.kind", None),
    ("geometry.radius", Some("1.0")),
    ("geometry.a", Some("1.5")),
    ("geometry.b", Some("1.0")),
    ("geometry.length", Some("6.283185307179586")),
    ("geometry.n_quad", Some("4096")),
    ("grid.ns", Some("128")),
    ("grid.nv", Some("32")),
    ("sweep.eps_list", Some("0.2, 0.1, 0.05")),
    ("sweep.t_list", Some("0.1, 0.5, 1.0")),
    ("run.suite", Some("all")),
    ("output.dir", Some("tubeflow-out")),
    ("output.svg", Some("true")),
    ("spectrum.ns", Some("256")),
    ("spectrum.nv", Some("64")),
    ("spectrum.tol", Some("1e-10")),
    ("spectrum.max_iter", Some("500")),
    ("semigroup.scheme", Some("contour")),
    ("semigroup.dt", Some("0.05")),
    ("semigroup.nodes", Some("20")),
    ("semigroup.cn_steps", Some("400")),
    ("semigroup.functions", Some("5")),
    ("semigroup.markov_trials", Some("100")),
    ("semigroup.alpha_offset", Some("1.0")),
    ("semigroup.ultra_t_list", Some("0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0")),
    ("semigroup.ultra_sources", Some("64")),
    ("kernel.t_list", Some("0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0")),
    ("kernel.sources", Some("64")),
    ("kernel.verify_tol", Some("1e-8")),
    ("kernel.smoothing_modes", Some("8")),
    ("inequalities.ns", Some("128")),
    ("inequalities.nv", Some("32")),
    ("inequalities.eps", Some("0.1")),
    ("inequalities.random", Some("1000")),
    ("inequalities.pairs", Some("100")),
    ("inequalities.fit_functions", Some("60")),
    ("inequalities.theta_list", Some("0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0")),
    ("inequalities.tau_list", Some("0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0")),
    ("inequalities.rosen_p", Some("2, 4")),
    ("inequalities.fit_tol", Some("1e-8")),
    ("sampler.t_end", Some("1.0")),
    ("sampler.h", Some("1e-3")),
    ("sampler.n", Some("100000")),
    ("sampler.seed", Some("1")),
    ("sampler.eps", Some("0.05")),
    ("sampler.mode", Some("guided")),
    ("sampler.floor", Some("1e-3")),
    ("sampler.cross_times", Some("0.25, 0.5")),
    ("sampler.cross_n", Some("20000")),
    ("sampler.htransform_eps", Some("0.2")),
    ("sampler.htransform_ns", Some("64")),
    ("sampler.htransform_nv", Some("8")),
    ("sampler.htransform_steps", Some("50")),
    ("sampler.htransform_n", Some("50000")),
    ("sampler.write_paths", Some("false")),
    ("modulus.m", Some("4")),
    ("modulus.lags", Some("0.01, 0.02, 0.05, 0.1, 0.2")),
    ("modulus.n", Some("50000")),
    ("modulus.h", Some("2e-3")),
    ("modulus.t_end", Some("1.0")),
    ("modulus.min_exponent", Some("1.3")),
    ("modulus.bound_exponent", Some("1.5")),
];

/// Raw assignments after the line grammar, before validation.
fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line, msg: format!("expected `section.key = value`, got `{body}`") })?;
        let key = key.trim();
        let value = value.trim();
        let well_formed = key.split_once('.').is_some_and(|(s, k)| {
            let ok = |x: &str| !x.is_empty() && x.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            ok(s) && ok(k)
        });
        if !well_formed {
            return Err(ConfigError::Parse { line, msg: format!("malformed key `{key}`") });
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::Parse { line, msg: format!("unknown key `{key}`") });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse { line, msg: format!("empty value for `{key}`") });
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::Parse { line, msg: format!("duplicate key `{key}`") });
        }
    }
    Ok(map)
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Result<&str, ConfigError> {
        if let Some(v) = self.map.get(key) {
            return Ok(v);
        }
        match KEYS.iter().find(|(k, _)| *k == key) {
            Some((_, Some(d))) => Ok(d),
            _ => Err(invalid(key, "required key missing")),
        }
    }

    fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.raw(key)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| invalid(key, format!("expected a finite number, got `{v}`")))
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let x = self.f64(key)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(invalid(key, format!("must be positive, got {x}")))
        }
    }

    fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        let v = self.raw(key)?;
        v.parse::<usize>().map_err(|_| invalid(key, format!("expected a non-negative integer, got `{v}`")))
    }

    fn count(&self, key: &str, min: usize) -> Result<usize, ConfigError> {
        let n = self.usize(key)?;
        if n < min {
            return Err(invalid(key, format!("must be at least {min}, got {n}")));
        }
        Ok(n)
    }

    fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.raw(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(invalid(key, format!("expected true or false, got `{v}`"))),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.raw(key)?;
        let out: Result<Vec<f64>, _> = v
            .split(',')
            .map(|x| {
                let x = x.trim();
                x.parse::<f64>()
                    .ok()
                    .filter(|y| y.is_finite() && *y > 0.0)
                    .ok_or_else(|| invalid(key, format!("expected positive numbers, got `{x}`")))
            })
            .collect();
        out
    }

    fn times(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let t = self.list(key)?;
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(key, "times must be strictly increasing"));
        }
        Ok(t)
    }
}

/// Parse and validate; defaults fill every key that is not given.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let map = parse_lines(text)?;
    let r = Reader { map: &map };

    let kind = match r.raw("geometry.kind")? {
        "flat" => GeometryKind::Flat,
        "circle" => GeometryKind::Circle,
        "ellipse" => GeometryKind::Ellipse,
        v => return Err(invalid("geometry.kind", format!("expected flat, circle or ellipse, got `{v}`"))),
    };
    let geometry = GeometryBlock {
        kind,
        radius: r.positive("geometry.radius")?,
        a: r.positive("geometry.a")?,
        b: r.positive("geometry.b")?,
        length: r.positive("geometry.length")?,
        n_quad: r.count("geometry.n_quad", 16)?,
    };
    if kind == GeometryKind::Ellipse && geometry.b > geometry.a {
        return Err(invalid("geometry.b", "the semi-axes must satisfy a ≥ b"));
    }

    let eps_list = r.list("sweep.eps_list")?;
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("sweep.eps_list", "must be strictly decreasing"));
    }
    let kappa_max = match kind {
        GeometryKind::Flat => 0.0,
        GeometryKind::Circle => 1.0 / geometry.radius,
        GeometryKind::Ellipse => geometry.a / (geometry.b * geometry.b),
    };
    if eps_list[0] * kappa_max >= 1.0 {
        return Err(invalid("sweep.eps_list", format!("ε = {} leaves the Fermi chart (κ_max ε ≥ 1)", eps_list[0])));
    }
    let t_list = r.times("sweep.t_list")?;

    let suites = Suite::parse_selection(r.raw("run.suite")?).ok_or_else(|| {
        invalid("run.suite", "expected spectrum, semigroup, kernel-bound, inequalities, sample, modulus or all")
    })?;

    let scheme = match r.raw("semigroup.scheme")? {
        "contour" => SchemeChoice::Contour,
        "crank-nicolson" | "cn" => SchemeChoice::CrankNicolson,
        v => return Err(invalid("semigroup.scheme", format!("expected contour or crank-nicolson, got `{v}`"))),
    };
    let semigroup = SemigroupBlock {
        scheme,
        dt: r.positive("semigroup.dt")?,
        nodes: r.count("semigroup.nodes", 4)?,
        cn_steps: r.count("semigroup.cn_steps", 2)?,
        functions: r.count("semigroup.functions", 1)?,
        markov_trials: r.count("semigroup.markov_trials", 1)?,
        alpha_offset: {
            let a = r.f64("semigroup.alpha_offset")?;
            if a < 1.0 {
                return Err(invalid("semigroup.alpha_offset", "α must be at least λ₀ + 1"));
            }
            a
        },
        ultra_t_list: r.times("semigroup.ultra_t_list")?,
        ultra_sources: r.count("semigroup.ultra_sources", 1)?,
    };
    for (key, ts) in [("sweep.t_list", &t_list), ("semigroup.ultra_t_list", &semigroup.ultra_t_list)] {
        check_on_step(key, ts, &semigroup)?;
    }

    let kernel = KernelBlock {
        t_list: r.times("kernel.t_list")?,
        sources: r.count("kernel.sources", 1)?,
        verify_tol: r.positive("kernel.verify_tol")?,
        smoothing_modes: r.count("kernel.smoothing_modes", 1)?,
    };
    if kernel.t_list.iter().any(|&t| t > 1.0) {
        return Err(invalid("kernel.t_list", "kernel-bound times must lie in (0, 1]"));
    }
    check_on_step("kernel.t_list", &kernel.t_list, &semigroup)?;

    let inequalities = InequalitiesBlock {
        ns: r.count("inequalities.ns", 16)?,
        nv: r.count("inequalities.nv", 8)?,
        eps: r.positive("inequalities.eps")?,
        random: r.count("inequalities.random", 0)?,
        pairs: r.count("inequalities.pairs", 1)?,
        fit_functions: r.count("inequalities.fit_functions", 0)?,
        theta_list: r.times("inequalities.theta_list")?,
        tau_list: r.times("inequalities.tau_list")?,
        rosen_p: r
            .list("inequalities.rosen_p")?
            .iter()
            .map(|&p| {
                if p.fract() == 0.0 && p >= 2.0 {
                    Ok(p as u32)
                } else {
                    Err(invalid("inequalities.rosen_p", format!("exponents must be integers ≥ 2, got {p}")))
                }
            })
            .collect::<Result<_, _>>()?,
        fit_tol: r.positive("inequalities.fit_tol")?,
    };
    if inequalities.tau_list.iter().any(|&t| t > 1.0) {
        return Err(invalid("inequalities.tau_list", "τ must lie in (0, 1]"));
    }

    let mode = match r.raw("sampler.mode")? {
        "guided" => SamplerMode::Guided,
        "plain" => SamplerMode::Plain,
        v => return Err(invalid("sampler.mode", format!("expected guided or plain, got `{v}`"))),
    };
    let sampler = SamplerBlock {
        t_end: r.positive("sampler.t_end")?,
        h: r.positive("sampler.h")?,
        n: r.count("sampler.n", 30)?,
        seed: {
            let v = r.raw("sampler.seed")?;
            v.parse::<u64>().map_err(|_| invalid("sampler.seed", format!("expected an unsigned integer, got `{v}`")))?
        },
        eps: r.positive("sampler.eps")?,
        mode,
        floor: r.positive("sampler.floor")?,
        cross_times: r.times("sampler.cross_times")?,
        cross_n: r.count("sampler.cross_n", 30)?,
        htransform_eps: r.positive("sampler.htransform_eps")?,
        htransform_ns: r.count("sampler.htransform_ns", 16)?,
        htransform_nv: r.count("sampler.htransform_nv", 8)?,
        htransform_steps: r.count("sampler.htransform_steps", 2)?,
        htransform_n: r.count("sampler.htransform_n", 30)?,
        write_paths: r.bool("sampler.write_paths")?,
    };
    for (key, e) in [("sampler.eps", sampler.eps), ("sampler.htransform_eps", sampler.htransform_eps)] {
        if e * kappa_max >= 1.0 {
            return Err(invalid(key, format!("ε = {e} leaves the Fermi chart")));
        }
    }
    if sampler.htransform_steps % 2 != 0 {
        return Err(invalid("sampler.htransform_steps", "must be even so that T/2 is on the chain grid"));
    }

    let modulus = ModulusBlock {
        m: {
            let m = r.count("modulus.m", 1)?;
            u32::try_from(m).map_err(|_| invalid("modulus.m", "too large"))?
        },
        lags: r.times("modulus.lags")?,
        n: r.count("modulus.n", 30)?,
        h: r.positive("modulus.h")?,
        t_end: r.positive("modulus.t_end")?,
        min_exponent: r.positive("modulus.min_exponent")?,
        bound_exponent: r.positive("modulus.bound_exponent")?,
    };
    if modulus.lags.len() < 2 || modulus.lags[modulus.lags.len() - 1] >= modulus.t_end {
        return Err(invalid("modulus.lags", "need at least two lags, all below modulus.t_end"));
    }

    Ok(ExperimentConfig {
        geometry,
        ns: r.count("grid.ns", 16)?,
        nv: r.count("grid.nv", 8)?,
        eps_list,
        t_list,
        suites,
        out_dir: PathBuf::from(r.raw("output.dir")?),
        svg: r.bool("output.svg")?,
        spectrum: SpectrumBlock {
            ns: r.count("spectrum.ns", 32)?,
            nv: r.count("spectrum.nv", 16)?,
            tol: r.positive("spectrum.tol")?,
            max_iter: r.count("spectrum.max_iter", 1)?,
        },
        semigroup,
        kernel,
        inequalities,
        sampler,
        modulus,
    })
}

/// The steppers only reach multiples of their step.
fn check_on_step(key: &str, ts: &[f64], sg: &SemigroupBlock) -> Result<(), ConfigError> {
    let dt = match sg.scheme {
        SchemeChoice::Contour => sg.dt,
        SchemeChoice::CrankNicolson => 1.0 / sg.cn_steps as f64,
    };
    for &t in ts {
        let k = (t / dt).round();
        if k < 1.0 || (k * dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(invalid(key, format!("t = {t} is not a positive multiple of the time step {dt}")));
        }
    }
    Ok(())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Canonical `key=value` lines of the fully resolved configuration; two
    /// texts that parse to the same configuration give the same lines.
    pub fn canonical(&self) -> String {
        let g = &self.geometry;
        let kind = match g.kind {
            GeometryKind::Flat => "flat",
            GeometryKind::Circle => "circle",
            GeometryKind::Ellipse => "ellipse",
        };
        let suites = if self.suites.len() == Suite::ALL.len() {
            "all".to_string()
        } else {
            self.suites.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
        };
        let sg = &self.semigroup;
        let k = &self.kernel;
        let iq = &self.inequalities;
        let sm = &self.sampler;
        let md = &self.modulus;
        let lines = [
            format!("geometry.kind={kind}"),
            format!("geometry.radius={:?}", g.radius),
            format!("geometry.a={:?}", g.a),
            format!("geometry.b={:?}", g.b),
            format!("geometry.length={:?}", g.length),
            format!("geometry.n_quad={}", g.n_quad),
            format!("grid.ns={}", self.ns),
            format!("grid.nv={}", self.nv),
            format!("sweep.eps_list={}", fmt_list(&self.eps_list)),
            format!("sweep.t_list={}", fmt_list(&self.t_list)),
            format!("run.suite={suites}"),
            format!("output.svg={}", self.svg),
            format!("spectrum.ns={}", self.spectrum.ns),
            format!("spectrum.nv={}", self.spectrum.nv),
            format!("spectrum.tol={:?}", self.spectrum.tol),
            format!("spectrum.max_iter={}", self.spectrum.max_iter),
            format!("semigroup.scheme={}", if sg.scheme == SchemeChoice::Contour { "contour" } else { "crank-nicolson" }),
            format!("semigroup.dt={:?}", sg.dt),
            format!("semigroup.nodes={}", sg.nodes),
            format!("semigroup.cn_steps={}", sg.cn_steps),
            format!("semigroup.functions={}", sg.functions),
            format!("semigroup.markov_trials={}", sg.markov_trials),
            format!("semigroup.alpha_offset={:?}", sg.alpha_offset),
            format!("semigroup.ultra_t_list={}", fmt_list(&sg.ultra_t_list)),
            format!("semigroup.ultra_sources={}", sg.ultra_sources),
            format!("kernel.t_list={}", fmt_list(&k.t_list)),
            format!("kernel.sources={}", k.sources),
            format!("kernel.verify_tol={:?}", k.verify_tol),
            format!("kernel.smoothing_modes={}", k.smoothing_modes),
            format!("inequalities.ns={}", iq.ns),
            format!("inequalities.nv={}", iq.nv),
            format!("inequalities.eps={:?}", iq.eps),
            format!("inequalities.random={}", iq.random),
            format!("inequalities.pairs={}", iq.pairs),
            format!("inequalities.fit_functions={}", iq.fit_functions),
            format!("inequalities.theta_list={}", fmt_list(&iq.theta_list)),
            format!("inequalities.tau_list={}", fmt_list(&iq.tau_list)),
            format!("inequalities.rosen_p={}", iq.rosen_p.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")),
            format!("inequalities.fit_tol={:?}", iq.fit_tol),
            format!("sampler.t_end={:?}", sm.t_end),
            format!("sampler.h={:?}", sm.h),
            format!("sampler.n={}", sm.n),
            format!("sampler.seed={}", sm.seed),
            format!("sampler.eps={:?}", sm.eps),
            format!("sampler.mode={}", if sm.mode == SamplerMode::Guided { "guided" } else { "plain" }),
            format!("sampler.floor={:?}", sm.floor),
            format!("sampler.cross_times={}", fmt_list(&sm.cross_times)),
            format!("sampler.cross_n={}", sm.cross_n),
            format!("sampler.htransform_eps={:?}", sm.htransform_eps),
            format!("sampler.htransform_ns={}", sm.htransform_ns),
            format!("sampler.htransform_nv={}", sm.htransform_nv),
            format!("sampler.htransform_steps={}", sm.htransform_steps),
            format!("sampler.htransform_n={}", sm.htransform_n),
            format!("sampler.write_paths={}", sm.write_paths),
            format!("modulus.m={}", md.m),
            format!("modulus.lags={}", fmt_list(&md.lags)),
            format!("modulus.n={}", md.n),
            format!("modulus.h={:?}", md.h),
            format!("modulus.t_end={:?}", md.t_end),
            format!("modulus.min_exponent={:?}", md.min_exponent),
            format!("modulus.bound_exponent={:?}", md.bound_exponent),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// SHA-256 of [`Self::canonical`], hex encoded. The output directory is
    /// not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("geometry.kind = flat\n").unwrap();
        assert_eq!(c.geometry.kind, GeometryKind::Flat);
        assert_eq!(c.eps_list, vec![0.2, 0.1, 0.05]);
        assert_eq!(c.suites, Suite::ALL.to_vec());
        assert_eq!((c.ns, c.nv), (128, 32));
        assert_eq!(c.geometry.length, 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config("geometrie.kind = flat\n").unwrap_err();
        assert_eq!(e, ConfigError::Parse { line: 1, msg: "unknown key `geometrie.kind`".into() });
    }

    #[test]
    fn eps_list_must_decrease() {
        let e = parse_config("geometry.kind = circle\nsweep.eps_list = 0.1, 0.2\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref key, .. } if key == "sweep.eps_list"), "{e}");
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# a comment\n\ngeometry.kind = circle   # trailing\ngrid.ns = 64\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.ns, 64);
    }

    #[test]
    fn line_numbers_in_parse_errors() {
        let e = parse_config("geometry.kind = flat\n\nnot an assignment\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 3, .. }));
    }

    #[test]
    fn hash_ignores_spelling_and_defaults() {
        let a = parse_config("geometry.kind = ellipse\n").unwrap();
        let b = parse_config("# same\ngeometry.a = 1.50\ngeometry.kind=ellipse\ngrid.ns = 128\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config("geometry.kind = ellipse\ngrid.ns = 64\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn missing_kind() {
        let e = parse_config("grid.ns = 64\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref key, .. } if key == "geometry.kind"));
    }
}
