//! Acceptance run: every criterion is evaluated at its stated tolerance and
//! reported as one PASS or FAIL line. Criteria listed in `KNOWN_FAILS` are
//! documented shortfalls; only an unexpected FAIL makes the run exit
//! non-zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use tubeflow::config::{parse_config, ExperimentConfig, Suite};
use tubeflow::report::ReportRecord;
use tubeflow::suites::run_suite;

/// Criteria that fail at their stated tolerance on the ellipse.
const KNOWN_FAILS: &[u32] = &[7, 8, 10];

const FLAT_ANCHOR: &str = "geometry.kind = flat\nsweep.eps_list = 0.4, 0.2, 0.1\n";
const FLAT: &str = "geometry.kind = flat\nmodulus.n = 100000\nmodulus.h = 1e-3\n";
const CIRCLE: &str = "geometry.kind = circle\n";
const ELLIPSE: &str = "geometry.kind = ellipse\n";

/// Suite runs are shared between criteria.
struct Runs {
    cache: BTreeMap<(&'static str, Suite), Result<ReportRecord, String>>,
}

impl Runs {
    fn get(&mut self, config: &'static str, suite: Suite) -> Result<&ReportRecord, String> {
        self.cache
            .entry((config, suite))
            .or_insert_with(|| {
                let cfg: ExperimentConfig = parse_config(config).map_err(|e| e.to_string())?;
                run_suite(&cfg, suite).map(|o| o.record).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| e.clone())
    }
}

struct Verdict {
    passed: bool,
    detail: String,
}

/// Named checks of one suite run, all required to pass.
fn checks(runs: &mut Runs, config: &'static str, suite: Suite, ids: &[&str], label: &str) -> Verdict {
    let rec = match runs.get(config, suite) {
        Ok(r) => r,
        Err(e) => return Verdict { passed: false, detail: format!("{label}: numerical failure: {e}") },
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for id in ids {
        match rec.checks.iter().find(|c| c.id == *id) {
            Some(c) => {
                passed &= c.passed;
                parts.push(format!("{}[{}] {}", id, if c.passed { "ok" } else { "fail" }, c.detail));
            }
            None => {
                passed = false;
                parts.push(format!("{id}[missing]"));
            }
        }
    }
    Verdict { passed, detail: format!("{label}: {}", parts.join("; ")) }
}

fn runtime(runs: &mut Runs, config: &'static str, suite: Suite, limit: Duration, label: &str) -> Verdict {
    match runs.get(config, suite) {
        Ok(r) => Verdict {
            passed: r.wall_time < limit,
            detail: format!("{label} runtime {:.1?} (limit {:?})", r.wall_time, limit),
        },
        Err(e) => Verdict { passed: false, detail: format!("{label}: {e}") },
    }
}

fn all(parts: Vec<Verdict>) -> Verdict {
    Verdict {
        passed: parts.iter().all(|v| v.passed),
        detail: parts.into_iter().map(|v| v.detail).collect::<Vec<_>>().join(" | "),
    }
}

fn files_of(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if let Ok(rd) = fs::read_dir(dir) {
        for e in rd.flatten() {
            out.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default());
        }
    }
    out
}

/// Two CLI runs of every suite on the smoke configuration, compared file
/// by file.
fn determinism() -> Verdict {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = root.join("configs/flat-smoke.conf");
    let tmp = std::env::temp_dir().join(format!("tubeflow-determinism-{}", std::process::id()));
    let mut dirs = Vec::new();
    for k in 0..2 {
        let out = tmp.join(format!("run{k}"));
        let _ = fs::remove_dir_all(&out);
        let status = Command::new(env!("CARGO_BIN_EXE_tubeflow"))
            .arg("all")
            .arg("--config")
            .arg(&config)
            .arg("--seed")
            .arg("7")
            .arg("--out")
            .arg(&out)
            .output();
        match status {
            Ok(o) if matches!(o.status.code(), Some(0) | Some(1)) => dirs.push(out),
            Ok(o) => {
                return Verdict {
                    passed: false,
                    detail: format!("run {k} exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)),
                }
            }
            Err(e) => return Verdict { passed: false, detail: format!("could not start the binary: {e}") },
        }
    }
    let (a, b) = (files_of(&dirs[0]), files_of(&dirs[1]));
    let _ = fs::remove_dir_all(&tmp);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Verdict {
        passed: !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        detail: format!("{} artifacts compared, differing: {differing:?}", a.len()),
    }
}

fn main() {
    let mut runs = Runs { cache: BTreeMap::new() };
    let mut unexpected = Vec::new();
    let criteria: Vec<(u32, &str, Box<dyn Fn(&mut Runs) -> Verdict>)> = vec![
        (
            1,
            "flat-cylinder exactness anchor",
            Box::new(|r| {
                all(vec![
                    checks(r, FLAT_ANCHOR, Suite::Spectrum, &["flat-eigenvalue", "flat-ground-state"], "flat"),
                    runtime(r, FLAT_ANCHOR, Suite::Spectrum, Duration::from_secs(30), "flat"),
                ])
            }),
        ),
        (
            2,
            "eigenvalue gap asymptotics",
            Box::new(|r| {
                all(vec![
                    checks(r, CIRCLE, Suite::Spectrum, &["gap-cauchy", "gap-limit", "eigen-residual"], "circle"),
                    checks(r, ELLIPSE, Suite::Spectrum, &["gap-cauchy", "gap-limit", "eigen-residual"], "ellipse"),
                    runtime(r, CIRCLE, Suite::Spectrum, Duration::from_secs(300), "circle"),
                    runtime(r, ELLIPSE, Suite::Spectrum, Duration::from_secs(300), "ellipse"),
                ])
            }),
        ),
        (
            3,
            "ground-state envelope",
            Box::new(|r| {
                all(vec![
                    checks(r, CIRCLE, Suite::Spectrum, &["envelope-uniform"], "circle"),
                    checks(r, ELLIPSE, Suite::Spectrum, &["envelope-uniform"], "ellipse"),
                ])
            }),
        ),
        (4, "Hardy inequality", Box::new(|r| checks(r, ELLIPSE, Suite::Inequalities, &["hardy"], "ellipse"))),
        (
            5,
            "ground-state transform identity",
            Box::new(|r| checks(r, ELLIPSE, Suite::Inequalities, &["gs-transform"], "ellipse")),
        ),
        (
            6,
            "semigroup limit",
            Box::new(|r| {
                all(vec![
                    checks(r, ELLIPSE, Suite::Semigroup, &["semigroup-monotone", "semigroup-third"], "ellipse"),
                    runtime(r, ELLIPSE, Suite::Semigroup, Duration::from_secs(600), "ellipse"),
                ])
            }),
        ),
        (
            7,
            "ultracontractivity",
            Box::new(|r| {
                all(vec![
                    checks(r, FLAT, Suite::Semigroup, &["ultracontractive-exponent", "ultracontractive-uniform"], "flat"),
                    checks(r, ELLIPSE, Suite::Semigroup, &["ultracontractive-uniform"], "ellipse"),
                ])
            }),
        ),
        (
            8,
            "sub-Gaussian kernel bound",
            Box::new(|r| {
                all(vec![
                    checks(r, FLAT, Suite::KernelBound, &["subgaussian-distance"], "flat"),
                    checks(r, ELLIPSE, Suite::KernelBound, &["subgaussian-distance"], "ellipse"),
                    runtime(r, ELLIPSE, Suite::KernelBound, Duration::from_secs(1200), "ellipse"),
                ])
            }),
        ),
        (
            9,
            "Markov properties",
            Box::new(|r| checks(r, ELLIPSE, Suite::Semigroup, &["markov-positivity", "markov-contraction"], "ellipse")),
        ),
        (
            10,
            "log-Sobolev and Rosen",
            Box::new(|r| checks(r, ELLIPSE, Suite::Inequalities, &["log-sobolev", "rosen-p2", "rosen-p4"], "ellipse")),
        ),
        (
            11,
            "weak convergence of marginals",
            Box::new(|r| {
                let n_ok = parse_config(CIRCLE).map(|c| c.sampler.n >= 100_000 && c.sampler.eps == 0.05).unwrap_or(false);
                all(vec![
                    Verdict { passed: n_ok, detail: format!("circle anchor at ε = 0.05 with n ≥ 1e5: {n_ok}") },
                    checks(r, CIRCLE, Suite::Sample, &["anchor", "rejection-vs-htransform"], "circle"),
                    checks(r, ELLIPSE, Suite::Sample, &["conditioned-vs-limit", "rejection-vs-htransform"], "ellipse"),
                    runtime(r, ELLIPSE, Suite::Sample, Duration::from_secs(1800), "ellipse"),
                ])
            }),
        ),
        (
            12,
            "tightness modulus",
            Box::new(|r| {
                all(vec![
                    checks(r, FLAT, Suite::Modulus, &["modulus-exponent", "modulus-flat-slope"], "flat"),
                    checks(r, ELLIPSE, Suite::Modulus, &["modulus-exponent", "modulus-uniform-constant"], "ellipse"),
                ])
            }),
        ),
        (13, "determinism", Box::new(|_| determinism())),
    ];
    for (id, name, eval) in &criteria {
        let v = eval(&mut runs);
        let tag = if v.passed { "PASS" } else { "FAIL" };
        let note = if !v.passed && KNOWN_FAILS.contains(id) { " (documented)" } else { "" };
        println!("{tag} criterion {id:>2} {name}{note}: {}", v.detail);
        if !v.passed && !KNOWN_FAILS.contains(id) {
            unexpected.push(*id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
    } else {
        println!("acceptance: unexpected failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}
