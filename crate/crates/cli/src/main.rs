use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use tubeflow::config::{parse_config, Suite};
use tubeflow::{exit, run_suites, write_outputs};

#[derive(Parser)]
#[command(name = "tubeflow", about = "Heat flow and conditioned Brownian motion in thin tubes")]
struct Args {
    /// spectrum, semigroup, kernel-bound, inequalities, sample, modulus or all
    suite: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to TUBEFLOW_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return code(if e.use_stderr() { exit::CONFIG } else { exit::PASS });
        }
    };
    let Some(suites) = Suite::parse_selection(&args.suite) else {
        eprintln!("unknown suite `{}`", args.suite);
        return code(exit::CONFIG);
    };
    let threads = match args.threads {
        Some(t) => Some(t),
        None => match std::env::var("TUBEFLOW_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) => Some(t),
                Err(_) => {
                    eprintln!("TUBEFLOW_THREADS must be a non-negative integer, got `{v}`");
                    return code(exit::CONFIG);
                }
            },
            Err(_) => None,
        },
    };
    if let Some(t) = threads.filter(|&t| t > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("thread pool: {e}");
            return code(exit::CONFIG);
        }
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return code(exit::CONFIG);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return code(exit::CONFIG);
        }
    };
    if let Some(s) = args.seed {
        cfg.sampler.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }

    let start = Instant::now();
    let outputs = match run_suites(&cfg, &suites) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("numerical failure in {e}");
            return code(exit::NUMERICAL);
        }
    };
    if let Err(e) = write_outputs(&cfg.out_dir, &cfg, &outputs) {
        eprintln!("{}: {e}", cfg.out_dir.display());
        return code(exit::NUMERICAL);
    }
    let mut all_pass = true;
    for o in &outputs {
        for c in &o.record.checks {
            println!("{} {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, o.record.suite, c.id, c.detail);
        }
        eprintln!("{} finished in {:.1?}", o.record.suite, o.record.wall_time);
        all_pass &= o.record.passed();
    }
    eprintln!("total {:.1?}", start.elapsed());
    code(if all_pass { exit::PASS } else { exit::CHECK_FAILED })
}
