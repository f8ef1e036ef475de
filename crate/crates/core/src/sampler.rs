//! Path-level Monte Carlo for Brownian motion conditioned to stay in the
//! tube, the weighted limit law on `L`, marginal statistics and the
//! Kolmogorov modulus.
//!
//! Generator convention: `½Δ`, so every coordinate moves by `N(0, h)` per
//! step. Randomness comes from [`RngStream`]s keyed by `(seed, stream)`;
//! every ensemble is split into a fixed number of streams processed
//! independently and merged in stream order, so results do not depend on
//! the thread count.
//!
//! Conditioning on survival up to `T` is exponentially rare for thin tubes
//! (`≈ e^{−π²T/(8ε²)}`), so besides plain rejection there is a guided mode:
//! each step is itself a rejection sample from the killed one-step kernel
//! tilted by the fiber guide `ψ`, and the path carries the importance
//! weight `ψ(Y₀)/ψ(Y_T) · e^{½∫U(Y)dt}` that turns the guided law back into
//! the conditioned one. The weight is bounded in ε because the guide is the
//! fiber ground state up to the curvature potential.

use std::io::{self, Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::discretize::{
    assemble_direct, build_grid_shared, DiscretizeError, FiberStencil, PotentialMode, TubeGrid, LAMBDA0,
};
use crate::geometry::{potential_from_jet, wrap, AmbientPoint, CurvatureJet, CurveGeometry, CurveKind, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("acceptance rate {rate:.3e} below the floor {floor:.1e}; use a larger ε, a smaller T or the guided/h-transform samplers")]
    AcceptanceBelowFloor { rate: f64, floor: f64 },
    #[error("effective sample size {ess:.1} below 30; estimate refused")]
    LowEss { ess: f64 },
    #[error("survival mass {mass:e} underflowed")]
    SurvivalUnderflow { mass: f64 },
    #[error("time {t} is not on the recorded grid")]
    NotRecorded { t: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A ChaCha8 stream selected by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Position in the stream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_counter(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// One ambient Brownian path.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<AmbientPoint>,
    pub log_weight: f64,
    pub alive: bool,
}

fn step_count(t: f64, h: f64) -> Result<usize, SamplerError> {
    if !(h > 0.0) || t < 0.0 {
        return Err(SamplerError::Invalid(format!("need h > 0 and T ≥ 0, got h={h}, T={t}")));
    }
    let k = (t / h).round();
    if (k * h - t).abs() > 1e-9 * t.max(h) {
        return Err(SamplerError::Invalid(format!("T={t} is not a multiple of h={h}")));
    }
    Ok(k as usize)
}

/// Brownian motion in the plane, or on the cylinder chart when `period`
/// is given (the first coordinate wraps mod `period`).
pub fn simulate_bm(
    start: AmbientPoint,
    t_end: f64,
    h: f64,
    period: Option<f64>,
    rng: &mut RngStream,
) -> Result<PathSample, SamplerError> {
    let k = step_count(t_end, h)?;
    let sd = h.sqrt();
    let mut times = Vec::with_capacity(k + 1);
    let mut states = Vec::with_capacity(k + 1);
    let mut p = start;
    times.push(0.0);
    states.push(p);
    for i in 1..=k {
        p.x += sd * rng.normal();
        p.y += sd * rng.normal();
        if let Some(l) = period {
            p.x = wrap(p.x, l);
        }
        times.push(i as f64 * h);
        states.push(p);
    }
    Ok(PathSample { times, states, log_weight: 0.0, alive: true })
}

/// An ensemble of paths recorded at a few times. Values are stored
/// path-major: path `p`, record `r` sits at `p * times.len() + r`.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    /// Arc-length coordinate of the foot point.
    pub s: Vec<f64>,
    /// Physical normal offset (0 for paths on `L`).
    pub n: Vec<f64>,
    pub log_weight: Vec<f64>,
    /// Stream of each path.
    pub stream: Vec<u32>,
    pub streams: usize,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stream.is_empty()
    }

    pub fn record_index(&self, t: f64) -> Result<usize, SamplerError> {
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or(SamplerError::NotRecorded { t })
    }

    pub fn s_at(&self, path: usize, rec: usize) -> f64 {
        self.s[path * self.times.len() + rec]
    }

    pub fn n_at(&self, path: usize, rec: usize) -> f64 {
        self.n[path * self.times.len() + rec]
    }

    /// Number of recorded states with `|n| ≥ eps`.
    pub fn containment_violations(&self, eps: f64) -> usize {
        self.n.iter().filter(|x| x.abs() >= eps).count()
    }
}

/// Recording grid: the requested times snapped to steps, always including
/// 0 and `T`, sorted and deduplicated.
fn record_steps(t_end: f64, h: f64, record: &[f64]) -> Result<(Vec<u64>, Vec<f64>), SamplerError> {
    let k = step_count(t_end, h)?;
    let mut steps = vec![0u64, k as u64];
    for &t in record {
        if t < 0.0 || t > t_end * (1.0 + 1e-12) {
            return Err(SamplerError::Invalid(format!("record time {t} outside [0, {t_end}]")));
        }
        steps.push(step_count(t, h)? as u64);
    }
    steps.sort_unstable();
    steps.dedup();
    let times = steps.iter().map(|&i| i as f64 * h).collect();
    Ok((steps, times))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditioningMode {
    /// Independent paths, rejected on exit.
    Plain { floor: f64 },
    /// Every step is drawn by rejection from the killed kernel tilted by
    /// the fiber guide `ψ`; paths never leave and carry importance weights.
    Guided { max_trials: usize },
}

#[derive(Debug, Clone)]
pub struct RejectionOptions {
    pub bridge_correction: bool,
    pub mode: ConditioningMode,
    pub record: Vec<f64>,
}

impl Default for RejectionOptions {
    fn default() -> Self {
        Self { bridge_correction: true, mode: ConditioningMode::Guided { max_trials: 1_000_000 }, record: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionedPaths {
    pub paths: PathSet,
    /// Fraction of accepted paths (plain) or the weighted estimate of the
    /// survival probability (guided).
    pub acceptance: f64,
    pub attempts: u64,
}

/// Probability that a Brownian bridge of duration `h` between two interior
/// points stays inside `(−ε, ε)`, treating both walls as straight.
fn bridge_survival(n1: f64, n2: f64, eps: f64, h: f64) -> f64 {
    let up = 1.0 - (-2.0 * (eps - n1) * (eps - n2) / h).exp();
    let down = 1.0 - (-2.0 * (eps + n1) * (eps + n2) / h).exp();
    (up * down).max(0.0)
}

#[derive(Clone, Copy)]
struct Walker {
    p: AmbientPoint,
    s: f64,
    n: f64,
    jet: CurvatureJet,
}

/// Advance one walker; returns false when it leaves the tube.
fn advance(curve: &CurveGeometry, w: &mut Walker, eps: f64, h: f64, bridge: bool, rng: &mut RngStream) -> bool {
    let sd = h.sqrt();
    let mut p = w.p;
    p.x += sd * rng.normal();
    p.y += sd * rng.normal();
    if curve.kind() == CurveKind::FlatCylinder {
        p.x = wrap(p.x, curve.total_length());
    }
    let (f, jet) = match curve.project_with_jet(p, Some(w.s)) {
        Ok(x) => x,
        Err(_) => return false,
    };
    if f.n.abs() >= eps {
        return false;
    }
    if bridge && rng.uniform() >= bridge_survival(w.n, f.n, eps, h) {
        return false;
    }
    w.p = p;
    w.s = f.s;
    w.n = f.n;
    w.jet = jet;
    true
}

fn start_walker(curve: &CurveGeometry) -> Result<Walker, SamplerError> {
    Ok(Walker { p: curve.fermi_to_ambient(0.0, 0.0)?, s: 0.0, n: 0.0, jet: curve.curvature_jet(0.0) })
}

/// Brownian motion started on `L` at `s = 0` and conditioned to stay in
/// `L(ε)` up to `T`.
pub fn condition_rejection(
    curve: Arc<CurveGeometry>,
    eps: f64,
    t_end: f64,
    h: f64,
    n_target: usize,
    seed: u64,
    opts: &RejectionOptions,
) -> Result<ConditionedPaths, SamplerError> {
    if !(eps > 0.0) || (curve.kappa_max() > 0.0 && eps * curve.kappa_max() >= 1.0) {
        return Err(SamplerError::Invalid(format!("ε={eps} outside the Fermi chart")));
    }
    if n_target == 0 {
        return Err(SamplerError::Invalid("n_target must be positive".into()));
    }
    let k = step_count(t_end, h)?;
    let (steps, times) = record_steps(t_end, h, &opts.record)?;
    let nrec = steps.len();
    match opts.mode {
        ConditioningMode::Plain { floor } => {
            let streams = 16.min(n_target);
            let per: Vec<usize> = (0..streams).map(|b| n_target / streams + usize::from(b < n_target % streams)).collect();
            let out: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..streams)
                .into_par_iter()
                .map(|b| -> Result<_, SamplerError> {
                    let mut rng = RngStream::new(seed, b as u64);
                    let mut s_rec = Vec::with_capacity(per[b] * nrec);
                    let mut n_rec = Vec::with_capacity(per[b] * nrec);
                    let mut attempts = 0u64;
                    let budget = ((per[b] as f64) / floor).ceil() as u64 + 1;
                    let mut accepted = 0usize;
                    let mut buf_s = vec![0.0; nrec];
                    let mut buf_n = vec![0.0; nrec];
                    while accepted < per[b] {
                        if attempts >= budget {
                            return Err(SamplerError::AcceptanceBelowFloor {
                                rate: accepted as f64 / attempts as f64,
                                floor,
                            });
                        }
                        attempts += 1;
                        let mut w = start_walker(&curve)?;
                        let mut r = 1;
                        buf_s[0] = 0.0;
                        buf_n[0] = 0.0;
                        let mut ok = true;
                        for i in 1..=k {
                            if !advance(&curve, &mut w, eps, h, opts.bridge_correction, &mut rng) {
                                ok = false;
                                break;
                            }
                            if r < nrec && steps[r] == i as u64 {
                                buf_s[r] = w.s;
                                buf_n[r] = w.n;
                                r += 1;
                            }
                        }
                        if ok {
                            accepted += 1;
                            s_rec.extend_from_slice(&buf_s);
                            n_rec.extend_from_slice(&buf_n);
                        }
                    }
                    Ok((s_rec, n_rec, attempts))
                })
                .collect::<Result<_, _>>()?;
            let attempts: u64 = out.iter().map(|x| x.2).sum();
            let mut stream = Vec::with_capacity(n_target);
            for (b, &c) in per.iter().enumerate() {
                stream.extend(std::iter::repeat_n(b as u32, c));
            }
            let (s, n): (Vec<Vec<f64>>, Vec<Vec<f64>>) = out.into_iter().map(|x| (x.0, x.1)).unzip();
            Ok(ConditionedPaths {
                paths: PathSet {
                    times,
                    steps,
                    s: s.concat(),
                    n: n.concat(),
                    log_weight: vec![0.0; n_target],
                    stream,
                    streams,
                },
                acceptance: n_target as f64 / attempts as f64,
                attempts,
            })
        }
        ConditioningMode::Guided { max_trials } => {
            let streams = 16.min(n_target);
            let per: Vec<usize> = (0..streams).map(|b| n_target / streams + usize::from(b < n_target % streams)).collect();
            let psi_max = (1.0 - eps * curve.kappa_max()).powf(-0.5);
            let out: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, u64)> = (0..streams)
                .into_par_iter()
                .map(|b| -> Result<_, SamplerError> {
                    let mut rng = RngStream::new(seed, b as u64);
                    let mut s_rec = Vec::with_capacity(per[b] * nrec);
                    let mut n_rec = Vec::with_capacity(per[b] * nrec);
                    let mut lw = Vec::with_capacity(per[b]);
                    let mut attempts = 0u64;
                    let mut buf_s = vec![0.0; nrec];
                    let mut buf_n = vec![0.0; nrec];
                    for _ in 0..per[b] {
                        let mut w = start_walker(&curve)?;
                        let psi0 = guide(&w, eps);
                        let mut u_prev = potential_from_jet(w.jet, w.n);
                        let mut acc = 0.0;
                        let mut r = 1;
                        for i in 1..=k {
                            let mut trials = 0usize;
                            loop {
                                trials += 1;
                                if trials > max_trials {
                                    return Err(SamplerError::AcceptanceBelowFloor {
                                        rate: 1.0 / max_trials as f64,
                                        floor: 1.0 / max_trials as f64,
                                    });
                                }
                                let mut cand = w;
                                if !advance(&curve, &mut cand, eps, h, opts.bridge_correction, &mut rng) {
                                    continue;
                                }
                                if rng.uniform() * psi_max < guide(&cand, eps) {
                                    w = cand;
                                    break;
                                }
                            }
                            attempts += trials as u64;
                            let u = potential_from_jet(w.jet, w.n);
                            acc += 0.25 * (u + u_prev) * h;
                            u_prev = u;
                            if r < nrec && steps[r] == i as u64 {
                                buf_s[r] = w.s;
                                buf_n[r] = w.n;
                                r += 1;
                            }
                        }
                        s_rec.extend_from_slice(&buf_s);
                        n_rec.extend_from_slice(&buf_n);
                        lw.push(acc + psi0.ln() - guide(&w, eps).ln());
                    }
                    Ok((s_rec, n_rec, lw, attempts))
                })
                .collect::<Result<_, _>>()?;
            let attempts = out.iter().map(|x| x.3).sum();
            let mut stream = Vec::with_capacity(n_target);
            for (b, &c) in per.iter().enumerate() {
                stream.extend(std::iter::repeat_n(b as u32, c));
            }
            let (mut s, mut n, mut log_weight) = (Vec::new(), Vec::new(), Vec::new());
            for x in out {
                s.extend(x.0);
                n.extend(x.1);
                log_weight.extend(x.2);
            }
            // survival probability: e^{−λ₀T/(2ε²)} E[W]
            let decay = -LAMBDA0 * t_end / (2.0 * eps * eps);
            let m = log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean_w = log_weight.iter().map(|l| (l - m).exp()).sum::<f64>() / n_target as f64;
            let acceptance = (decay + m + mean_w.ln()).exp();
            Ok(ConditionedPaths {
                paths: PathSet { times, steps, s, n, log_weight, stream, streams },
                acceptance,
                attempts,
            })
        }
    }
}

/// Fiber guide `ψ = ρ^{−1/2} cos(πn/(2ε))`. With it `½Δψ/ψ = −λ₀/(2ε²) + U/2`
/// exactly, so guided paths only carry the bounded weight `e^{½∫U}`.
fn guide(w: &Walker, eps: f64) -> f64 {
    (1.0 - w.n * w.jet.k).powf(-0.5) * (0.5 * std::f64::consts::PI * w.n / eps).cos().max(0.0)
}

/// Killing rate of the bare Brownian motion or of the `U`-weighted variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HMode {
    /// Plain Brownian motion killed at the wall.
    Plain,
    /// Brownian motion with the extra Feynman–Kac factor `e^{−½∫U}`; its
    /// transported generator is the compensated form.
    Nu,
}

/// Exact-in-discretization conditioned chain on the nodes of the physical
/// tube grid.
pub struct HTransformChain {
    pub grid: TubeGrid,
    pub t_end: f64,
    pub tau: f64,
    pub start: usize,
    mass: Vec<f64>,
    values: Vec<f64>,
    /// `M^{1/2}`-scaled eigenvectors: column `k` holds `u_k`.
    vectors: DMatrix<f64>,
    p_tau: DMatrix<f64>,
}

impl HTransformChain {
    /// Dense eigendecomposition of the direct operator on `ns × nv`; the
    /// chain makes `steps` jumps of length `T/steps`.
    pub fn new(
        curve: Arc<CurveGeometry>,
        eps: f64,
        t_end: f64,
        ns: usize,
        nv: usize,
        steps: usize,
        mode: HMode,
    ) -> Result<Self, SamplerError> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(SamplerError::Invalid("need T > 0 and at least one step".into()));
        }
        let grid = build_grid_shared(curve, ns, nv, eps)?;
        let pm = match mode {
            HMode::Plain => PotentialMode::Dirichlet,
            HMode::Nu => PotentialMode::Compensated,
        };
        let form = assemble_direct(&grid, pm, FiberStencil::Calibrated);
        let n = form.dim();
        let a = form.stiffness.to_dense();
        let isq: Vec<f64> = form.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let sym = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * isq[i] * isq[j]);
        let eig = SymmetricEigen::new(sym);
        let values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        let vectors = eig.eigenvectors;
        let tau = t_end / steps as f64;
        let mut chain = Self {
            grid,
            t_end,
            tau,
            start: 0,
            mass: form.mass,
            values,
            vectors,
            p_tau: DMatrix::zeros(0, 0),
        };
        chain.p_tau = chain.transition(tau);
        let j0 = chain
            .grid
            .v
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|x| x.0)
            .unwrap_or(0);
        chain.start = chain.grid.idx(0, j0);
        Ok(chain)
    }

    /// `P_t(x, y)`: probability of moving from node `x` to node `y` in
    /// time `t` without being killed.
    pub fn transition(&self, t: f64) -> DMatrix<f64> {
        let n = self.mass.len();
        let d: Vec<f64> = self.values.iter().map(|l| (-0.5 * t * l).exp()).collect();
        let scaled = DMatrix::from_fn(n, n, |i, k| self.vectors[(i, k)] * d[k]);
        let core = &scaled * self.vectors.transpose();
        DMatrix::from_fn(n, n, |x, y| (core[(x, y)] * (self.mass[y] / self.mass[x]).sqrt()).max(0.0))
    }

    /// `π_r(x) = Σ_y P_r(x, y)`.
    pub fn survival(&self, r: f64) -> Vec<f64> {
        let n = self.mass.len();
        let sq: Vec<f64> = self.mass.iter().map(|m| m.sqrt()).collect();
        // π_r = M^{-1/2} V e^{-rΛ/2} Vᵀ M^{1/2} 1
        let mut coef = vec![0.0; n];
        for (k, c) in coef.iter_mut().enumerate() {
            let dot: f64 = (0..n).map(|y| self.vectors[(y, k)] * sq[y]).sum();
            *c = dot * (-0.5 * r * self.values[k]).exp();
        }
        (0..n)
            .map(|x| ((0..n).map(|k| self.vectors[(x, k)] * coef[k]).sum::<f64>() / sq[x]).max(0.0))
            .collect()
    }

    /// Conditioned marginal at `t`: `∝ P_t(x₀, y) π_{T−t}(y)`.
    pub fn marginal(&self, t: f64) -> Result<Vec<f64>, SamplerError> {
        let p = self.transition(t);
        let pi = self.survival(self.t_end - t);
        let mut q: Vec<f64> = (0..self.mass.len()).map(|y| p[(self.start, y)] * pi[y]).collect();
        let total: f64 = q.iter().sum();
        if !(total > 1e-300) {
            return Err(SamplerError::SurvivalUnderflow { mass: total });
        }
        q.iter_mut().for_each(|x| *x /= total);
        Ok(q)
    }

    /// Cumulative rows of the step-`k` transition `P_τ(x,y)π_r(y)/π_{r+τ}(x)`.
    fn step_table(&self, k: usize) -> Result<Vec<f64>, SamplerError> {
        let n = self.mass.len();
        let r = (self.t_end - (k + 1) as f64 * self.tau).max(0.0);
        let pi = self.survival(r);
        let mut table = vec![0.0; n * n];
        for x in 0..n {
            let row = &mut table[x * n..(x + 1) * n];
            let mut acc = 0.0;
            for (y, c) in row.iter_mut().enumerate() {
                acc += self.p_tau[(x, y)] * pi[y];
                *c = acc;
            }
            if acc > 1e-300 {
                row.iter_mut().for_each(|c| *c /= acc);
            } else {
                // unreachable rows are never visited; keep them well formed
                row.iter_mut().enumerate().for_each(|(y, c)| *c = if y >= x { 1.0 } else { 0.0 });
            }
        }
        Ok(table)
    }

    /// `n` chain paths recorded at the step-aligned `record` times.
    pub fn sample(&self, n: usize, seed: u64, record: &[f64], streams: usize) -> Result<PathSet, SamplerError> {
        let steps = (self.t_end / self.tau).round() as usize;
        let (rec_steps, times) = record_steps(self.t_end, self.tau, record)?;
        let nrec = rec_steps.len();
        let nn = self.mass.len();
        let streams = streams.clamp(1, n.max(1));
        let per: Vec<usize> = (0..streams).map(|b| n / streams + usize::from(b < n % streams)).collect();
        let mut state: Vec<Vec<usize>> = per.iter().map(|&c| vec![self.start; c]).collect();
        let mut rngs: Vec<RngStream> = (0..streams).map(|b| RngStream::new(seed, b as u64)).collect();
        let mut hist: Vec<Vec<usize>> = per.iter().map(|&c| vec![self.start; c * nrec]).collect();
        let mut r = 1;
        for k in 0..steps {
            let table = self.step_table(k)?;
            state.par_iter_mut().zip(rngs.par_iter_mut()).for_each(|(st, rng)| {
                for x in st.iter_mut() {
                    let row = &table[*x * nn..(*x + 1) * nn];
                    let u = rng.uniform();
                    *x = row.partition_point(|&c| c <= u).min(nn - 1);
                }
            });
            if r < nrec && rec_steps[r] == (k + 1) as u64 {
                for (h, st) in hist.iter_mut().zip(&state) {
                    for (j, &x) in st.iter().enumerate() {
                        h[j * nrec + r] = x;
                    }
                }
                r += 1;
            }
        }
        let mut s = Vec::with_capacity(n * nrec);
        let mut nv = Vec::with_capacity(n * nrec);
        let mut stream = Vec::with_capacity(n);
        for (b, h) in hist.iter().enumerate() {
            for &x in h {
                let (i, j) = self.grid.ij(x);
                s.push(self.grid.s[i]);
                nv.push(self.grid.eps * self.grid.v[j]);
            }
            stream.extend(std::iter::repeat_n(b as u32, per[b]));
        }
        Ok(PathSet {
            times,
            steps: rec_steps,
            s,
            n: nv,
            log_weight: vec![0.0; n],
            stream,
            streams,
        })
    }
}

/// Convenience wrapper: build the chain and sample it.
#[allow(clippy::too_many_arguments)]
pub fn condition_htransform(
    curve: Arc<CurveGeometry>,
    eps: f64,
    t_end: f64,
    ns: usize,
    nv: usize,
    steps: usize,
    mode: HMode,
    n: usize,
    seed: u64,
    record: &[f64],
) -> Result<PathSet, SamplerError> {
    HTransformChain::new(curve, eps, t_end, ns, nv, steps, mode)?.sample(n, seed, record, 16)
}

/// Which path law on `L` the limit sampler targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitLaw {
    /// Limit of conditioned plain Brownian motion: weight `e^{+½∫κ²/4}`.
    ConditionedBm,
    /// Limit of the `U`-weighted variant: unweighted Brownian motion on `L`.
    Nu,
}

/// Brownian motion on `L` (arc length mod `Λ`) with trapezoidal
/// Feynman–Kac log-weights.
pub fn limit_sampler(
    curve: Arc<CurveGeometry>,
    t_end: f64,
    h: f64,
    n: usize,
    seed: u64,
    law: LimitLaw,
    record: &[f64],
) -> Result<PathSet, SamplerError> {
    let k = step_count(t_end, h)?;
    let (steps, times) = record_steps(t_end, h, record)?;
    let nrec = steps.len();
    let lam = curve.total_length();
    let streams = 16.min(n.max(1));
    let per: Vec<usize> = (0..streams).map(|b| n / streams + usize::from(b < n % streams)).collect();
    let sign = match law {
        LimitLaw::ConditionedBm => 1.0,
        LimitLaw::Nu => 0.0,
    };
    let sd = h.sqrt();
    let out: Vec<(Vec<f64>, Vec<f64>)> = (0..streams)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, b as u64);
            let mut s_rec = Vec::with_capacity(per[b] * nrec);
            let mut lw = Vec::with_capacity(per[b]);
            let mut buf = vec![0.0; nrec];
            for _ in 0..per[b] {
                let mut s = 0.0;
                let mut v_prev = 0.25 * curve.curvature(s).powi(2);
                let mut acc = 0.0;
                let mut r = 1;
                buf[0] = 0.0;
                for i in 1..=k {
                    s = wrap(s + sd * rng.normal(), lam);
                    let v = 0.25 * curve.curvature(s).powi(2);
                    acc += 0.5 * (v + v_prev) * h;
                    v_prev = v;
                    if r < nrec && steps[r] == i as u64 {
                        buf[r] = s;
                        r += 1;
                    }
                }
                s_rec.extend_from_slice(&buf);
                lw.push(sign * 0.5 * acc);
            }
            (s_rec, lw)
        })
        .collect();
    let mut stream = Vec::with_capacity(n);
    for (b, &c) in per.iter().enumerate() {
        stream.extend(std::iter::repeat_n(b as u32, c));
    }
    let (s, lw): (Vec<Vec<f64>>, Vec<Vec<f64>>) = out.into_iter().unzip();
    let s = s.concat();
    Ok(PathSet {
        times,
        steps,
        n: vec![0.0; s.len()],
        s,
        log_weight: lw.concat(),
        stream,
        streams,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: f64,
    pub n: usize,
}

/// Self-normalized weights from log-weights (all 1 when unweighted).
fn weights(set: &PathSet) -> Vec<f64> {
    let m = set.log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0; set.len()];
    }
    set.log_weight.iter().map(|l| (l - m).exp()).collect()
}

/// Mean and standard error of per-path values.
pub fn estimate(set: &PathSet, values: &[f64]) -> Result<McEstimate, SamplerError> {
    let n = set.len();
    if n == 0 {
        return Err(SamplerError::LowEss { ess: 0.0 });
    }
    let w = weights(set);
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let ess = sw * sw / sw2;
    if ess < 30.0 {
        return Err(SamplerError::LowEss { ess });
    }
    let mean = w.iter().zip(values).map(|(a, b)| a * b).sum::<f64>() / sw;
    let var_w: f64 = w.iter().zip(values).map(|(a, b)| a * a * (b - mean).powi(2)).sum::<f64>() / (sw * sw);
    Ok(McEstimate { mean, stderr: var_w.sqrt(), n_effective: ess.min(n as f64), n })
}

/// `E[f(π Y_t)]` over the set.
pub fn marginal_stat<F: Fn(f64) -> f64>(set: &PathSet, f: F, t: f64) -> Result<McEstimate, SamplerError> {
    let r = set.record_index(t)?;
    let vals: Vec<f64> = (0..set.len()).map(|p| f(set.s_at(p, r))).collect();
    estimate(set, &vals)
}

/// `E[d_L(π Y_s, π Y_t)^{2M}]`.
pub fn kolmogorov_modulus(
    set: &PathSet,
    curve: &CurveGeometry,
    s: f64,
    t: f64,
    m: u32,
) -> Result<McEstimate, SamplerError> {
    if s > t {
        return Err(SamplerError::Invalid("need s ≤ t".into()));
    }
    let a = set.record_index(s)?;
    let b = set.record_index(t)?;
    let vals: Vec<f64> = (0..set.len())
        .map(|p| curve.geodesic_distance(set.s_at(p, a), set.s_at(p, b)).powi(2 * m as i32))
        .collect();
    estimate(set, &vals)
}

#[derive(Debug, Clone)]
pub struct ModulusRow {
    pub eps: f64,
    pub lag: f64,
    pub estimate: McEstimate,
}

/// Weighted least-squares slope of `log E` against `log lag`, using
/// delta-method weights `(E/stderr)²`.
pub fn modulus_slope(rows: &[ModulusRow]) -> f64 {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.estimate.mean > 0.0)
        .map(|r| {
            let rel = (r.estimate.stderr / r.estimate.mean).max(1e-12);
            (r.lag.ln(), r.estimate.mean.ln(), 1.0 / (rel * rel))
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Modulus estimates for the pairs `(T − ℓ, T)`.
pub fn modulus_sweep(
    set: &PathSet,
    curve: &CurveGeometry,
    eps: f64,
    t_end: f64,
    lags: &[f64],
    m: u32,
) -> Result<Vec<ModulusRow>, SamplerError> {
    lags.iter()
        .map(|&l| {
            Ok(ModulusRow { eps, lag: l, estimate: kolmogorov_modulus(set, curve, t_end - l, t_end, m)? })
        })
        .collect()
}

/// Size in bytes of one binary path record.
pub const RECORD_BYTES: usize = 4 + 8 + 8 + 8 + 8;

/// Little-endian records `(stream: u32, step: u64, s: f64, n: f64, log_w: f64)`,
/// path by path, records in time order.
pub fn write_records<W: Write>(set: &PathSet, mut out: W) -> io::Result<()> {
    let nrec = set.times.len();
    let mut buf = Vec::with_capacity(RECORD_BYTES * nrec);
    for p in 0..set.len() {
        buf.clear();
        for r in 0..nrec {
            buf.extend_from_slice(&set.stream[p].to_le_bytes());
            buf.extend_from_slice(&set.steps[r].to_le_bytes());
            buf.extend_from_slice(&set.s_at(p, r).to_le_bytes());
            buf.extend_from_slice(&set.n_at(p, r).to_le_bytes());
            buf.extend_from_slice(&set.log_weight[p].to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub stream: u32,
    pub step: u64,
    pub s: f64,
    pub n: f64,
    pub log_w: f64,
}

pub fn read_records<R: Read>(mut input: R) -> io::Result<Vec<PathRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated path record"));
    }
    Ok(bytes
        .chunks_exact(RECORD_BYTES)
        .map(|c| PathRecord {
            stream: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            step: u64::from_le_bytes(c[4..12].try_into().unwrap()),
            s: f64::from_le_bytes(c[12..20].try_into().unwrap()),
            n: f64::from_le_bytes(c[20..28].try_into().unwrap()),
            log_w: f64::from_le_bytes(c[28..36].try_into().unwrap()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circle, make_flat_cylinder};

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(5, 1);
        let mut b = RngStream::new(5, 1);
        let mut c = RngStream::new(5, 2);
        let xa: Vec<f64> = (0..8).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.normal()).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let pos = a.counter();
        let next = a.normal();
        a.set_counter(pos);
        assert_eq!(a.normal(), next);
    }

    #[test]
    fn zero_step_path_is_the_start() {
        let mut rng = RngStream::new(1, 0);
        let p = simulate_bm(AmbientPoint::new(0.5, -0.2), 0.0, 0.01, None, &mut rng).unwrap();
        assert_eq!(p.states, vec![AmbientPoint::new(0.5, -0.2)]);
    }

    #[test]
    fn bridge_survival_limits() {
        assert!(bridge_survival(0.0, 0.0, 1.0, 1e-6) > 1.0 - 1e-12);
        assert!(bridge_survival(0.999, 0.999, 1.0, 1.0) < 0.01);
    }

    #[test]
    fn unit_observable_is_exact() {
        let c = Arc::new(make_circle(1.0).unwrap());
        let set = limit_sampler(c, 0.1, 0.01, 200, 3, LimitLaw::ConditionedBm, &[]).unwrap();
        let e = marginal_stat(&set, |_| 1.0, 0.1).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-15 && e.stderr < 1e-15);
    }

    #[test]
    fn records_round_trip() {
        let c = Arc::new(make_flat_cylinder(1.0).unwrap());
        let set = limit_sampler(c, 0.05, 0.01, 40, 9, LimitLaw::Nu, &[0.02]).unwrap();
        let mut bytes = Vec::new();
        write_records(&set, &mut bytes).unwrap();
        assert_eq!(bytes.len(), RECORD_BYTES * set.len() * set.times.len());
        let recs = read_records(&bytes[..]).unwrap();
        assert_eq!(recs[1].step, set.steps[1]);
        assert_eq!(recs[4].s, set.s_at(1, 1));
    }
}
