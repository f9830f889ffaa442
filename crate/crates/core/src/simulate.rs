//! Quenched and annealed Monte Carlo walkers, cut-time detection on the
//! projected walk, and the naive and regeneration speed estimators.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::annealed::{AnnealedModel, KernelCache};
use crate::environment::{CookieLaw, EnvironmentSpec, Kernel, SiteLaw};
use crate::error::{Error, Result};
use crate::lace::{pi_table, speed_series};
use crate::lattice::{Site, Step, StepCounts};
use crate::rng::ReplicaStreams;

pub const DEFAULT_GUARD: usize = 200;
/// Accepted cuts per 1000 q-steps below which a record is flagged sparse.
pub const SPARSE_CUTS_PER_KSTEP: f64 = 1.0;

/// A simulated path. Steps are kept only when requested.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub d: usize,
    pub d1: usize,
    pub n: u64,
    pub end: Site,
    pub steps: Vec<Step>,
}

impl Trajectory {
    fn new(d: usize, d1: usize, record: bool, n: u64) -> Self {
        let steps = if record { Vec::with_capacity(n as usize) } else { Vec::new() };
        Trajectory { d, d1, n: 0, end: Site::origin(), steps }
    }

    fn push(&mut self, s: Step, record: bool) {
        self.end = self.end.shifted(s);
        self.n += 1;
        if record {
            self.steps.push(s);
        }
    }

    pub fn is_q_step(&self, s: Step) -> bool {
        s.axis() >= self.d - self.d1
    }

    /// X_0, …, X_n.
    pub fn positions(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut x = Site::origin();
        out.push(x);
        for &s in &self.steps {
            x = x.shifted(s);
            out.push(x);
        }
        out
    }

    /// τ_1 < τ_2 < …: times after which the projection has moved.
    pub fn tau(&self) -> Vec<u64> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| self.is_q_step(**s))
            .map(|(i, _)| i as u64 + 1)
            .collect()
    }

    /// Y_0 = 0, Y_j = Π X_{τ_j}.
    pub fn y_path(&self) -> Vec<Site> {
        let mut out = vec![Site::origin()];
        let mut y = Site::origin();
        for &s in &self.steps {
            if self.is_q_step(s) {
                y = y.shifted(Step::new(s.axis() - (self.d - self.d1), s.sign()));
                out.push(y);
            }
        }
        out
    }
}

/// Cumulative step table of a kernel for inverse-CDF sampling.
#[derive(Clone, Debug)]
struct Sampler {
    steps: Vec<Step>,
    cum: Vec<f64>,
}

impl Sampler {
    fn new(k: &Kernel) -> Self {
        let mut steps = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for s in Step::all(k.dim()) {
            let w = k.get(s);
            if w > 0.0 {
                acc += w;
                steps.push(s);
                cum.push(acc);
            }
        }
        Sampler { steps, cum }
    }

    fn sample(&self, u: f64) -> Step {
        let u = u * self.cum.last().copied().unwrap_or(1.0);
        let i = self.cum.partition_point(|&c| c <= u).min(self.steps.len() - 1);
        self.steps[i]
    }

    fn from_probs(d: usize, p: &[f64]) -> Self {
        let mut steps = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for (i, &w) in p.iter().enumerate().take(2 * d) {
            if w > 0.0 {
                acc += w;
                steps.push(Step::from_index(i));
                cum.push(acc);
            }
        }
        Sampler { steps, cum }
    }
}

enum EnvMode {
    Static,
    IidVisits,
    /// per atom: kernel indices per visit, last repeats
    Sequences(Vec<Vec<usize>>),
}

/// A lazily sampled quenched environment. The atom at x depends only on
/// (seed, replica, x), never on the order in which sites are first visited.
struct QuenchedEnv<'a> {
    probs: Vec<f64>,
    samplers: Vec<Sampler>,
    mode: EnvMode,
    streams: &'a ReplicaStreams,
    sites: FxHashMap<Site, (u32, u32)>,
}

impl<'a> QuenchedEnv<'a> {
    fn from_law(law: &SiteLaw, streams: &'a ReplicaStreams, iid: bool) -> Self {
        QuenchedEnv {
            probs: law.atoms.iter().map(|a| a.prob).collect(),
            samplers: law.atoms.iter().map(|a| Sampler::new(&a.kernel)).collect(),
            mode: if iid { EnvMode::IidVisits } else { EnvMode::Static },
            streams,
            sites: FxHashMap::default(),
        }
    }

    fn from_cookies(law: &CookieLaw, streams: &'a ReplicaStreams) -> Self {
        match law {
            CookieLaw::IidVisits(l) => Self::from_law(l, streams, true),
            CookieLaw::Sequences { atoms, .. } => {
                let mut samplers = Vec::new();
                let mut seqs = Vec::new();
                for (_, ks) in atoms {
                    let mut idx = Vec::new();
                    for k in ks {
                        idx.push(samplers.len());
                        samplers.push(Sampler::new(k));
                    }
                    seqs.push(idx);
                }
                QuenchedEnv {
                    probs: atoms.iter().map(|(p, _)| *p).collect(),
                    samplers,
                    mode: EnvMode::Sequences(seqs),
                    streams,
                    sites: FxHashMap::default(),
                }
            }
        }
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    fn sampler_at(&mut self, x: &Site) -> &Sampler {
        let entry = match self.sites.get_mut(x) {
            Some(e) => e,
            None => {
                let a = self.pick(self.streams.site_uniform(x, 0)) as u32;
                self.sites.entry(*x).or_insert((a, 0))
            }
        };
        let (atom, visits) = *entry;
        entry.1 += 1;
        let idx = match &self.mode {
            EnvMode::Static => atom as usize,
            EnvMode::IidVisits => {
                if visits == 0 {
                    atom as usize
                } else {
                    self.pick(self.streams.site_uniform(x, visits as u64))
                }
            }
            EnvMode::Sequences(seqs) => {
                let seq = &seqs[atom as usize];
                seq[(visits as usize).min(seq.len() - 1)]
            }
        };
        &self.samplers[idx]
    }
}

fn run_env(env: &mut QuenchedEnv<'_>, d: usize, d1: usize, n: u64, record: bool) -> Trajectory {
    let mut rng = env.streams.walk();
    let mut t = Trajectory::new(d, d1, record, n);
    for _ in 0..n {
        let x = t.end;
        let s = env.sampler_at(&x).sample(rng.random::<f64>());
        t.push(s, record);
    }
    t
}

/// Walk of `n` steps in a static environment drawn from `law`.
pub fn quenched_walk(law: &SiteLaw, seed: u64, replica: u64, n: u64, record: bool) -> Trajectory {
    let streams = ReplicaStreams::new(seed, replica);
    let mut env = QuenchedEnv::from_law(law, &streams, false);
    run_env(&mut env, law.dim, law.d1, n, record)
}

/// Walk of `n` steps in a cookie environment (kernel may change per visit).
pub fn quenched_walk_cookies(law: &CookieLaw, d1: usize, seed: u64, replica: u64, n: u64, record: bool) -> Trajectory {
    let streams = ReplicaStreams::new(seed, replica);
    let mut env = QuenchedEnv::from_cookies(law, &streams);
    run_env(&mut env, law.dim(), d1, n, record)
}

/// Walk of `n` steps drawn from the annealed conditional kernels.
pub fn annealed_walk(spec: &EnvironmentSpec, seed: u64, replica: u64, n: u64) -> Result<Trajectory> {
    let model = AnnealedModel::<f64>::new(spec);
    let mut cache = KernelCache::new(&model);
    let streams = ReplicaStreams::new(seed, replica);
    let mut rng = streams.walk();
    let d = spec.d();
    let mut counts: HashMap<Site, StepCounts> = HashMap::new();
    let mut t = Trajectory::new(d, spec.dims.d1, true, n);
    for _ in 0..n {
        let x = t.end;
        let c = counts.get(&x).copied().unwrap_or_default();
        let k = cache.get(&c).ok_or(Error::ZeroProbabilityHistory)?;
        let s = Sampler::from_probs(d, &k.p).sample(rng.random::<f64>());
        counts.entry(x).or_default().add(s);
        t.push(s, true);
    }
    Ok(t)
}

/// Cut times of the projected walk found on a finite window.
#[derive(Clone, Debug, Serialize)]
pub struct CutRecord {
    pub guard: usize,
    /// Number of q-steps in the window.
    pub q_steps: usize,
    /// Accepted cut indices n (in q-step units).
    pub cuts: Vec<usize>,
    /// Per block between consecutive cuts: (ΔX, Δτ, q-steps in the block).
    pub blocks: Vec<(Vec<i64>, u64, usize)>,
    pub sparse: bool,
}

impl CutRecord {
    pub fn cuts_per_kstep(&self) -> f64 {
        1000.0 * self.cuts.len() as f64 / self.q_steps.max(1) as f64
    }
}

/// Indices n with {Y_0..Y_{n−1}} ∩ {Y_n..Y_J} = ∅ and guard ≤ n ≤ J − guard.
pub fn cut_indices(y: &[Site], guard: usize) -> Vec<usize> {
    let j = y.len() - 1;
    let mut last: FxHashMap<Site, usize> = FxHashMap::default();
    for (i, s) in y.iter().enumerate() {
        last.insert(*s, i);
    }
    let mut out = Vec::new();
    // reach = max over earlier indices of the last visit to the same site
    let mut reach = 0usize;
    for n in 1..=j {
        reach = reach.max(last[&y[n - 1]]);
        if reach < n && n >= guard && n + guard <= j {
            out.push(n);
        }
    }
    out
}

pub fn cut_times(traj: &Trajectory, guard: usize) -> Result<CutRecord> {
    if traj.steps.len() as u64 != traj.n {
        return Err(Error::Config("cut detection needs a recorded trajectory".into()));
    }
    let y = traj.y_path();
    let q_steps = y.len() - 1;
    if q_steps < 2 * guard {
        return Err(Error::TooShort { have: q_steps, need: 2 * guard });
    }
    let cuts = cut_indices(&y, guard);
    let tau = traj.tau();
    let pos = traj.positions();
    let at = |n: usize| -> (Site, u64) {
        let t = if n == 0 { 0 } else { tau[n - 1] };
        (pos[t as usize], t)
    };
    let blocks = cuts
        .windows(2)
        .map(|w| {
            let (xa, ta) = at(w[0]);
            let (xb, tb) = at(w[1]);
            let dx = (0..traj.d).map(|a| xb.coord(a) as i64 - xa.coord(a) as i64).collect();
            (dx, tb - ta, w[1] - w[0])
        })
        .collect();
    let mut rec = CutRecord { guard, q_steps, cuts, blocks, sparse: false };
    rec.sparse = rec.cuts_per_kstep() < SPARSE_CUTS_PER_KSTEP;
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Regeneration,
    Series,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Regeneration => "regeneration",
            Method::Series => "series",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "naive" => Ok(Method::Naive),
            "regeneration" => Ok(Method::Regeneration),
            "series" => Ok(Method::Series),
            _ => Err(Error::Config(format!("unknown method {s}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedEstimate {
    pub method: Method,
    pub point: Vec<f64>,
    /// 1.96 standard errors.
    pub ci_halfwidth: Vec<f64>,
    pub se: Vec<f64>,
    pub n: u64,
    pub reps: usize,
    pub seed: u64,
    pub cuts_per_kstep: Option<f64>,
    pub mean_dtau: Option<f64>,
    pub mean_dtau_se: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    pub n: u64,
    pub reps: usize,
    pub seed: u64,
    pub guard: usize,
}

impl SimConfig {
    pub fn new(n: u64, reps: usize, seed: u64) -> Self {
        SimConfig { n, reps, seed, guard: DEFAULT_GUARD }
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

struct Replica {
    v: Vec<f64>,
    cuts_per_kstep: f64,
    dtau: f64,
}

fn replica(law: &SiteLaw, cfg: &SimConfig, r: u64, method: Method) -> Result<Replica> {
    let d = law.dim;
    let record = method == Method::Regeneration;
    let t = quenched_walk(law, cfg.seed, r, cfg.n, record);
    if !record {
        let v = (0..d).map(|a| t.end.coord(a) as f64 / cfg.n as f64).collect();
        return Ok(Replica { v, cuts_per_kstep: f64::NAN, dtau: f64::NAN });
    }
    let rec = cut_times(&t, cfg.guard)?;
    if rec.cuts.len() < 2 {
        return Err(Error::NoCutsDetected);
    }
    let (dx, dt, nq) = rec.blocks.iter().fold((vec![0i64; d], 0u64, 0usize), |(mut x, t, q), (bx, bt, bq)| {
        for a in 0..d {
            x[a] += bx[a];
        }
        (x, t + bt, q + bq)
    });
    let v = dx.iter().map(|&x| x as f64 / dt as f64).collect();
    Ok(Replica { v, cuts_per_kstep: rec.cuts_per_kstep(), dtau: dt as f64 / nq as f64 })
}

/// Across-replica speed estimate for a walk in a static environment.
pub fn speed_estimate(law: &SiteLaw, cfg: &SimConfig, method: Method) -> Result<SpeedEstimate> {
    if method == Method::Series {
        return Err(Error::Config("the series method needs a full environment spec".into()));
    }
    if cfg.reps == 0 || cfg.n == 0 {
        return Err(Error::Config("steps and reps must be positive".into()));
    }
    let reps: Vec<Result<Replica>> = (0..cfg.reps as u64).into_par_iter().map(|r| replica(law, cfg, r, method)).collect();
    let reps: Vec<Replica> = reps.into_iter().collect::<Result<_>>()?;
    let d = law.dim;
    let mut point = Vec::new();
    let mut se = Vec::new();
    for a in 0..d {
        let (m, s) = mean_se(&reps.iter().map(|r| r.v[a]).collect::<Vec<_>>());
        point.push(m);
        se.push(s);
    }
    let (cuts, dtau, dtau_se) = if method == Method::Regeneration {
        let (c, _) = mean_se(&reps.iter().map(|r| r.cuts_per_kstep).collect::<Vec<_>>());
        let (t, ts) = mean_se(&reps.iter().map(|r| r.dtau).collect::<Vec<_>>());
        (Some(c), Some(t), Some(ts))
    } else {
        (None, None, None)
    };
    Ok(SpeedEstimate {
        method,
        ci_halfwidth: se.iter().map(|s| 1.96 * s).collect(),
        point,
        se,
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
        cuts_per_kstep: cuts,
        mean_dtau: dtau,
        mean_dtau_se: dtau_se,
    })
}

/// Truncated lace series as an estimate. The half-width is the size of the
/// last included increment, a rough truncation indicator.
pub fn series_estimate(spec: &EnvironmentSpec, m_max: usize, n_max: usize) -> Result<SpeedEstimate> {
    let s = speed_series(&pi_table(spec, m_max, n_max)?);
    let last = s.increments.last().cloned().unwrap_or_else(|| vec![0.0; spec.d()]);
    Ok(SpeedEstimate {
        method: Method::Series,
        point: s.v().to_vec(),
        ci_halfwidth: last.iter().map(|x| x.abs()).collect(),
        se: vec![0.0; spec.d()],
        n: m_max as u64,
        reps: 0,
        seed: 0,
        cuts_per_kstep: None,
        mean_dtau: None,
        mean_dtau_se: None,
    })
}
