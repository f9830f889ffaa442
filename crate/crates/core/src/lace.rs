//! Exact enumeration of the lace-expansion coefficients π_m^{(N)}(x,y), their
//! β-derivatives φ, truncated speed series, and the series bounds.
//!
//! A coefficient of order m with N Δ-factors is a sum over path pieces
//! η^(0), …, η^(N): piece 0 is a single step weighted by the fresh-site kernel,
//! piece n ≥ 1 makes j_n ordinary steps, each weighted by the kernel
//! conditioned on (piece n−1) ∘ (piece n so far), followed by one step weighted
//! by Δ_n, the difference of that kernel and the one conditioned on piece n
//! alone. The total number of steps is m = 1 + Σ(j_n + 1).

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::annealed::{AnnealedModel, KernelCache, KernelPair};
use crate::environment::EnvironmentSpec;
use crate::error::{Error, Result};
pub use crate::green::GreenConstants;
use crate::lattice::{Site, Step, StepCounts};
use crate::scalar::Weight;

pub const DEFAULT_CAP: usize = 8;
/// Largest supported number of Δ-factors.
pub const MAX_N: usize = DEFAULT_CAP;

/// Callbacks that turn the path enumeration into a particular sum.
pub trait Visitor<T: Weight>: Sync {
    type State: Clone;
    type Acc: Send;

    fn empty(&self) -> Self::Acc;
    /// Piece 0: a single step with fresh-site kernel value `p` and β-derivative `dp`.
    fn root(&self, p: &T, dp: &T) -> Option<Self::State>;
    /// Ordinary step inside piece `piece` (1-based).
    fn normal(&self, st: &Self::State, piece: usize, p: &T, dp: &T) -> Option<Self::State>;
    /// Δ step closing piece `piece` when another piece follows.
    fn close(&self, st: &Self::State, piece: usize, delta: &T, ddelta: &T) -> Option<Self::State>;
    /// Δ step closing the last piece; `delta`/`ddelta` are indexed by step.
    fn terminal(&self, acc: &mut Self::Acc, st: &Self::State, t: &Terminal<'_, T>);
    fn merge(&self, into: &mut Self::Acc, from: Self::Acc);
}

pub struct Terminal<'a, T> {
    pub m: usize,
    pub n: usize,
    pub x: Site,
    pub delta: &'a [T],
    pub ddelta: &'a [T],
}

#[derive(Clone, Copy, Debug)]
pub struct LaceOptions {
    pub m_max: usize,
    pub n_max: usize,
    pub cap: usize,
}

impl LaceOptions {
    pub fn new(m_max: usize, n_max: usize) -> Self {
        LaceOptions { m_max, n_max, cap: DEFAULT_CAP }
    }

    fn check(&self) -> Result<()> {
        if self.m_max > self.cap {
            return Err(Error::CapExceeded { m_max: self.m_max, cap: self.cap });
        }
        if self.n_max == 0 || self.n_max > MAX_N {
            return Err(Error::Config(format!("n_max must be in 1..={MAX_N}")));
        }
        Ok(())
    }
}

fn departures(sites: &[Site], steps: &[Step], x: &Site, into: &mut StepCounts) {
    for (s, st) in sites.iter().zip(steps) {
        if s == x {
            into.add(*st);
        }
    }
}

struct Walker<'a, 'v, T: Weight, V: Visitor<T>> {
    cache: KernelCache<'a, T>,
    visitor: &'v V,
    opts: LaceOptions,
    d: usize,
    prev_sites: Vec<Site>,
    prev_steps: Vec<Step>,
    cur_sites: Vec<Site>,
    cur_steps: Vec<Step>,
    acc: V::Acc,
}

impl<'a, 'v, T: Weight, V: Visitor<T>> Walker<'a, 'v, T, V> {
    fn kernels(&mut self, x: &Site) -> (Option<KernelPair<T>>, Option<KernelPair<T>>, bool) {
        let mut short = StepCounts::default();
        departures(&self.cur_sites, &self.cur_steps, x, &mut short);
        let mut long = short;
        let before = long.total();
        departures(&self.prev_sites, &self.prev_steps, x, &mut long);
        let in_prev = long.total() > before;
        let kl = self.cache.get(&long).cloned();
        let ks = if in_prev { self.cache.get(&short).cloned() } else { None };
        (kl, ks, in_prev)
    }

    /// Continue piece number `closed + 1`, `used` steps taken so far.
    fn piece(&mut self, st: V::State, used: usize, closed: usize) {
        let x = *self.cur_sites.last().unwrap();
        let (long, short, in_prev) = self.kernels(&x);
        let Some(long) = long else { return };
        let n2 = 2 * self.d;
        if in_prev {
            let short = short.expect("sub-history of a feasible history is feasible");
            let delta: Vec<T> = (0..n2).map(|i| long.p[i].clone() - short.p[i].clone()).collect();
            let ddelta: Vec<T> = (0..n2).map(|i| long.dp[i].clone() - short.dp[i].clone()).collect();
            let t = Terminal { m: used + 1, n: closed + 1, x, delta: &delta, ddelta: &ddelta };
            self.visitor.terminal(&mut self.acc, &st, &t);
            if used + 1 < self.opts.m_max && closed + 1 < self.opts.n_max {
                for i in 0..n2 {
                    if delta[i].is_zero() && ddelta[i].is_zero() {
                        continue;
                    }
                    let Some(next) = self.visitor.close(&st, closed + 1, &delta[i], &ddelta[i]) else { continue };
                    let u = Step::from_index(i);
                    let mut sites = vec![x.shifted(u)];
                    let mut steps = Vec::new();
                    std::mem::swap(&mut sites, &mut self.cur_sites);
                    std::mem::swap(&mut steps, &mut self.cur_steps);
                    // the closed piece, including its Δ step, becomes the history
                    sites.push(x.shifted(u));
                    steps.push(u);
                    let old_sites = std::mem::replace(&mut self.prev_sites, sites);
                    let old_steps = std::mem::replace(&mut self.prev_steps, steps);
                    self.piece(next, used + 1, closed + 1);
                    let mut sites = std::mem::replace(&mut self.prev_sites, old_sites);
                    let mut steps = std::mem::replace(&mut self.prev_steps, old_steps);
                    sites.pop();
                    steps.pop();
                    self.cur_sites = sites;
                    self.cur_steps = steps;
                }
            }
        }
        if used + 2 > self.opts.m_max {
            return;
        }
        // budget left for ordinary steps after this one, before the Δ step
        let budget = (self.opts.m_max - used - 2) as i64;
        for i in 0..n2 {
            if long.p[i].is_zero() && long.dp[i].is_zero() {
                continue;
            }
            let u = Step::from_index(i);
            let y = x.shifted(u);
            if self.dist_to_prev_departures(&y) > budget {
                continue;
            }
            let Some(next) = self.visitor.normal(&st, closed + 1, &long.p[i], &long.dp[i]) else { continue };
            self.cur_sites.push(y);
            self.cur_steps.push(u);
            self.piece(next, used + 1, closed);
            self.cur_sites.pop();
            self.cur_steps.pop();
        }
    }

    fn dist_to_prev_departures(&self, y: &Site) -> i64 {
        let n = self.prev_sites.len() - 1;
        self.prev_sites[..n].iter().map(|s| s.l1_dist(y)).min().unwrap_or(i64::MAX)
    }
}

/// Runs `visitor` over all lace paths with at most `opts.m_max` steps.
/// Work is split into independent tasks by the first two steps and merged
/// in a fixed order, so the result does not depend on the thread count.
pub fn traverse<T: Weight, V: Visitor<T>>(model: &AnnealedModel<T>, opts: LaceOptions, visitor: &V) -> Result<V::Acc> {
    opts.check()?;
    let d = model.d();
    let fresh = model.kernel_ext(&StepCounts::default()).expect("fresh site is feasible");
    let mut tasks = Vec::new();
    if opts.m_max >= 3 {
        for a in 0..2 * d {
            if fresh.p[a].is_zero() && fresh.dp[a].is_zero() {
                continue;
            }
            for b in 0..2 * d {
                tasks.push((a, b));
            }
        }
    }
    let run = |&(a, b): &(usize, usize)| -> V::Acc {
        let mut acc = visitor.empty();
        let Some(root) = visitor.root(&fresh.p[a], &fresh.dp[a]) else { return acc };
        let s0 = Step::from_index(a);
        let x1 = Site::origin().shifted(s0);
        let mut w = Walker {
            cache: KernelCache::new(model),
            visitor,
            opts,
            d,
            prev_sites: vec![Site::origin(), x1],
            prev_steps: vec![s0],
            cur_sites: vec![x1],
            cur_steps: vec![],
            acc: visitor.empty(),
        };
        // x1 was never departed from in piece 0, so the first move of piece 1
        // is an ordinary step
        let (long, _, _) = w.kernels(&x1);
        let long = long.expect("one-step history is feasible");
        if long.p[b].is_zero() && long.dp[b].is_zero() {
            return acc;
        }
        let u = Step::from_index(b);
        let y = x1.shifted(u);
        if y.l1_dist(&Site::origin()) > (opts.m_max - 3) as i64 {
            return acc;
        }
        let Some(st) = visitor.normal(&root, 1, &long.p[b], &long.dp[b]) else { return acc };
        w.cur_sites.push(y);
        w.cur_steps.push(u);
        w.piece(st, 2, 0);
        visitor.merge(&mut acc, w.acc);
        acc
    };
    let parts: Vec<V::Acc> = tasks.par_iter().map(run).collect();
    let mut total = visitor.empty();
    for p in parts {
        visitor.merge(&mut total, p);
    }
    Ok(total)
}

/// π together with its three product-rule derivative parts.
#[derive(Clone, Debug, PartialEq)]
pub struct Coef<T> {
    pub pi: T,
    pub phi: [T; 3],
}

impl<T: Weight> Coef<T> {
    fn zero() -> Self {
        Coef { pi: T::zero(), phi: [T::zero(), T::zero(), T::zero()] }
    }

    fn add(&mut self, o: &Coef<T>) {
        self.pi = self.pi.clone() + o.pi.clone();
        for k in 0..3 {
            self.phi[k] = self.phi[k].clone() + o.phi[k].clone();
        }
    }

    pub fn phi_total(&self) -> T {
        self.phi[0].clone() + self.phi[1].clone() + self.phi[2].clone()
    }
}

type CoefMap<T> = HashMap<(usize, usize), HashMap<(Site, Step), Coef<T>>>;

struct PiVisitor;

impl<T: Weight> Visitor<T> for PiVisitor {
    /// (w, φ¹, φ², φ³)
    type State = [T; 4];
    type Acc = CoefMap<T>;

    fn empty(&self) -> Self::Acc {
        HashMap::new()
    }

    fn root(&self, p: &T, dp: &T) -> Option<Self::State> {
        Some([p.clone(), dp.clone(), T::zero(), T::zero()])
    }

    fn normal(&self, st: &Self::State, _piece: usize, p: &T, dp: &T) -> Option<Self::State> {
        let out = [
            st[0].clone() * p.clone(),
            st[1].clone() * p.clone(),
            st[2].clone() * p.clone() + st[0].clone() * dp.clone(),
            st[3].clone() * p.clone(),
        ];
        alive(out)
    }

    fn close(&self, st: &Self::State, _piece: usize, delta: &T, ddelta: &T) -> Option<Self::State> {
        let out = [
            st[0].clone() * delta.clone(),
            st[1].clone() * delta.clone(),
            st[2].clone() * delta.clone(),
            st[3].clone() * delta.clone() + st[0].clone() * ddelta.clone(),
        ];
        alive(out)
    }

    fn terminal(&self, acc: &mut Self::Acc, st: &Self::State, t: &Terminal<'_, T>) {
        let table = acc.entry((t.m, t.n)).or_default();
        for (i, (dl, ddl)) in t.delta.iter().zip(t.ddelta).enumerate() {
            if dl.is_zero() && ddl.is_zero() {
                continue;
            }
            let c = Coef {
                pi: st[0].clone() * dl.clone(),
                phi: [
                    st[1].clone() * dl.clone(),
                    st[2].clone() * dl.clone(),
                    st[3].clone() * dl.clone() + st[0].clone() * ddl.clone(),
                ],
            };
            table.entry((t.x, Step::from_index(i))).or_insert_with(Coef::zero).add(&c);
        }
    }

    fn merge(&self, into: &mut Self::Acc, from: Self::Acc) {
        merge_coefs(into, from);
    }
}

fn merge_coefs<T: Weight>(into: &mut CoefMap<T>, from: CoefMap<T>) {
    // keys are visited in sorted order so the per-key sums are reproducible
    let mut outer: Vec<_> = from.into_iter().collect();
    outer.sort_by_key(|(k, _)| *k);
    for (k, inner) in outer {
        let dst = into.entry(k).or_default();
        for (key, c) in inner {
            dst.entry(key).or_insert_with(Coef::zero).add(&c);
        }
    }
}

fn alive<T: Weight>(s: [T; 4]) -> Option<[T; 4]> {
    if s.iter().all(|x| x.is_zero()) {
        None
    } else {
        Some(s)
    }
}

/// Coefficients π_m^{(N)}(x,y) and φ_m^{(N)}(x,y) for m ≤ m_max, N ≤ n_max.
#[derive(Clone, Debug)]
pub struct LaceTable<T = f64> {
    pub d: usize,
    pub m_max: usize,
    pub n_max: usize,
    pub beta: f64,
    /// E_o[X₁].
    pub mean_step: Vec<T>,
    /// ∂/∂β E_o[X₁].
    pub mean_step_dbeta: Vec<T>,
    /// (m, N) → (x, y−x) → coefficients.
    pub coeffs: BTreeMap<(usize, usize), BTreeMap<(Site, Step), Coef<T>>>,
}

/// Per-(m,N) summary row.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub m: usize,
    pub n: usize,
    pub drift_sum: f64,
    pub abs_sum: f64,
    pub phi_drift_sum: f64,
    pub max_row_sum: f64,
    pub entries: usize,
}

impl<T: Weight> LaceTable<T> {
    pub fn get(&self, m: usize, n: usize, x: &Site, y: &Site) -> T {
        let Some(u) = x.step_to(y) else { return T::zero() };
        self.coeffs.get(&(m, n)).and_then(|t| t.get(&(*x, u))).map_or(T::zero(), |c| c.pi.clone())
    }

    pub fn get_phi(&self, m: usize, n: usize, x: &Site, y: &Site) -> [T; 3] {
        let z = [T::zero(), T::zero(), T::zero()];
        let Some(u) = x.step_to(y) else { return z };
        self.coeffs.get(&(m, n)).and_then(|t| t.get(&(*x, u))).map_or(z, |c| c.phi.clone())
    }

    /// Σ_{x,y} (y−x) π_m^{(N)}(x,y) as a d-vector.
    pub fn drift_sum(&self, m: usize, n: usize) -> Vec<T> {
        self.weighted_sum(m, n, |c| c.pi.clone())
    }

    /// Σ_{x,y} (y−x) φ_m^{(N)}(x,y) as a d-vector.
    pub fn phi_drift_sum(&self, m: usize, n: usize) -> Vec<T> {
        self.weighted_sum(m, n, |c| c.phi_total())
    }

    /// Σ_{x,y} (y−x) of one product-rule part of φ.
    pub fn phi_part_drift_sum(&self, m: usize, n: usize, part: usize) -> Vec<T> {
        self.weighted_sum(m, n, |c| c.phi[part].clone())
    }

    fn weighted_sum(&self, m: usize, n: usize, f: impl Fn(&Coef<T>) -> T) -> Vec<T> {
        let mut out = vec![T::zero(); self.d];
        if let Some(t) = self.coeffs.get(&(m, n)) {
            for ((_, u), c) in t {
                let v = f(c);
                out[u.axis()] = out[u.axis()].clone() + if u.sign() > 0 { v } else { -v };
            }
        }
        out
    }

    /// Σ_{x,y} |π_m^{(N)}(x,y)|.
    pub fn abs_sum(&self, m: usize, n: usize) -> T {
        self.coeffs
            .get(&(m, n))
            .map(|t| t.values().fold(T::zero(), |a, c| a + c.pi.abs()))
            .unwrap_or_else(T::zero)
    }

    /// Σ_{m ≤ m_max} Σ_{x,y} |π_m^{(N)}(x,y)|.
    pub fn abs_sum_n(&self, n: usize) -> T {
        (2..=self.m_max).fold(T::zero(), |a, m| a + self.abs_sum(m, n))
    }

    /// Row sums Σ_y π_m^{(N)}(x,y), one per (m, N, x).
    pub fn row_sums(&self) -> Vec<((usize, usize, Site), T)> {
        let mut out: BTreeMap<(usize, usize, Site), T> = BTreeMap::new();
        for (&(m, n), t) in &self.coeffs {
            for ((x, _), c) in t {
                let e = out.entry((m, n, *x)).or_insert_with(T::zero);
                *e = e.clone() + c.pi.clone();
            }
        }
        out.into_iter().collect()
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.row_sums().iter().map(|(_, v)| v.to_f64().abs()).fold(0.0, f64::max)
    }

    /// True when every stored entry has N < m (nearest-neighbour support is
    /// built into the key type).
    pub fn support_ok(&self) -> bool {
        self.coeffs.keys().all(|&(m, n)| n >= 1 && n < m)
    }

    /// Total Σ_N Σ_{x,y}(y−x)π_m^{(N)} for each m in 2..=m_max.
    pub fn drift_by_m(&self) -> Vec<Vec<T>> {
        (2..=self.m_max)
            .map(|m| {
                (1..m.min(self.n_max + 1)).fold(vec![T::zero(); self.d], |acc, n| add_vec(&acc, &self.drift_sum(m, n)))
            })
            .collect()
    }

    pub fn phi_drift_by_m(&self) -> Vec<Vec<T>> {
        (2..=self.m_max)
            .map(|m| {
                (1..m.min(self.n_max + 1))
                    .fold(vec![T::zero(); self.d], |acc, n| add_vec(&acc, &self.phi_drift_sum(m, n)))
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for m in 2..=self.m_max {
            for n in 1..m.min(self.n_max + 1) {
                let entries = self.coeffs.get(&(m, n)).map_or(0, |t| t.len());
                let max_row = self
                    .row_sums()
                    .into_iter()
                    .filter(|((mm, nn, _), _)| *mm == m && *nn == n)
                    .map(|(_, v)| v.to_f64().abs())
                    .fold(0.0, f64::max);
                rows.push(SummaryRow {
                    m,
                    n,
                    drift_sum: self.drift_sum(m, n)[0].to_f64(),
                    abs_sum: self.abs_sum(m, n).to_f64(),
                    phi_drift_sum: self.phi_drift_sum(m, n)[0].to_f64(),
                    max_row_sum: max_row,
                    entries,
                });
            }
        }
        rows
    }

    pub fn to_f64(&self) -> LaceTable<f64> {
        LaceTable {
            d: self.d,
            m_max: self.m_max,
            n_max: self.n_max,
            beta: self.beta,
            mean_step: self.mean_step.iter().map(|x| x.to_f64()).collect(),
            mean_step_dbeta: self.mean_step_dbeta.iter().map(|x| x.to_f64()).collect(),
            coeffs: self
                .coeffs
                .iter()
                .map(|(k, t)| {
                    let t = t
                        .iter()
                        .map(|(key, c)| {
                            let phi = [c.phi[0].to_f64(), c.phi[1].to_f64(), c.phi[2].to_f64()];
                            (*key, Coef { pi: c.pi.to_f64(), phi })
                        })
                        .collect();
                    (*k, t)
                })
                .collect(),
        }
    }
}

fn add_vec<T: Weight>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

/// Enumerates π and φ for the model's β.
pub fn pi_table_model<T: Weight>(model: &AnnealedModel<T>, opts: LaceOptions, beta: f64) -> Result<LaceTable<T>> {
    let raw = traverse(model, opts, &PiVisitor)?;
    let fresh = model.kernel_ext(&StepCounts::default()).expect("fresh site is feasible");
    let d = model.d();
    let mean_step = (0..d).map(|a| fresh.p[2 * a].clone() - fresh.p[2 * a + 1].clone()).collect();
    let mean_step_dbeta = (0..d).map(|a| fresh.dp[2 * a].clone() - fresh.dp[2 * a + 1].clone()).collect();
    let coeffs = raw
        .into_iter()
        .map(|(k, t)| {
            let t: BTreeMap<_, _> = t.into_iter().filter(|(_, c)| !(c.pi.is_zero() && c.phi.iter().all(|x| x.is_zero()))).collect();
            (k, t)
        })
        .filter(|(_, t)| !t.is_empty())
        .collect();
    Ok(LaceTable { d, m_max: opts.m_max, n_max: opts.n_max, beta, mean_step, mean_step_dbeta, coeffs })
}

pub fn pi_table(spec: &EnvironmentSpec, m_max: usize, n_max: usize) -> Result<LaceTable<f64>> {
    pi_table_model(&AnnealedModel::<f64>::new(spec), LaceOptions::new(m_max, n_max), spec.beta)
}

/// φ by central differences of π in β (testing aid).
pub fn phi_finite_difference(spec: &EnvironmentSpec, m_max: usize, n_max: usize, h: f64) -> Result<LaceTable<f64>> {
    let up = pi_table(&spec.with_beta(spec.beta + h), m_max, n_max)?;
    let dn = pi_table(&spec.with_beta(spec.beta - h), m_max, n_max)?;
    let mut coeffs: BTreeMap<(usize, usize), BTreeMap<(Site, Step), Coef<f64>>> = BTreeMap::new();
    for (sign, t) in [(1.0, &up), (-1.0, &dn)] {
        for (k, inner) in &t.coeffs {
            let dst = coeffs.entry(*k).or_default();
            for (key, c) in inner {
                let e = dst.entry(*key).or_insert_with(Coef::zero);
                // the difference quotient goes in the first part slot
                e.phi[0] += sign * c.pi / (2.0 * h);
            }
        }
    }
    let d = spec.d();
    let mean = (0..d).map(|a| (up.mean_step[a] - dn.mean_step[a]) / (2.0 * h)).collect();
    Ok(LaceTable { d, m_max, n_max, beta: spec.beta, mean_step: vec![0.0; d], mean_step_dbeta: mean, coeffs })
}

/// Partial sums of the truncated speed series.
#[derive(Clone, Debug, Serialize)]
pub struct SpeedSeries {
    pub beta: f64,
    pub mean_step: Vec<f64>,
    /// Per m = 2..m_max: Σ_N Σ_{x,y}(y−x)π_m^{(N)}.
    pub increments: Vec<Vec<f64>>,
    /// E_o[X₁] plus increments up to m.
    pub partial: Vec<Vec<f64>>,
    /// Same for ∂/∂β of the first coordinate.
    pub dbeta_increments: Vec<f64>,
    pub dbeta_partial: Vec<f64>,
}

impl SpeedSeries {
    pub fn v(&self) -> &[f64] {
        self.partial.last().map(|v| v.as_slice()).unwrap_or(&self.mean_step)
    }

    pub fn v1(&self) -> f64 {
        self.v()[0]
    }
}

pub fn speed_series<T: Weight>(table: &LaceTable<T>) -> SpeedSeries {
    let mean: Vec<f64> = table.mean_step.iter().map(|x| x.to_f64()).collect();
    let incs: Vec<Vec<f64>> = table.drift_by_m().iter().map(|v| v.iter().map(|x| x.to_f64()).collect()).collect();
    let mut partial = Vec::new();
    let mut acc = mean.clone();
    for inc in &incs {
        acc = acc.iter().zip(inc).map(|(a, b)| a + b).collect();
        partial.push(acc.clone());
    }
    let dincs: Vec<f64> = table.phi_drift_by_m().iter().map(|v| v[0].to_f64()).collect();
    let mut dacc = table.mean_step_dbeta[0].to_f64();
    let mut dpartial = Vec::new();
    for x in &dincs {
        dacc += x;
        dpartial.push(dacc);
    }
    SpeedSeries { beta: table.beta, mean_step: mean, increments: incs, partial, dbeta_increments: dincs, dbeta_partial: dpartial }
}

#[derive(Clone, Debug, Default)]
struct BoundAcc {
    f: [f64; MAX_N + 1],
    h: [[f64; MAX_N + 1]; MAX_N + 1],
    j: [[f64; MAX_N + 1]; MAX_N + 1],
    max_abs_delta: f64,
    max_drift: f64,
    max_ddrift: f64,
    delta_evaluations: u64,
}

#[derive(Clone)]
struct BoundState {
    a: f64,
    f: f64,
    h: [f64; MAX_N + 1],
    j: [f64; MAX_N + 1],
}

struct BoundsVisitor;

impl Visitor<f64> for BoundsVisitor {
    type State = BoundState;
    type Acc = BoundAcc;

    fn empty(&self) -> BoundAcc {
        BoundAcc::default()
    }

    fn root(&self, p: &f64, dp: &f64) -> Option<BoundState> {
        Some(BoundState { a: *p, f: dp.abs(), h: [0.0; MAX_N + 1], j: [0.0; MAX_N + 1] })
    }

    fn normal(&self, st: &BoundState, piece: usize, p: &f64, dp: &f64) -> Option<BoundState> {
        let mut out = st.clone();
        out.a *= p;
        out.f *= p;
        for k in 1..=MAX_N {
            out.h[k] *= p;
            out.j[k] *= p;
        }
        out.h[piece] += st.a * dp.abs();
        Some(out)
    }

    fn close(&self, st: &BoundState, piece: usize, delta: &f64, ddelta: &f64) -> Option<BoundState> {
        let ad = delta.abs();
        let mut out = st.clone();
        out.a *= ad;
        out.f *= ad;
        for k in 1..=MAX_N {
            out.h[k] *= ad;
            out.j[k] *= ad;
        }
        out.j[piece] = st.a * ddelta.abs();
        Some(out)
    }

    fn terminal(&self, acc: &mut BoundAcc, st: &BoundState, t: &Terminal<'_, f64>) {
        let e1 = Step::plus(0).index();
        let m1 = Step::minus(0).index();
        let d1 = t.delta[e1] - t.delta[m1];
        let dd1 = t.ddelta[e1] - t.ddelta[m1];
        let abs_delta: f64 = t.delta.iter().map(|x| x.abs()).sum();
        acc.delta_evaluations += 1;
        acc.max_abs_delta = acc.max_abs_delta.max(abs_delta);
        acc.max_drift = acc.max_drift.max(d1.abs());
        acc.max_ddrift = acc.max_ddrift.max(dd1.abs());
        let n = t.n;
        acc.f[n] += st.f * d1.abs();
        for k in 1..=n {
            acc.h[n][k] += st.h[k] * d1.abs();
        }
        for k in 1..n {
            acc.j[n][k] += st.j[k] * d1.abs();
        }
        acc.j[n][n] += st.a * dd1.abs();
    }

    fn merge(&self, into: &mut BoundAcc, from: BoundAcc) {
        for n in 0..=MAX_N {
            into.f[n] += from.f[n];
            for k in 0..=MAX_N {
                into.h[n][k] += from.h[n][k];
                into.j[n][k] += from.j[n][k];
            }
        }
        into.max_abs_delta = into.max_abs_delta.max(from.max_abs_delta);
        into.max_drift = into.max_drift.max(from.max_drift);
        into.max_ddrift = into.max_ddrift.max(from.max_ddrift);
        into.delta_evaluations += from.delta_evaluations;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub m_max: usize,
    pub n_max: usize,
    pub alpha: f64,
    pub kappa_rho: f64,
    pub checks: Vec<BoundCheck>,
    /// Σ_{m ≥ m0} Σ_N |Σ(y−x)^{[1]}φ_m^{(N)}| for m0 = 2..=m_max.
    pub phi_tail: Vec<(usize, f64)>,
    /// Σ_N (F + J + H) over the truncation, compared with κρ for information.
    pub fjh_total: f64,
    pub delta_evaluations: u64,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str, n: usize, k: usize) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name && c.n == n && c.k == k)
    }
}

fn bound(name: &str, n: usize, k: usize, lhs: f64, rhs: f64) -> BoundCheck {
    let pass = lhs <= rhs * (1.0 + 1e-12) + 1e-15;
    BoundCheck { name: name.to_string(), n, k, lhs, rhs, slack: rhs - lhs, pass }
}

/// Compares every truncated series quantity with the right-hand side of its
/// bound. `table` must hold φ for the same spec and truncation.
pub fn verify_bounds(spec: &EnvironmentSpec, table: &LaceTable<f64>, g: &GreenConstants) -> Result<BoundReport> {
    let model = AnnealedModel::<f64>::new(spec);
    let opts = LaceOptions::new(table.m_max, table.n_max);
    let delta = spec.delta;
    let eps = spec.eps_delta();
    let rho = spec.rho();
    let kr = spec.kappa * rho;
    let visitor = BoundsVisitor;
    let acc = traverse(&model, opts, &visitor)?;
    let alpha = eps * g.g2 / (delta * delta);
    let mut checks = Vec::new();

    let tol = 1e-12;
    checks.push(bound("delta_abs_sum", 0, 0, acc.max_abs_delta, eps + tol));
    checks.push(bound("drift_difference", 0, 0, acc.max_drift, rho + tol));
    checks.push(bound("drift_difference_dbeta", 0, 0, acc.max_ddrift, kr + tol));

    let pw = |n: i32| if n <= 0 { 1.0 } else { alpha.powi(n) };
    let mut fjh = 0.0;
    for n in 1..=table.n_max.min(table.m_max - 1) {
        let ni = n as i32;
        checks.push(bound("pi_abs", n, 0, table.abs_sum_n(n), eps / delta * g.g1 * pw(ni - 1)));
        let f_rhs = if n == 1 { kr * eps / delta * g.g1 } else { kr / delta * g.g1 * pw(ni - 1) };
        checks.push(bound("F", n, 0, acc.f[n], f_rhs));
        fjh += acc.f[n];
        for k in 1..=n {
            let j_rhs = if n == 1 { kr / (delta * delta) * (g.g_origin - delta) } else { kr / delta * g.g1 * pw(ni - 1) };
            checks.push(bound("J", n, k, acc.j[n][k], j_rhs));
            let h_rhs = if n == k {
                kr * pw(ni)
            } else {
                2.0 * kr * eps * eps / delta.powi(4) * g.g1 * g.g3 * pw(ni - 2)
            };
            checks.push(bound("H", n, k, acc.h[n][k], h_rhs));
            fjh += acc.j[n][k] + acc.h[n][k];
        }
    }

    let per_m: Vec<f64> = (2..=table.m_max)
        .map(|m| (1..m.min(table.n_max + 1)).map(|n| table.phi_drift_sum(m, n)[0].abs()).sum())
        .collect();
    let total: f64 = per_m.iter().sum();
    checks.push(bound("phi_sufficiency", 0, 0, total, kr));
    let mut tail = Vec::new();
    for m0 in 2..=table.m_max {
        tail.push((m0, per_m[m0 - 2..].iter().sum()));
    }

    Ok(BoundReport {
        m_max: table.m_max,
        n_max: table.n_max,
        alpha,
        kappa_rho: kr,
        checks,
        phi_tail: tail,
        fjh_total: fjh,
        delta_evaluations: acc.delta_evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Atom, Kernel};
    use crate::lattice::Dimensions;
    use num_rational::BigRational;

    fn two_valued(beta: f64) -> EnvironmentSpec {
        let nu1 = Kernel::from_pairs(1, &[(Step::minus(0), 0.2)]);
        let nu2 = Kernel::from_pairs(1, &[(Step::plus(0), 0.2)]);
        EnvironmentSpec::two_valued(1, Kernel::uniform(2), nu1, nu2, beta).unwrap()
    }

    #[test]
    fn row_sums_vanish() {
        let t = pi_table(&two_valued(0.4), 6, 5).unwrap();
        assert!(!t.coeffs.is_empty());
        assert!(t.max_abs_row_sum() < 1e-13, "{}", t.max_abs_row_sum());
        assert!(t.support_ok());
    }

    #[test]
    fn no_second_order_terms() {
        let t = pi_table(&two_valued(0.4), 5, 4).unwrap();
        assert!(t.coeffs.keys().all(|&(m, _)| m >= 3));
        assert!(t.coeffs.contains_key(&(3, 1)));
    }

    #[test]
    fn single_atom_has_no_coefficients() {
        let spec = two_valued(1.0);
        let t = pi_table(&spec, 6, 5).unwrap();
        assert!(t.coeffs.values().all(|m| m.values().all(|c| c.pi == 0.0)));
        let s = speed_series(&t);
        assert!((s.v1() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rational_row_sums_are_exact() {
        let spec = two_valued(0.4);
        let model = AnnealedModel::<BigRational>::new(&spec);
        let t = pi_table_model(&model, LaceOptions::new(5, 4), spec.beta).unwrap();
        for (_, v) in t.row_sums() {
            assert!(Weight::is_zero(&v));
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(pi_table(&two_valued(0.4), 9, 3), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn mirror_spec_has_no_first_drift() {
        let mut spec = two_valued(0.5);
        let d = 3;
        spec.nu1 = Kernel::from_pairs(d, &[(Step::minus(0), 0.2)]);
        spec.nu2 = Kernel::from_pairs(d, &[(Step::plus(0), 0.2)]);
        let s = speed_series(&pi_table(&spec, 6, 5).unwrap());
        for p in &s.partial {
            assert!(p[0].abs() < 1e-15);
        }
    }

    #[test]
    fn phi_matches_finite_difference() {
        let q = Kernel::from_pairs(1, &[(Step::plus(0), 0.6), (Step::minus(0), 0.4)]);
        let d = 3;
        let spec = EnvironmentSpec {
            dims: Dimensions::new(2, 1, 2).unwrap(),
            gamma: 0.2,
            kappa: 0.7,
            delta: 0.8,
            beta: 0.35,
            nu1: Kernel::from_pairs(d, &[(Step::minus(0), 0.2)]),
            nu2: Kernel::from_pairs(d, &[(Step::plus(0), 0.15), (Step::plus(1), 0.05)]),
            residual: vec![Atom { prob: 0.3, kernel: Kernel::from_pairs(d, &[(Step::minus(1), 0.2)]) }],
            tilde: vec![Atom { prob: 1.0, kernel: q.embed(d, 2).scaled(0.8) }],
            q,
        };
        let t = pi_table(&spec, 5, 4).unwrap();
        let fd = phi_finite_difference(&spec, 5, 4, 1e-5).unwrap();
        let mut checked = 0;
        for (k, inner) in &fd.coeffs {
            for (key, c) in inner {
                let exact = t.coeffs.get(k).and_then(|m| m.get(key)).map_or(0.0, |c| c.phi_total());
                assert!((exact - c.phi[0]).abs() < 1e-8, "{k:?} {key:?}: {exact} vs {}", c.phi[0]);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let spec = two_valued(0.4);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| pi_table(&spec, 6, 5).unwrap());
        let b = four.install(|| pi_table(&spec, 6, 5).unwrap());
        assert_eq!(a.coeffs, b.coeffs);
    }
}
