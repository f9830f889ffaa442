//! Green functions of the q-walk: G_q^{*i}(x) = Σ_l C(l+i−1, i−1) q^{*l}(x),
//! the (A3) diagnostics, and the contraction constant α.
//!
//! Two routes. Small d1 convolves q over a dense box and sees every point.
//! Otherwise q^{*l}(x) is evaluated exactly at candidate points (a small ball
//! around the origin and the drift ray) by splitting the l steps between axes.

use serde::Serialize;

use crate::environment::Kernel;
use crate::error::{Error, Result};
use crate::lattice::{Site, Step};

pub const DEFAULT_K: usize = 300;
/// Terms per block in the tail diagnostic.
pub const TAIL_WINDOW: usize = 50;
/// Largest dense box (in cells) before switching to the pointwise route.
pub const MAX_BOX_CELLS: usize = 400_000;
const DEFICIT_TOL: f64 = 1e-12;
/// Fitted power-law decay exponent needed to call a tail summable.
const MIN_EXPONENT: f64 = 1.1;

/// Distribution of Y_k restricted to a box.
#[derive(Clone, Debug)]
pub struct BoxDist {
    pub dim: usize,
    pub radius: usize,
    pub mass: Vec<f64>,
    pub deficit: f64,
}

impl BoxDist {
    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    fn index(&self, x: &Site) -> Option<usize> {
        let r = self.radius as i64;
        let mut idx = 0usize;
        for a in 0..self.dim {
            let c = x.coord(a) as i64;
            if c.abs() > r {
                return None;
            }
            idx = idx * self.side() + (c + r) as usize;
        }
        Some(idx)
    }

    fn site(&self, mut idx: usize) -> Site {
        let side = self.side();
        let mut c = vec![0i32; self.dim];
        for a in (0..self.dim).rev() {
            c[a] = (idx % side) as i32 - self.radius as i32;
            idx /= side;
        }
        Site::from_coords(&c)
    }

    pub fn get(&self, x: &Site) -> f64 {
        self.index(x).map_or(0.0, |i| self.mass[i])
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

fn box_cells(dim: usize, radius: usize) -> Option<usize> {
    (2 * radius + 1).checked_pow(dim as u32)
}

fn point_mass(dim: usize, radius: usize) -> Result<BoxDist> {
    let cells = box_cells(dim, radius).filter(|&c| c <= MAX_BOX_CELLS * 4);
    let Some(cells) = cells else { return Err(Error::BoxTooLarge { radius, dim }) };
    let mut b = BoxDist { dim, radius, mass: vec![0.0; cells], deficit: 0.0 };
    let o = b.index(&Site::origin()).unwrap();
    b.mass[o] = 1.0;
    Ok(b)
}

/// One convolution with q; mass pushed outside the box goes to the deficit.
fn convolve_once(q: &Kernel, from: &BoxDist) -> BoxDist {
    let mut out = BoxDist { mass: vec![0.0; from.mass.len()], ..from.clone() };
    let steps: Vec<(Step, f64)> = Step::all(q.dim()).map(|s| (s, q.get(s))).filter(|(_, w)| *w > 0.0).collect();
    for (i, &m) in from.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let x = from.site(i);
        for &(s, w) in &steps {
            match out.index(&x.shifted(s)) {
                Some(j) => out.mass[j] += m * w,
                None => out.deficit += m * w,
            }
        }
    }
    out
}

/// The distribution of Y_k on the box of half-width `box_radius`. With
/// `strict`, a mass deficit above 1e−12 is an error.
pub fn convolve_power(q: &Kernel, k: usize, box_radius: usize, strict: bool) -> Result<BoxDist> {
    let mut b = point_mass(q.dim(), box_radius)?;
    for _ in 0..k {
        b = convolve_once(q, &b);
    }
    if strict && b.deficit > DEFICIT_TOL {
        return Err(Error::BoxTooSmall { radius: box_radius, k, deficit: b.deficit });
    }
    Ok(b)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn binom_pmf(lf: &[f64], n: usize, a: usize, r: f64) -> f64 {
    if r <= 0.0 {
        return (a == 0) as u8 as f64;
    }
    if r >= 1.0 {
        return (a == n) as u8 as f64;
    }
    (lf[n] - lf[a] - lf[n - a] + a as f64 * r.ln() + (n - a) as f64 * (1.0 - r).ln()).exp()
}

/// Exact q^{*l}(x) for l = 0..=k_max at individual points.
struct Pointwise {
    dim: usize,
    k_max: usize,
    lf: Vec<f64>,
    /// Per axis: P(axis-j walk of a steps ends at c) parameters.
    up: Vec<f64>,
    /// Per axis: share of the remaining axes' weight.
    split: Vec<f64>,
}

impl Pointwise {
    fn new(q: &Kernel, k_max: usize) -> Self {
        let dim = q.dim();
        let w: Vec<f64> = (0..dim).map(|a| q.get(Step::plus(a)) + q.get(Step::minus(a))).collect();
        let up = (0..dim).map(|a| if w[a] > 0.0 { q.get(Step::plus(a)) / w[a] } else { 0.5 }).collect();
        let split = (0..dim)
            .map(|a| {
                let rest: f64 = w[a..].iter().sum();
                if rest > 0.0 {
                    (w[a] / rest).min(1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Pointwise { dim, k_max, lf: ln_factorials(k_max), up, split }
    }

    fn axis(&self, a: usize, n: usize, c: i64) -> f64 {
        let n_i = n as i64;
        if c.abs() > n_i || (n_i + c) % 2 != 0 {
            return 0.0;
        }
        binom_pmf(&self.lf, n, ((n_i + c) / 2) as usize, self.up[a])
    }

    fn probabilities(&self, x: &Site) -> Vec<f64> {
        let k = self.k_max;
        let last = self.dim - 1;
        let mut f: Vec<f64> = (0..=k).map(|n| self.axis(last, n, x.coord(last) as i64)).collect();
        for a in (0..last).rev() {
            let c = x.coord(a) as i64;
            let pa: Vec<f64> = (0..=k).map(|n| self.axis(a, n, c)).collect();
            let mut g = vec![0.0; k + 1];
            for (n, gn) in g.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..=n {
                    if pa[j] == 0.0 || f[n - j] == 0.0 {
                        continue;
                    }
                    s += binom_pmf(&self.lf, n, j, self.split[a]) * pa[j] * f[n - j];
                }
                *gn = s;
            }
            f = g;
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Box,
    Pointwise,
}

/// Summary of one G^{*i}.
#[derive(Clone, Debug, Serialize)]
pub struct GreenStat {
    pub i: usize,
    /// max over evaluated points of the truncated sum.
    pub sup_truncated: f64,
    /// sup_truncated plus a power-law tail extrapolation at the argmax.
    pub sup_estimate: f64,
    pub argmax: Vec<i32>,
    /// Last block of terms over the one before it, at the argmax.
    pub tail_ratio: f64,
    /// Fitted power-law decay exponent of the terms at the argmax.
    pub exponent: f64,
    pub converged: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenTable {
    pub q: Kernel,
    pub k_max: usize,
    pub box_radius: usize,
    pub route: Route,
    pub mass_deficit: f64,
    #[serde(skip)]
    pub points: Vec<Site>,
    #[serde(skip)]
    /// partial[i-1][p] = Σ_{l≤K} C(l+i−1,i−1) q^{*l}(points[p]).
    pub partial: Vec<Vec<f64>>,
    pub stats: Vec<GreenStat>,
}

/// Running sums at one point with snapshots for the tail diagnostic.
#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    at_first: f64,
    at_second: f64,
}

fn weight(l: usize, i: usize) -> f64 {
    // C(l+i−1, i−1) for i ≤ 4
    let l = l as f64;
    match i {
        1 => 1.0,
        2 => l + 1.0,
        3 => (l + 1.0) * (l + 2.0) / 2.0,
        _ => (l + 1.0) * (l + 2.0) * (l + 3.0) / 6.0,
    }
}

impl GreenTable {
    pub fn compute(q: &Kernel, k_max: usize, box_radius: usize) -> Result<GreenTable> {
        if q.dim() == 0 {
            return Err(Error::Dimensions("q needs at least one axis".into()));
        }
        if k_max < 2 * TAIL_WINDOW + 1 {
            return Err(Error::Config(format!("K must be at least {}", 2 * TAIL_WINDOW + 1)));
        }
        let w = TAIL_WINDOW;
        let first = k_max - 2 * w;
        let second = k_max - w;
        let use_box = box_cells(q.dim(), box_radius).is_some_and(|c| c <= MAX_BOX_CELLS);
        let (route, points, accs, deficit) = if use_box {
            let mut b = point_mass(q.dim(), box_radius)?;
            let cells = b.mass.len();
            let mut accs = vec![[Acc::default(); 4]; cells];
            for l in 0..=k_max {
                if l > 0 {
                    b = convolve_once(q, &b);
                }
                for (c, &m) in b.mass.iter().enumerate() {
                    for i in 1..=4 {
                        record(&mut accs[c][i - 1], l, first, second, weight(l, i) * m);
                    }
                }
            }
            let points = (0..cells).map(|c| b.site(c)).collect();
            (Route::Box, points, accs, b.deficit)
        } else {
            let pw = Pointwise::new(q, k_max);
            let points = candidate_points(q, k_max);
            let accs = points
                .iter()
                .map(|x| {
                    let probs = pw.probabilities(x);
                    let mut a = [Acc::default(); 4];
                    for (l, &m) in probs.iter().enumerate() {
                        for i in 1..=4 {
                            record(&mut a[i - 1], l, first, second, weight(l, i) * m);
                        }
                    }
                    a
                })
                .collect();
            (Route::Pointwise, points, accs, 0.0)
        };
        let partial: Vec<Vec<f64>> = (0..4).map(|i| accs.iter().map(|a| a[i].sum).collect()).collect();
        let reach = match route {
            Route::Box => box_radius as f64,
            Route::Pointwise => k_max as f64 * drift_norm(q),
        };
        let stats = (1..=4)
            .map(|i| {
                let mut best = 0;
                for p in 1..points.len() {
                    if accs[p][i - 1].sum > accs[best][i - 1].sum * (1.0 + 1e-12) {
                        best = p;
                    }
                }
                // the tail test runs on the running supremum, so a maximum that
                // keeps moving outward is caught even when each point converges
                let sup_of = |f: fn(&Acc) -> f64| accs.iter().map(|a| f(&a[i - 1])).fold(f64::NEG_INFINITY, f64::max);
                let sups = Acc { sum: accs[best][i - 1].sum, at_first: sup_of(|a| a.at_first), at_second: sup_of(|a| a.at_second) };
                stat(i, &points[best], &sups, k_max, reach, q.dim())
            })
            .collect();
        Ok(GreenTable { q: q.clone(), k_max, box_radius, route, mass_deficit: deficit, points, partial, stats })
    }

    pub fn stat(&self, i: usize) -> &GreenStat {
        &self.stats[i - 1]
    }

    /// Truncated G^{*i}(x), if x was evaluated.
    pub fn value(&self, i: usize, x: &Site) -> Option<f64> {
        self.points.iter().position(|p| p == x).map(|p| self.partial[i - 1][p])
    }

    pub fn g_origin(&self) -> f64 {
        self.value(1, &Site::origin()).expect("origin is always evaluated")
    }

    /// sup_x G^{*i}_q(x), or NotConverging.
    pub fn sup(&self, i: usize) -> Result<f64> {
        let s = self.stat(i);
        if s.converged {
            Ok(s.sup_estimate)
        } else {
            Err(Error::NotConverging { i, tail_ratio: s.tail_ratio })
        }
    }

    /// Green constants with ∞ for any sup that did not converge.
    pub fn constants(&self) -> GreenConstants {
        let s = |i| self.sup(i).unwrap_or(f64::INFINITY);
        GreenConstants { g_origin: self.g_origin(), g1: s(1), g2: s(2), g3: s(3) }
    }
}

fn record(acc: &mut Acc, l: usize, first: usize, second: usize, term: f64) {
    acc.sum += term;
    if l == first {
        acc.at_first = acc.sum;
    }
    if l == second {
        acc.at_second = acc.sum;
    }
}

fn drift_norm(q: &Kernel) -> f64 {
    q.drift().iter().map(|x| x.abs()).sum()
}

fn candidate_points(q: &Kernel, k_max: usize) -> Vec<Site> {
    let dim = q.dim();
    let mut pts = vec![Site::origin()];
    for s in Step::all(dim) {
        pts.push(Site::origin().shifted(s));
    }
    for s in Step::all(dim) {
        for t in Step::all(dim) {
            let y = Site::origin().shifted(s).shifted(t);
            if y.l1_norm() == 2 {
                pts.push(y);
            }
        }
    }
    let mu = q.drift();
    if drift_norm(q) > 1e-12 {
        for t in 1..=k_max {
            let c: Vec<i32> = mu.iter().map(|m| (m * t as f64).round() as i32).collect();
            pts.push(Site::from_coords(&c));
        }
    }
    pts.sort();
    pts.dedup();
    pts
}

fn stat(i: usize, x: &Site, acc: &Acc, k_max: usize, reach: f64, dim: usize) -> GreenStat {
    let w = TAIL_WINDOW as f64;
    let b1 = acc.at_second - acc.at_first;
    let b2 = acc.sum - acc.at_second;
    let (ratio, exponent) = if b1 <= 0.0 && b2 <= 0.0 {
        (0.0, f64::INFINITY)
    } else if b1 <= 0.0 {
        (f64::INFINITY, f64::NEG_INFINITY)
    } else {
        let r = b2 / b1;
        let c1 = k_max as f64 - 1.5 * w;
        let c2 = k_max as f64 - 0.5 * w;
        (r, -r.ln() / (c2 / c1).ln())
    };
    let at_edge = reach > 0.0 && x.l1_norm() as f64 > 0.75 * reach;
    let mut note = String::new();
    let converged = if ratio >= 1.0 - 1e-6 {
        note.push_str("tail terms not decreasing");
        false
    } else if exponent <= MIN_EXPONENT {
        note.push_str("tail decays no faster than a non-summable power law");
        false
    } else if at_edge {
        note.push_str("maximum sits at the edge of the evaluated region");
        false
    } else {
        true
    };
    let tail = if converged && b2 > 0.0 && exponent.is_finite() {
        // Σ_{l>K} c l^{−a} with c fitted to the last block
        let k = k_max as f64;
        let c = b2 / ((k.powf(1.0 - exponent) - (k - w).powf(1.0 - exponent)) / (1.0 - exponent));
        c * k.powf(1.0 - exponent) / (exponent - 1.0)
    } else {
        0.0
    };
    GreenStat {
        i,
        sup_truncated: acc.sum,
        sup_estimate: acc.sum + tail,
        argmax: x.coords(dim).to_vec(),
        tail_ratio: ratio,
        exponent,
        converged,
        note,
    }
}

/// The constants the series bounds use.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GreenConstants {
    /// G_q(o).
    pub g_origin: f64,
    /// sup_x G_q^{*i}(x) for i = 1, 2, 3 (∞ when not converged).
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

pub fn green(q: &Kernel, i: usize, k_max: usize, box_radius: usize) -> Result<f64> {
    if !(1..=4).contains(&i) {
        return Err(Error::Config("i must be in 1..=4".into()));
    }
    GreenTable::compute(q, k_max, box_radius)?.sup(i)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Alpha {
    pub alpha: f64,
    pub alpha_lt_1: bool,
}

/// α = ε_δ δ⁻² sup G^{*2}.
pub fn alpha(delta: f64, table: &GreenTable) -> Result<Alpha> {
    let eps = 2.0 * (1.0 - delta);
    let a = if eps == 0.0 { 0.0 } else { eps / (delta * delta) * table.sup(2)? };
    Ok(Alpha { alpha: a, alpha_lt_1: a < 1.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct A3Report {
    pub g_origin: f64,
    pub g_origin_lt_2: bool,
    pub sups: Vec<GreenStat>,
    pub all_sups_converged: bool,
    pub pass: bool,
}

pub fn check_a3(q: &Kernel, k_max: usize, box_radius: usize) -> Result<A3Report> {
    Ok(a3_report(&GreenTable::compute(q, k_max, box_radius)?))
}

pub fn a3_report(t: &GreenTable) -> A3Report {
    let g = t.g_origin();
    let all = t.stats.iter().all(|s| s.converged);
    A3Report { g_origin: g, g_origin_lt_2: g < 2.0, sups: t.stats.clone(), all_sups_converged: all, pass: g < 2.0 && all }
}

/// Total of the assembled F, J and H right-hand sides over all N, divided by κρ.
pub fn c2_surrogate(delta: f64, g: &GreenConstants) -> f64 {
    let eps = 2.0 * (1.0 - delta);
    let a = eps / (delta * delta) * g.g2;
    if eps == 0.0 {
        return (g.g_origin - delta).max(0.0) / (delta * delta);
    }
    if !(a < 1.0) {
        return f64::INFINITY;
    }
    let f = eps / delta * g.g1 + g.g1 / delta * a / (1.0 - a);
    let j = (g.g_origin - delta) / (delta * delta) + g.g1 / delta * (1.0 / ((1.0 - a) * (1.0 - a)) - 1.0);
    let h = a / (1.0 - a) + 2.0 * eps * eps / delta.powi(4) * g.g1 * g.g3 / ((1.0 - a) * (1.0 - a));
    f + j + h
}

/// Smallest δ on the grid with α < 1 and the C₂ surrogate below 1.
pub fn delta_q_surrogate(table: &GreenTable, grid: &[f64]) -> Option<f64> {
    let g = table.constants();
    grid.iter().copied().filter(|&d| d > 0.0 && d <= 1.0).find(|&d| {
        let eps = 2.0 * (1.0 - d);
        let a = if eps == 0.0 { 0.0 } else { eps / (d * d) * g.g2 };
        a < 1.0 && c2_surrogate(d, &g) < 1.0
    })
}

/// One CSV row of the `green` output.
#[derive(Clone, Debug, Serialize)]
pub struct GreenRow {
    pub i: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sup_estimate: f64,
    pub tail_ratio: f64,
    pub converged: bool,
    #[serde(rename = "G_at_origin")]
    pub g_at_origin: f64,
    pub alpha: f64,
}

pub fn rows(table: &GreenTable, delta: f64) -> Vec<GreenRow> {
    let a = alpha(delta, table).map(|a| a.alpha).unwrap_or(f64::INFINITY);
    table
        .stats
        .iter()
        .map(|s| GreenRow {
            i: s.i,
            k: table.k_max,
            sup_estimate: s.sup_estimate,
            tail_ratio: s.tail_ratio,
            converged: s.converged,
            g_at_origin: table.g_origin(),
            alpha: a,
        })
        .collect()
}
