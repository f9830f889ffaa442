//! Finite-support environment laws: specification, validation, support
//! enumeration, the named examples, and site sampling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Dimensions, Step, StepCounts};

pub const MASS_TOL: f64 = 1e-12;
pub const DEFAULT_SUPPORT_CAP: usize = 1 << 16;

/// A finite measure on the unit vectors of Z^dim.
#[derive(Clone, PartialEq)]
pub struct Kernel {
    dim: usize,
    mass: Vec<f64>,
}

impl Kernel {
    pub fn zero(dim: usize) -> Kernel {
        Kernel { dim, mass: vec![0.0; 2 * dim] }
    }

    pub fn from_pairs(dim: usize, pairs: &[(Step, f64)]) -> Kernel {
        let mut k = Kernel::zero(dim);
        for &(s, m) in pairs {
            assert!(s.axis() < dim, "step {s} outside Z^{dim}");
            k.mass[s.index()] += m;
        }
        k
    }

    /// Parses `[("+1", 0.5), ...]` style pairs.
    pub fn from_str_pairs(dim: usize, pairs: &[(String, f64)]) -> Result<Kernel> {
        let mut k = Kernel::zero(dim);
        for (dir, m) in pairs {
            let s = Step::parse(dir)?;
            if s.axis() >= dim {
                return Err(Error::Spec(format!("direction {dir} outside Z^{dim}")));
            }
            if !m.is_finite() {
                return Err(Error::Spec(format!("mass {m} at {dir} is not finite")));
            }
            k.mass[s.index()] += m;
        }
        Ok(k)
    }

    /// Symmetric nearest-neighbour kernel on Z^dim with total mass 1.
    pub fn uniform(dim: usize) -> Kernel {
        Kernel { dim, mass: vec![1.0 / (2 * dim) as f64; 2 * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, s: Step) -> f64 {
        if s.axis() < self.dim {
            self.mass[s.index()]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, s: Step, m: f64) {
        self.mass[s.index()] = m;
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn support(&self) -> Vec<Step> {
        Step::all(self.dim).filter(|&s| self.get(s) != 0.0).collect()
    }

    pub fn scaled(&self, c: f64) -> Kernel {
        Kernel { dim: self.dim, mass: self.mass.iter().map(|m| m * c).collect() }
    }

    pub fn plus(&self, other: &Kernel) -> Kernel {
        assert_eq!(self.dim, other.dim);
        Kernel { dim: self.dim, mass: self.mass.iter().zip(&other.mass).map(|(a, b)| a + b).collect() }
    }

    /// Re-indexes a kernel on Z^dim into Z^new_dim, shifting axes by `offset`.
    pub fn embed(&self, new_dim: usize, offset: usize) -> Kernel {
        assert!(self.dim + offset <= new_dim);
        let mut k = Kernel::zero(new_dim);
        for s in Step::all(self.dim) {
            k.set(Step::new(s.axis() + offset, s.sign()), self.get(s));
        }
        k
    }

    /// Mean displacement.
    pub fn drift(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(Step::plus(i)) - self.get(Step::minus(i))).collect()
    }

    pub fn to_pairs(&self) -> Vec<(String, f64)> {
        Step::all(self.dim).filter(|&s| self.get(s) != 0.0).map(|s| (s.to_string(), self.get(s))).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.mass.iter().all(|&m| m >= 0.0)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.to_pairs()).finish()
    }
}

impl Serialize for Kernel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub prob: f64,
    pub kernel: Kernel,
}

/// The law μ of a single-site kernel, in the product form ξ × δ + δ × ξ̃.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec {
    pub dims: Dimensions,
    pub gamma: f64,
    pub kappa: f64,
    pub delta: f64,
    pub beta: f64,
    /// Kernels on Z^d supported on the first d_star axes.
    pub nu1: Kernel,
    pub nu2: Kernel,
    pub residual: Vec<Atom>,
    /// Kernels on Z^d supported on axes d_star+1..d.
    pub tilde: Vec<Atom>,
    /// Kernel on Z^d1.
    pub q: Kernel,
}

#[derive(Deserialize, Serialize)]
struct AtomJson {
    prob: f64,
    kernel: Vec<(String, f64)>,
}

#[derive(Deserialize, Serialize)]
struct SpecJson {
    dims: Dimensions,
    gamma: f64,
    kappa: f64,
    delta: f64,
    beta: f64,
    nu1: Vec<(String, f64)>,
    nu2: Vec<(String, f64)>,
    #[serde(default)]
    residual: Vec<AtomJson>,
    #[serde(default)]
    tilde: Option<Vec<AtomJson>>,
    q: Vec<(String, f64)>,
}

impl EnvironmentSpec {
    /// The simplest admissible family: κ=1, d_star=d0, ξ̃ = (1−γ)q deterministic,
    /// so δ = 1−γ and each site carries one of two kernels.
    pub fn two_valued(d0: usize, q: Kernel, nu1: Kernel, nu2: Kernel, beta: f64) -> Result<Self> {
        let dims = Dimensions::new(d0, q.dim(), d0)?;
        let d = dims.d();
        let gamma = nu1.total();
        let delta = 1.0 - gamma;
        let spec = EnvironmentSpec {
            dims,
            gamma,
            kappa: 1.0,
            delta,
            beta,
            nu1: nu1.embed(d, 0),
            nu2: nu2.embed(d, 0),
            residual: Vec::new(),
            tilde: vec![Atom { prob: 1.0, kernel: q.embed(d, d0).scaled(1.0 - gamma) }],
            q,
        };
        Ok(spec)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: SpecJson = serde_json::from_str(s)?;
        Self::from_raw(raw)
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let raw: SpecJson = serde_json::from_value(v)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: SpecJson) -> Result<Self> {
        raw.dims.check()?;
        let d = raw.dims.d();
        let atoms = |list: Vec<AtomJson>| -> Result<Vec<Atom>> {
            list.into_iter()
                .map(|a| Ok(Atom { prob: a.prob, kernel: Kernel::from_str_pairs(d, &a.kernel)? }))
                .collect()
        };
        let q = Kernel::from_str_pairs(raw.dims.d1, &raw.q)?;
        let tilde = match raw.tilde {
            Some(list) => atoms(list)?,
            None if raw.dims.d_star == raw.dims.d0 => {
                vec![Atom { prob: 1.0, kernel: q.embed(d, raw.dims.d0).scaled(1.0 - raw.gamma) }]
            }
            None => return Err(Error::Spec("tilde law is required when d_star < d0".into())),
        };
        Ok(EnvironmentSpec {
            dims: raw.dims,
            gamma: raw.gamma,
            kappa: raw.kappa,
            delta: raw.delta,
            beta: raw.beta,
            nu1: Kernel::from_str_pairs(d, &raw.nu1)?,
            nu2: Kernel::from_str_pairs(d, &raw.nu2)?,
            residual: atoms(raw.residual)?,
            tilde,
            q,
        })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let atoms = |list: &[Atom]| -> Vec<AtomJson> {
            list.iter().map(|a| AtomJson { prob: a.prob, kernel: a.kernel.to_pairs() }).collect()
        };
        let raw = SpecJson {
            dims: self.dims,
            gamma: self.gamma,
            kappa: self.kappa,
            delta: self.delta,
            beta: self.beta,
            nu1: self.nu1.to_pairs(),
            nu2: self.nu2.to_pairs(),
            residual: atoms(&self.residual),
            tilde: Some(atoms(&self.tilde)),
            q: self.q.to_pairs(),
        };
        serde_json::to_value(raw).expect("spec serializes")
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        EnvironmentSpec { beta, ..self.clone() }
    }

    pub fn d(&self) -> usize {
        self.dims.d()
    }

    /// ρ = (ν₂(e₁)−ν₂(−e₁)) − (ν₁(e₁)−ν₁(−e₁)).
    pub fn rho(&self) -> f64 {
        let e1 = Step::plus(0);
        let m1 = Step::minus(0);
        (self.nu2.get(e1) - self.nu2.get(m1)) - (self.nu1.get(e1) - self.nu1.get(m1))
    }

    /// ε_δ = 2(1−δ).
    pub fn eps_delta(&self) -> f64 {
        2.0 * (1.0 - self.delta)
    }

    pub fn s1(&self) -> Vec<Step> {
        self.nu1.support()
    }

    pub fn s2(&self) -> Vec<Step> {
        self.nu2.support()
    }

    /// E[ω_o(e₁) − ω_o(−e₁)] from the parameters: κβρ + κ(ν₁(e₁)−ν₁(−e₁)).
    pub fn mean_first_drift(&self) -> f64 {
        self.kappa * self.beta * self.rho()
            + self.kappa * (self.nu1.get(Step::plus(0)) - self.nu1.get(Step::minus(0)))
    }

    /// Law of ξ_{d*} as (probability, kernel) atoms, zero-probability atoms dropped.
    pub fn xi_atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        let p1 = self.kappa * (1.0 - self.beta);
        let p2 = self.kappa * self.beta;
        if p1 > 0.0 {
            out.push(Atom { prob: p1, kernel: self.nu1.clone() });
        }
        if p2 > 0.0 {
            out.push(Atom { prob: p2, kernel: self.nu2.clone() });
        }
        out.extend(self.residual.iter().filter(|a| a.prob > 0.0).cloned());
        out
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn enumerate_support(&self, cap: usize) -> Result<SiteLaw> {
        enumerate_support(self, cap)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub rho: f64,
    pub eps_delta: f64,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MASS_TOL
}

fn show_steps(s: &[Step]) -> String {
    s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn validate(spec: &EnvironmentSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| {
        checks.push(Check { name: name.to_string(), pass, detail });
    };
    let dims = spec.dims;
    let d = dims.d();
    push("dimensions", dims.check().is_ok(), format!("d0={} d1={} d_star={}", dims.d0, dims.d1, dims.d_star));

    let in_unit = |x: f64| x > 0.0 && x <= 1.0;
    push("gamma_range", in_unit(spec.gamma), format!("gamma={}", spec.gamma));
    push("kappa_range", in_unit(spec.kappa), format!("kappa={}", spec.kappa));
    push("delta_range", in_unit(spec.delta), format!("delta={}", spec.delta));
    push("beta_range", (0.0..=1.0).contains(&spec.beta), format!("beta={}", spec.beta));
    push(
        "gamma_plus_delta",
        spec.gamma + spec.delta <= 1.0 + MASS_TOL,
        format!("gamma+delta={}", spec.gamma + spec.delta),
    );

    let star_only = |k: &Kernel| k.dim() == d && k.support().iter().all(|&s| dims.is_star_step(s));
    for (name, k) in [("nu1", &spec.nu1), ("nu2", &spec.nu2)] {
        push(
            &format!("{name}_kernel"),
            k.is_nonnegative() && star_only(k) && close(k.total(), spec.gamma),
            format!("{name} mass={} support={}", k.total(), show_steps(&k.support())),
        );
    }
    let s1 = spec.s1();
    let s2 = spec.s2();
    let overlap: Vec<Step> = s1.iter().filter(|s| s2.contains(s)).copied().collect();
    push("disjoint_supports", overlap.is_empty(), format!("overlap=[{}]", show_steps(&overlap)));
    let rho = spec.rho();
    push("rho_positive", rho > 0.0, format!("rho={rho}"));

    let res_total: f64 = spec.residual.iter().map(|a| a.prob).sum();
    push(
        "residual_probability",
        close(res_total, 1.0 - spec.kappa) && spec.residual.iter().all(|a| a.prob >= 0.0),
        format!("sum={} expected={}", res_total + 0.0, 1.0 - spec.kappa),
    );
    let forbidden: Vec<Step> = s1.iter().chain(&s2).copied().chain([Step::plus(0), Step::minus(0)]).collect();
    let mut residual_ok = true;
    let mut residual_detail = String::from("ok");
    for (i, a) in spec.residual.iter().enumerate() {
        let k = &a.kernel;
        let hits: Vec<Step> = k.support().into_iter().filter(|s| forbidden.contains(s)).collect();
        let ok = k.is_nonnegative() && star_only(k) && close(k.total(), spec.gamma) && hits.is_empty();
        if !ok {
            residual_ok = false;
            residual_detail = format!("atom {i}: mass={} forbidden steps={hits:?}", k.total());
        }
    }
    push("residual_support", residual_ok, residual_detail);

    let q = &spec.q;
    push(
        "q_kernel",
        q.dim() == dims.d1 && q.is_nonnegative() && close(q.total(), 1.0),
        format!("q mass={}", q.total()),
    );

    let tilde_total: f64 = spec.tilde.iter().map(|a| a.prob).sum();
    push(
        "tilde_probability",
        close(tilde_total, 1.0) && spec.tilde.iter().all(|a| a.prob >= 0.0),
        format!("sum={tilde_total}"),
    );
    let mut tilde_ok = true;
    let mut tilde_detail = String::from("ok");
    let mut alpha_min = f64::INFINITY;
    for (i, a) in spec.tilde.iter().enumerate() {
        let k = &a.kernel;
        let on_rest = k.dim() == d && k.support().iter().all(|&s| !dims.is_star_step(s));
        if !(k.is_nonnegative() && on_rest && close(k.total(), 1.0 - spec.gamma)) {
            tilde_ok = false;
            tilde_detail = format!("atom {i}: mass={} support={}", k.total(), show_steps(&k.support()));
            continue;
        }
        let alpha: f64 = Step::all(d).filter(|&s| dims.is_q_step(s)).map(|s| k.get(s)).sum();
        alpha_min = alpha_min.min(alpha);
        let proportional = Step::all(d)
            .filter(|&s| dims.is_q_step(s))
            .all(|s| close(k.get(s), alpha * q.get(Step::new(s.axis() - dims.d0, s.sign()))));
        if !proportional || alpha < spec.delta - MASS_TOL {
            tilde_ok = false;
            tilde_detail = format!("atom {i}: alpha={alpha} proportional_to_q={proportional}");
        }
    }
    push("tilde_b_prime", tilde_ok, format!("{tilde_detail}; min alpha={alpha_min}"));

    push("bounded_support", true, "nearest-neighbour".into());
    let drift = q.drift();
    let has_drift = drift.iter().any(|x| x.abs() > MASS_TOL);
    let span = (0..dims.d1).filter(|&i| q.get(Step::plus(i)) > 0.0 || q.get(Step::minus(i)) > 0.0).count();
    push(
        "cut_times",
        q.dim() == dims.d1 && (has_drift || span >= 5),
        format!("drift={drift:?} span={span}"),
    );

    ValidationReport { checks, rho, eps_delta: spec.eps_delta() }
}

/// One realization of ω_o with its probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiteRealization {
    pub kernel: Kernel,
    pub prob: f64,
}

/// A finite-support law of single-site kernels on Z^dim.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiteLaw {
    pub dim: usize,
    /// Number of trailing q-coordinates (0 for the raw two-dimensional examples).
    pub d1: usize,
    pub atoms: Vec<SiteRealization>,
    /// Set for the raw examples that are not required to satisfy the assumptions.
    pub named_example: bool,
}

impl SiteLaw {
    pub fn single(kernel: Kernel) -> SiteLaw {
        SiteLaw { dim: kernel.dim(), d1: 0, atoms: vec![SiteRealization { kernel, prob: 1.0 }], named_example: false }
    }

    pub fn total_prob(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    /// Index of the atom selected by a uniform `u` in [0,1).
    pub fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            acc += a.prob;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }

    pub fn mean_kernel(&self) -> Kernel {
        self.atoms.iter().fold(Kernel::zero(self.dim), |acc, a| acc.plus(&a.kernel.scaled(a.prob)))
    }

    /// E[Π_u ω_o(u)^{c_u}] over the atoms.
    pub fn moment(&self, counts: &StepCounts) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let mut w = a.prob;
                for s in Step::all(self.dim) {
                    let c = counts.get(s);
                    if c > 0 {
                        w *= a.kernel.get(s).powi(c as i32);
                    }
                }
                w
            })
            .sum()
    }
}

pub fn enumerate_support(spec: &EnvironmentSpec, cap: usize) -> Result<SiteLaw> {
    let xi = spec.xi_atoms();
    let tilde: Vec<&Atom> = spec.tilde.iter().filter(|a| a.prob > 0.0).collect();
    let count = xi.len() * tilde.len();
    if count > cap {
        return Err(Error::SupportTooLarge { count, cap });
    }
    let mut atoms = Vec::with_capacity(count);
    for a in &xi {
        for b in &tilde {
            atoms.push(SiteRealization { kernel: a.kernel.plus(&b.kernel), prob: a.prob * b.prob });
        }
    }
    Ok(SiteLaw { dim: spec.d(), d1: spec.dims.d1, atoms, named_example: false })
}

fn law_from(dim: usize, atoms: Vec<(f64, Vec<(Step, f64)>)>) -> SiteLaw {
    SiteLaw {
        dim,
        d1: 0,
        atoms: atoms
            .into_iter()
            .filter(|(p, _)| *p > 0.0)
            .map(|(prob, pairs)| SiteRealization { kernel: Kernel::from_pairs(dim, &pairs), prob })
            .collect(),
        named_example: true,
    }
}

/// Independent axes; on axis i the site pushes only towards +e_i (prob β) or
/// only towards −e_i, each with mass 1/2.
pub fn build_example_ex1(beta: f64) -> SiteLaw {
    let axis = |i: usize| [(beta, Step::plus(i)), (1.0 - beta, Step::minus(i))];
    let mut atoms = Vec::new();
    for (p1, s1) in axis(0) {
        for (p2, s2) in axis(1) {
            atoms.push((p1 * p2, vec![(s1, 0.5), (s2, 0.5)]));
        }
    }
    law_from(2, atoms)
}

/// ω(e₁)=ω(e₂)=½ with probability β, otherwise ω(−e₁)=ω(−e₂)=½.
pub fn build_example_ex2(beta: f64) -> SiteLaw {
    law_from(
        2,
        vec![
            (beta, vec![(Step::plus(0), 0.5), (Step::plus(1), 0.5)]),
            (1.0 - beta, vec![(Step::minus(0), 0.5), (Step::minus(1), 0.5)]),
        ],
    )
}

/// ω(e₁)=ω(e₂)=½ with probability p, otherwise ω(−e₁)=1.
pub fn build_d2_renewal(p: f64) -> SiteLaw {
    law_from(
        2,
        vec![(p, vec![(Step::plus(0), 0.5), (Step::plus(1), 0.5)]), (1.0 - p, vec![(Step::minus(0), 1.0)])],
    )
}

/// The closed-form speed of the renewal example.
pub fn d2_renewal_speed(p: f64) -> [f64; 2] {
    let c = p * (2.0 - p) / (2.0 + 3.0 * p - 2.0 * p * p - p * p * p);
    [3.0 * c - 1.0, c]
}

/// Environments whose kernel may change with the visit number.
#[derive(Clone, Debug, PartialEq)]
pub enum CookieLaw {
    /// A fresh i.i.d. draw from the law on every visit.
    IidVisits(SiteLaw),
    /// Each site draws one sequence; visit m uses entry m, the last entry repeats.
    Sequences { dim: usize, atoms: Vec<(f64, Vec<Kernel>)> },
}

impl CookieLaw {
    pub fn dim(&self) -> usize {
        match self {
            CookieLaw::IidVisits(l) => l.dim,
            CookieLaw::Sequences { dim, .. } => *dim,
        }
    }
}

/// Draws one site realization using `rng`.
pub fn sample_site<R: rand::Rng>(law: &SiteLaw, rng: &mut R) -> SiteRealization {
    let u: f64 = rng.random();
    law.atoms[law.pick(u)].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::oracle_rng;

    fn q_uniform(d1: usize) -> Kernel {
        Kernel::uniform(d1)
    }

    pub(crate) fn two_valued_d1() -> EnvironmentSpec {
        let nu1 = Kernel::from_pairs(1, &[(Step::minus(0), 0.2)]);
        let nu2 = Kernel::from_pairs(1, &[(Step::plus(0), 0.2)]);
        EnvironmentSpec::two_valued(1, q_uniform(2), nu1, nu2, 0.4).unwrap()
    }

    #[test]
    fn two_valued_validates() {
        let spec = two_valued_d1();
        let r = spec.validate();
        // d1=2 zero-mean q fails only the cut-time sufficient condition
        let failures: Vec<_> = r.failures().iter().map(|c| c.name.clone()).collect();
        assert_eq!(failures, vec!["cut_times".to_string()]);
        let nu1 = Kernel::from_pairs(1, &[(Step::minus(0), 0.01)]);
        let nu2 = Kernel::from_pairs(1, &[(Step::plus(0), 0.01)]);
        let spec5 = EnvironmentSpec::two_valued(1, q_uniform(5), nu1, nu2, 0.3).unwrap();
        let r = spec5.validate();
        assert!(r.all_pass(), "{:?}", r.failures());
        assert!((r.rho - 0.02).abs() < 1e-15);
        assert!((r.eps_delta - 0.02).abs() < 1e-12);
    }

    #[test]
    fn equal_nus_fail_disjointness() {
        let nu = Kernel::from_pairs(1, &[(Step::plus(0), 0.2)]);
        let spec = EnvironmentSpec::two_valued(1, q_uniform(5), nu.clone(), nu, 0.4).unwrap();
        let r = spec.validate();
        assert!(!r.check("disjoint_supports").unwrap().pass);
    }

    #[test]
    fn negative_rho_fails() {
        let nu1 = Kernel::from_pairs(1, &[(Step::plus(0), 0.1)]);
        let nu2 = Kernel::from_pairs(1, &[(Step::minus(0), 0.1)]);
        let spec = EnvironmentSpec::two_valued(1, q_uniform(5), nu1, nu2, 0.4).unwrap();
        let r = spec.validate();
        assert!((r.rho + 0.2).abs() < 1e-15);
        assert!(!r.check("rho_positive").unwrap().pass);
    }

    #[test]
    fn two_valued_support() {
        let spec = two_valued_d1();
        let law = spec.enumerate_support(DEFAULT_SUPPORT_CAP).unwrap();
        assert_eq!(law.atoms.len(), 2);
        assert!((law.atoms[0].prob - 0.6).abs() < 1e-15);
        assert!((law.atoms[1].prob - 0.4).abs() < 1e-15);
        for a in &law.atoms {
            assert!((a.kernel.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn product_count_and_cap() {
        let mut spec = two_valued_d1();
        let k = spec.tilde[0].kernel.clone();
        spec.tilde = vec![Atom { prob: 0.5, kernel: k.clone() }, Atom { prob: 0.5, kernel: k }];
        let law = spec.enumerate_support(DEFAULT_SUPPORT_CAP).unwrap();
        assert_eq!(law.atoms.len(), 4);
        assert!((law.total_prob() - 1.0).abs() < 1e-12);
        assert!(matches!(spec.enumerate_support(3), Err(Error::SupportTooLarge { count: 4, cap: 3 })));
    }

    #[test]
    fn json_roundtrip() {
        let text = r#"{"dims":{"d0":1,"d1":2,"d_star":1},"gamma":0.2,"kappa":1.0,"delta":0.8,"beta":0.4,
            "nu1":[["-1",0.2]],"nu2":[["+1",0.2]],"q":[["+1",0.25],["-1",0.25],["+2",0.25],["-2",0.25]]}"#;
        let spec = EnvironmentSpec::from_json_str(text).unwrap();
        assert_eq!(spec, two_valued_d1());
        let again = EnvironmentSpec::from_json_value(spec.to_json_value()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn json_rejects_bad_direction() {
        let text = r#"{"dims":{"d0":1,"d1":2,"d_star":1},"gamma":0.2,"kappa":1.0,"delta":0.8,"beta":0.4,
            "nu1":[["-4",0.2]],"nu2":[["+1",0.2]],"q":[["+1",1.0]]}"#;
        assert!(EnvironmentSpec::from_json_str(text).is_err());
    }

    #[test]
    fn ex1_has_four_atoms() {
        let law = build_example_ex1(0.3);
        assert_eq!(law.atoms.len(), 4);
        assert!(law.named_example);
        assert!((law.total_prob() - 1.0).abs() < 1e-15);
        for a in &law.atoms {
            assert_eq!(a.kernel.support().len(), 2);
        }
    }

    #[test]
    fn ex2_degenerates_at_one() {
        let law = build_example_ex2(1.0);
        assert_eq!(law.atoms.len(), 1);
        assert_eq!(law.atoms[0].kernel.get(Step::plus(0)), 0.5);
        assert_eq!(law.atoms[0].kernel.get(Step::plus(1)), 0.5);
    }

    #[test]
    fn renewal_law() {
        let law = build_d2_renewal(0.3);
        assert_eq!(law.atoms.len(), 2);
        assert_eq!(law.atoms[1].kernel.get(Step::minus(0)), 1.0);
        assert!((law.atoms[1].prob - 0.7).abs() < 1e-15);
        let v = d2_renewal_speed(0.5);
        assert!((v[0] + 0.2173913043478261).abs() < 1e-12);
        assert!((v[1] - 0.2608695652173913).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequency_matches_beta() {
        let spec = two_valued_d1();
        let law = spec.enumerate_support(DEFAULT_SUPPORT_CAP).unwrap();
        let mut rng = oracle_rng(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_site(&law, &mut rng).kernel == law.atoms[1].kernel).count();
        let p = hits as f64 / n as f64;
        let sigma = (0.4 * 0.6 / n as f64).sqrt();
        assert!((p - 0.4).abs() < 3.0 * sigma, "p={p}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let law = build_example_ex1(0.5);
        let draw = |seed| {
            let mut rng = oracle_rng(seed);
            (0..50).map(|_| law.pick(rand::Rng::random::<f64>(&mut rng))).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let single = SiteLaw::single(Kernel::uniform(3));
        let mut rng = oracle_rng(1);
        for _ in 0..10 {
            assert_eq!(sample_site(&single, &mut rng).kernel, Kernel::uniform(3));
        }
    }

    #[test]
    fn expected_masses_and_drift() {
        let mut spec = two_valued_d1();
        spec.dims = Dimensions::new(2, 1, 2).unwrap();
        let d = 3;
        spec.kappa = 0.7;
        spec.gamma = 0.2;
        spec.delta = 0.8;
        spec.nu1 = Kernel::from_pairs(d, &[(Step::minus(0), 0.2)]);
        spec.nu2 = Kernel::from_pairs(d, &[(Step::plus(0), 0.15), (Step::plus(1), 0.05)]);
        spec.residual = vec![Atom { prob: 0.3, kernel: Kernel::from_pairs(d, &[(Step::minus(1), 0.2)]) }];
        spec.q = Kernel::from_pairs(1, &[(Step::plus(0), 0.6), (Step::minus(0), 0.4)]);
        spec.tilde = vec![Atom { prob: 1.0, kernel: spec.q.embed(d, 2).scaled(0.8) }];
        let r = spec.validate();
        assert!(r.all_pass(), "{:?}", r.failures());
        let law = spec.enumerate_support(DEFAULT_SUPPORT_CAP).unwrap();
        let mean = law.mean_kernel();
        let star: f64 = Step::all(d).filter(|&s| s.axis() < 2).map(|s| mean.get(s)).sum();
        assert!((star - spec.gamma).abs() < 1e-12);
        let drift = mean.get(Step::plus(0)) - mean.get(Step::minus(0));
        assert!((drift - spec.mean_first_drift()).abs() < 1e-12);
        for a in &law.atoms {
            for s in Step::all(d).filter(|&s| s.axis() >= 2) {
                assert!(a.kernel.get(s) >= spec.delta * spec.q.get(Step::new(s.axis() - 2, s.sign())) - 1e-12);
            }
        }
    }
}
