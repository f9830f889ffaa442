//! Annealed transition kernels as moment ratios of the site law, their exact
//! β-derivatives, and the kernel differences Δ built from them.

use std::collections::HashMap;

use crate::environment::{EnvironmentSpec, SiteLaw, DEFAULT_SUPPORT_CAP};
use crate::error::{Error, Result};
use crate::lattice::{Dimensions, PathHistory, Site, Step, StepCounts};
use crate::scalar::Weight;

#[derive(Clone, Debug)]
struct XiAtom<T> {
    /// Probability is `pa + pb·β`.
    pa: T,
    pb: T,
    kernel: Vec<T>,
}

#[derive(Clone, Debug)]
struct TildeAtom<T> {
    prob: T,
    kernel: Vec<T>,
}

/// A probability kernel on the 2d unit steps, indexed by `Step::index`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealedKernel<T = f64> {
    pub probs: Vec<T>,
}

impl<T: Weight> AnnealedKernel<T> {
    pub fn get(&self, s: Step) -> T {
        self.probs[s.index()].clone()
    }

    pub fn sum(&self) -> T {
        self.probs.iter().cloned().fold(T::zero(), |a, b| a + b)
    }
}

/// Precomputed factorized moments of one environment spec with T-valued
/// arithmetic. β enters only through the affine ξ-atom probabilities.
#[derive(Clone, Debug)]
pub struct AnnealedModel<T = f64> {
    pub dims: Dimensions,
    d: usize,
    beta: T,
    kappa: T,
    xi: Vec<XiAtom<T>>,
    tilde: Vec<TildeAtom<T>>,
    star: Vec<bool>,
    nu1: Vec<T>,
    nu2: Vec<T>,
    in_s: Vec<bool>,
    rho: T,
}

fn pow<T: Weight>(x: &T, n: u32) -> T {
    let mut acc = T::one();
    for _ in 0..n {
        acc = acc * x.clone();
    }
    acc
}

/// Result of `AnnealedModel::kernel_ext`.
#[derive(Clone, Debug)]
pub struct KernelPair<T> {
    pub p: Vec<T>,
    pub dp: Vec<T>,
}

impl<T: Weight> AnnealedModel<T> {
    pub fn new(spec: &EnvironmentSpec) -> Self {
        let d = spec.d();
        let conv = |k: &crate::environment::Kernel| -> Vec<T> {
            (0..2 * d).map(|i| T::from_f64(k.get(Step::from_index(i)))).collect()
        };
        let kappa = T::from_f64(spec.kappa);
        let mut xi = vec![
            XiAtom { pa: kappa.clone(), pb: T::zero() - kappa.clone(), kernel: conv(&spec.nu1) },
            XiAtom { pa: T::zero(), pb: kappa.clone(), kernel: conv(&spec.nu2) },
        ];
        for a in &spec.residual {
            xi.push(XiAtom { pa: T::from_f64(a.prob), pb: T::zero(), kernel: conv(&a.kernel) });
        }
        let tilde = spec.tilde.iter().map(|a| TildeAtom { prob: T::from_f64(a.prob), kernel: conv(&a.kernel) }).collect();
        let star = (0..2 * d).map(|i| spec.dims.is_star_step(Step::from_index(i))).collect();
        let in_s = (0..2 * d)
            .map(|i| {
                let s = Step::from_index(i);
                spec.nu1.get(s) != 0.0 || spec.nu2.get(s) != 0.0
            })
            .collect();
        let e1 = Step::plus(0).index();
        let m1 = Step::minus(0).index();
        let nu1 = conv(&spec.nu1);
        let nu2 = conv(&spec.nu2);
        let rho = (nu2[e1].clone() - nu2[m1].clone()) - (nu1[e1].clone() - nu1[m1].clone());
        AnnealedModel { dims: spec.dims, d, beta: T::from_f64(spec.beta), kappa, xi, tilde, star, nu1, nu2, in_s, rho }
    }

    pub fn with_beta(&self, beta: T) -> Self {
        AnnealedModel { beta, ..self.clone() }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn beta(&self) -> &T {
        &self.beta
    }

    pub fn kappa(&self) -> &T {
        &self.kappa
    }

    pub fn rho(&self) -> &T {
        &self.rho
    }

    pub fn in_s(&self, s: Step) -> bool {
        self.in_s[s.index()]
    }

    pub fn is_star(&self, s: Step) -> bool {
        self.star[s.index()]
    }

    pub fn nu(&self, i: usize, s: Step) -> T {
        match i {
            1 => self.nu1[s.index()].clone(),
            2 => self.nu2[s.index()].clone(),
            _ => panic!("nu index must be 1 or 2"),
        }
    }

    /// Per-atom weights Π ξ(v)^{c_v} over star directions.
    fn xi_weights(&self, c: &StepCounts) -> Vec<T> {
        self.xi
            .iter()
            .map(|a| {
                let mut w = T::one();
                for i in 0..2 * self.d {
                    let n = c.as_slice()[i];
                    if n > 0 && self.star[i] {
                        w = w * pow(&a.kernel[i], n);
                    }
                }
                w
            })
            .collect()
    }

    fn tilde_weights(&self, c: &StepCounts) -> Vec<T> {
        self.tilde
            .iter()
            .map(|a| {
                let mut w = a.prob.clone();
                for i in 0..2 * self.d {
                    let n = c.as_slice()[i];
                    if n > 0 && !self.star[i] {
                        w = w * pow(&a.kernel[i], n);
                    }
                }
                w
            })
            .collect()
    }

    fn affine(&self, w: &[T], extra: Option<usize>) -> (T, T) {
        let mut a = T::zero();
        let mut b = T::zero();
        for (atom, wi) in self.xi.iter().zip(w) {
            let wi = match extra {
                Some(i) => wi.clone() * atom.kernel[i].clone(),
                None => wi.clone(),
            };
            if wi.is_zero() {
                continue;
            }
            a = a + atom.pa.clone() * wi.clone();
            b = b + atom.pb.clone() * wi;
        }
        (a, b)
    }

    fn tilde_sum(&self, w: &[T], extra: Option<usize>) -> T {
        let mut t = T::zero();
        for (atom, wi) in self.tilde.iter().zip(w) {
            t = match extra {
                Some(i) => t + wi.clone() * atom.kernel[i].clone(),
                None => t + wi.clone(),
            };
        }
        t
    }

    /// E[Π_u ω_o(u)^{c_u}].
    pub fn moment(&self, c: &StepCounts) -> T {
        let (a, b) = self.affine(&self.xi_weights(c), None);
        (a + b * self.beta.clone()) * self.tilde_sum(&self.tilde_weights(c), None)
    }

    /// ∂/∂β of `moment`.
    pub fn moment_dbeta(&self, c: &StepCounts) -> T {
        let (_, b) = self.affine(&self.xi_weights(c), None);
        b * self.tilde_sum(&self.tilde_weights(c), None)
    }

    /// Annealed kernel at a site whose past departures are `c`.
    pub fn kernel(&self, c: &StepCounts) -> Result<AnnealedKernel<T>> {
        Ok(AnnealedKernel { probs: self.kernel_and_dbeta(c)?.p })
    }

    /// Kernel and its exact β-derivative by the quotient rule on the affine
    /// moments. Fails for histories of zero probability.
    pub fn kernel_and_dbeta(&self, c: &StepCounts) -> Result<KernelPair<T>> {
        let pair = self.kernel_impl(c, false);
        pair.ok_or(Error::ZeroProbabilityHistory)
    }

    /// As `kernel_and_dbeta`, but at the endpoints β∈{0,1} a history that has
    /// probability zero only because of β gets the limiting kernel from the
    /// interior. `None` when the history is impossible for every β.
    pub fn kernel_ext(&self, c: &StepCounts) -> Option<KernelPair<T>> {
        self.kernel_impl(c, true)
    }

    fn kernel_impl(&self, c: &StepCounts, extend: bool) -> Option<KernelPair<T>> {
        let n = 2 * self.d;
        let xw = self.xi_weights(c);
        let tw = self.tilde_weights(c);
        let (a, b) = self.affine(&xw, None);
        let t = self.tilde_sum(&tw, None);
        if t.is_zero() {
            return None;
        }
        let xi_d = a.clone() + b.clone() * self.beta.clone();
        let degenerate = xi_d.is_zero();
        if degenerate && (!extend || b.is_zero()) {
            return None;
        }
        // a single compatible atom pins the kernel exactly
        let only = |w: &[T]| {
            let mut it = w.iter().enumerate().filter(|(_, x)| !x.is_zero());
            match (it.next(), it.next()) {
                (Some((i, _)), None) => Some(i),
                _ => None,
            }
        };
        let xi_only = only(&xw);
        let tilde_only = only(&tw);
        let mut p = Vec::with_capacity(n);
        let mut dp = Vec::with_capacity(n);
        for i in 0..n {
            if self.star[i] {
                if let Some(k) = xi_only {
                    p.push(self.xi[k].kernel[i].clone());
                    dp.push(T::zero());
                    continue;
                }
                let (an, bn) = self.affine(&xw, Some(i));
                if degenerate {
                    // both affine factors vanish at this β; the ratio is constant
                    p.push(bn / b.clone());
                    dp.push(T::zero());
                } else {
                    let num = an + bn.clone() * self.beta.clone();
                    let ratio = num.clone() / xi_d.clone();
                    let d_ratio = (bn * xi_d.clone() - num * b.clone()) / (xi_d.clone() * xi_d.clone());
                    p.push(ratio);
                    dp.push(d_ratio);
                }
            } else {
                match tilde_only {
                    Some(k) => p.push(self.tilde[k].kernel[i].clone()),
                    None => p.push(self.tilde_sum(&tw, Some(i)) / t.clone()),
                }
                dp.push(T::zero());
            }
        }
        Some(KernelPair { p, dp })
    }

    fn mu_nu(&self, i: usize) -> T {
        match i {
            1 => self.kappa.clone() * (T::one() - self.beta.clone()),
            _ => self.kappa.clone() * self.beta.clone(),
        }
    }

    /// The three-case formula for u ∈ S₁∪S₂:
    /// Σ_i ν_i(u)[1{ℓ(S_i)>0} + 1{ℓ(V_{d*})=0} μ_{d*}(ν_i)].
    pub fn kernel_closed_form(&self, c: &StepCounts, u: Step) -> Option<T> {
        if !self.in_s(u) {
            return None;
        }
        let ell = |mask: &dyn Fn(usize) -> bool| -> u32 { (0..2 * self.d).filter(|&i| mask(i)).map(|i| c.as_slice()[i]).sum() };
        let l_star = ell(&|i| self.star[i]);
        let mut out = T::zero();
        for (k, nu) in [(1usize, &self.nu1), (2, &self.nu2)] {
            let l_si = ell(&|i| !nu[i].is_zero());
            let mut coef = T::zero();
            if l_si > 0 {
                coef = coef + T::one();
            }
            if l_star == 0 {
                coef = coef + self.mu_nu(k);
            }
            out = out + nu[u.index()].clone() * coef;
        }
        Some(out)
    }

    /// κ[ν₂(u)−ν₁(u)]·1{ℓ(V_{d*})=0} on S₁∪S₂, zero elsewhere.
    pub fn kernel_dbeta_closed_form(&self, c: &StepCounts) -> Vec<T> {
        let l_star: u32 = (0..2 * self.d).filter(|&i| self.star[i]).map(|i| c.as_slice()[i]).sum();
        (0..2 * self.d)
            .map(|i| {
                if self.in_s[i] && l_star == 0 {
                    self.kappa.clone() * (self.nu2[i].clone() - self.nu1[i].clone())
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// E_o[X₁] as a d-vector.
    pub fn mean_step(&self) -> Vec<T> {
        let p = self.kernel(&StepCounts::default()).expect("fresh site is always feasible").probs;
        (0..self.d).map(|a| p[2 * a].clone() - p[2 * a + 1].clone()).collect()
    }

    /// Probability of a whole path by the chain rule of annealed kernels.
    pub fn path_probability(&self, h: &PathHistory) -> T {
        let mut stats: HashMap<Site, StepCounts> = HashMap::new();
        let mut prob = T::one();
        for (i, &s) in h.steps().iter().enumerate() {
            let x = h.site(i);
            let c = stats.entry(x).or_default();
            match self.kernel(c) {
                Ok(k) => prob = prob * k.get(s),
                Err(_) => return T::zero(),
            }
            if prob.is_zero() {
                return prob;
            }
            c.add(s);
        }
        prob
    }
}

/// Kernels keyed by departure counts, private to one worker.
#[derive(Debug)]
pub struct KernelCache<'a, T> {
    model: &'a AnnealedModel<T>,
    map: HashMap<StepCounts, Option<KernelPair<T>>>,
}

impl<'a, T: Weight> KernelCache<'a, T> {
    pub fn new(model: &'a AnnealedModel<T>) -> Self {
        KernelCache { model, map: HashMap::new() }
    }

    pub fn model(&self) -> &AnnealedModel<T> {
        self.model
    }

    /// Extended kernel (see `AnnealedModel::kernel_ext`).
    pub fn get(&mut self, c: &StepCounts) -> Option<&KernelPair<T>> {
        let model = self.model;
        self.map.entry(*c).or_insert_with(|| model.kernel_ext(c)).as_ref()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn moment(spec: &EnvironmentSpec, key: &StepCounts) -> f64 {
    AnnealedModel::<f64>::new(spec).moment(key)
}

pub fn kernel(spec: &EnvironmentSpec, h: &PathHistory, at: &Site) -> Result<AnnealedKernel<f64>> {
    AnnealedModel::<f64>::new(spec).kernel(&h.site_stats(at))
}

pub fn kernel_dbeta(spec: &EnvironmentSpec, h: &PathHistory, at: &Site) -> Result<Vec<f64>> {
    Ok(AnnealedModel::<f64>::new(spec).kernel_and_dbeta(&h.site_stats(at))?.dp)
}

fn joined_counts(long: &PathHistory, short: &PathHistory) -> Result<(StepCounts, StepCounts)> {
    let x = short.terminal();
    let prefix_len = long.len().checked_sub(short.len()).ok_or_else(|| Error::Spec("long history is shorter than short".into()))?;
    if long.steps()[prefix_len..] != *short.steps() || long.site(prefix_len) != short.origin() {
        return Err(Error::MismatchedJunction {
            expected: long.site(prefix_len).coords(crate::lattice::MAX_DIM).to_vec(),
            found: short.origin().coords(crate::lattice::MAX_DIM).to_vec(),
        });
    }
    Ok((long.site_stats(&x), short.site_stats(&x)))
}

/// Δ(u) = p^{long}(u) − p^{short}(u) at the common endpoint, where `long`
/// ends with `short`.
pub fn delta(spec: &EnvironmentSpec, long: &PathHistory, short: &PathHistory, u: Step) -> Result<f64> {
    let model = AnnealedModel::<f64>::new(spec);
    let (cl, cs) = joined_counts(long, short)?;
    Ok(model.kernel(&cl)?.get(u) - model.kernel(&cs)?.get(u))
}

pub fn delta_dbeta(spec: &EnvironmentSpec, long: &PathHistory, short: &PathHistory, u: Step) -> Result<f64> {
    let model = AnnealedModel::<f64>::new(spec);
    let (cl, cs) = joined_counts(long, short)?;
    Ok(model.kernel_and_dbeta(&cl)?.dp[u.index()] - model.kernel_and_dbeta(&cs)?.dp[u.index()])
}

/// Σ_y (y−x)^{[1]} (p^{η}(x,y) − p^{x⃗∘η}(x,y)) at x = η's endpoint, and its
/// β-derivative.
pub fn drift_difference_pair(spec: &EnvironmentSpec, xm: &PathHistory, eta: &PathHistory) -> Result<(f64, f64)> {
    let model = AnnealedModel::<f64>::new(spec);
    let long = xm.concat(eta)?;
    let x = eta.terminal();
    let short = model.kernel_and_dbeta(&eta.site_stats(&x))?;
    let joined = model.kernel_and_dbeta(&long.site_stats(&x))?;
    let (e1, m1) = (Step::plus(0).index(), Step::minus(0).index());
    let val = (short.p[e1] - joined.p[e1]) - (short.p[m1] - joined.p[m1]);
    let der = (short.dp[e1] - joined.dp[e1]) - (short.dp[m1] - joined.dp[m1]);
    Ok((val, der))
}

pub fn drift_difference(spec: &EnvironmentSpec, xm: &PathHistory, eta: &PathHistory) -> Result<f64> {
    Ok(drift_difference_pair(spec, xm, eta)?.0)
}

pub fn drift_difference_dbeta(spec: &EnvironmentSpec, xm: &PathHistory, eta: &PathHistory) -> Result<f64> {
    Ok(drift_difference_pair(spec, xm, eta)?.1)
}

/// P_o(X⃗_n = h) by summing over every assignment of environment atoms to the
/// sites the path departs from. Independent of the moment factorization.
pub fn path_probability_by_environments(law: &SiteLaw, h: &PathHistory) -> f64 {
    let mut sites: Vec<Site> = h.all_stats().keys().copied().collect();
    sites.sort();
    let k = law.atoms.len();
    let mut choice = vec![0usize; sites.len()];
    let mut total = 0.0;
    loop {
        let mut w: f64 = choice.iter().map(|&a| law.atoms[a].prob).product();
        if w > 0.0 {
            for (i, &s) in h.steps().iter().enumerate() {
                let j = sites.binary_search(&h.site(i)).unwrap();
                w *= law.atoms[choice[j]].kernel.get(s);
            }
            total += w;
        }
        // advance the mixed-radix counter
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return total;
            }
            choice[pos] += 1;
            if choice[pos] < k {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Conditional kernel at the endpoint of `h` computed by environment
/// averaging: P(h then u) / P(h).
pub fn kernel_by_environments(law: &SiteLaw, h: &PathHistory) -> Option<Vec<f64>> {
    let base = path_probability_by_environments(law, h);
    if base == 0.0 {
        return None;
    }
    let mut ext = h.clone();
    Some(
        Step::all(law.dim)
            .map(|s| {
                ext.push(s);
                let p = path_probability_by_environments(law, &ext);
                ext.pop();
                p / base
            })
            .collect(),
    )
}

/// Enumerated support of `spec` for oracle use.
pub fn oracle_law(spec: &EnvironmentSpec) -> SiteLaw {
    spec.enumerate_support(DEFAULT_SUPPORT_CAP).expect("oracle support fits the cap")
}
