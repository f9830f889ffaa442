#![allow(dead_code)]

use rwpre_core::annealed::path_probability_by_environments;
use rwpre_core::environment::{Atom, EnvironmentSpec, Kernel, SiteLaw};
use rwpre_core::lattice::{Dimensions, PathHistory, Site, Step};

pub fn two_valued(d0: usize, d1: usize, nu: f64, beta: f64) -> EnvironmentSpec {
    let nu1 = Kernel::from_pairs(d0, &[(Step::minus(0), nu)]);
    let nu2 = Kernel::from_pairs(d0, &[(Step::plus(0), nu)]);
    EnvironmentSpec::two_valued(d0, Kernel::uniform(d1), nu1, nu2, beta).unwrap()
}

/// d0=2, d*=2, κ<1, a residual atom and a biased q.
pub fn rich(beta: f64) -> EnvironmentSpec {
    let d = 3;
    let q = Kernel::from_pairs(1, &[(Step::plus(0), 0.6), (Step::minus(0), 0.4)]);
    EnvironmentSpec {
        dims: Dimensions::new(2, 1, 2).unwrap(),
        gamma: 0.2,
        kappa: 0.7,
        delta: 0.8,
        beta,
        nu1: Kernel::from_pairs(d, &[(Step::minus(0), 0.2)]),
        nu2: Kernel::from_pairs(d, &[(Step::plus(0), 0.15), (Step::plus(1), 0.05)]),
        residual: vec![Atom { prob: 0.3, kernel: Kernel::from_pairs(d, &[(Step::minus(1), 0.2)]) }],
        tilde: vec![Atom { prob: 1.0, kernel: q.embed(d, 2).scaled(0.8) }],
        q,
    }
}

/// E_o[X_m − X_{m−1}] by summing over every path of length m, each path
/// weighted by averaging over all environment assignments.
pub fn increment_by_paths(law: &SiteLaw, m: usize) -> Vec<f64> {
    let d = law.dim;
    let mut out = vec![0.0; d];
    let mut h = PathHistory::new(Site::origin());
    fn rec(law: &SiteLaw, h: &mut PathHistory, m: usize, out: &mut [f64]) {
        if h.len() == m {
            let p = path_probability_by_environments(law, h);
            let last = h.steps()[m - 1];
            out[last.axis()] += p * last.sign() as f64;
            return;
        }
        for s in Step::all(law.dim) {
            h.push(s);
            if path_probability_by_environments(law, h) > 0.0 {
                rec(law, h, m, out);
            }
            h.pop();
        }
    }
    rec(law, &mut h, m, &mut out);
    let _ = d;
    out
}
