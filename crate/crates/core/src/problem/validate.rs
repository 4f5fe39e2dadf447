use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CoefficientSet, Probe, ProbePlan};
use crate::error::{Error, Result};
use crate::linalg::min_symmetric_eigenvalue;
use crate::rng::path_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub probe_count: usize,
    pub worst_violation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// e.g. `sigma/z`
    pub argument: String,
    pub max_quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub problem: String,
    pub plan: ProbePlan,
    pub checks: Vec<AssumptionCheck>,
    pub lipschitz_estimates: Vec<LipschitzEstimate>,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Deterministic probe set: box centre, box corners, then seeded uniform draws.
pub(crate) fn probe_points(plan: &ProbePlan, dim: usize) -> Vec<Probe> {
    let mid = |r: (f64, f64)| 0.5 * (r.0 + r.1);
    let mut out = vec![Probe { t: mid(plan.t), x: vec![mid(plan.x); dim], y: mid(plan.y), z: vec![mid(plan.z); dim] }];
    let axes = 2 + 2 * dim;
    if axes <= 8 {
        for mask in 0..(1usize << axes) {
            let pick = |bit: usize, r: (f64, f64)| if mask >> bit & 1 == 1 { r.1 } else { r.0 };
            out.push(Probe {
                t: pick(0, plan.t),
                y: pick(1, plan.y),
                x: (0..dim).map(|i| pick(2 + i, plan.x)).collect(),
                z: (0..dim).map(|i| pick(2 + dim + i, plan.z)).collect(),
            });
        }
    }
    let mut rng = path_stream(plan.seed, 0);
    let mut draw = |r: (f64, f64)| r.0 + (r.1 - r.0) * rng.random::<f64>();
    while out.len() < plan.count.max(out.len()) {
        let t = draw(plan.t);
        let y = draw(plan.y);
        let x = (0..dim).map(|_| draw(plan.x)).collect();
        let z = (0..dim).map(|_| draw(plan.z)).collect();
        out.push(Probe { t, x, y, z });
    }
    out
}

fn ensure_finite(p: &Probe, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidCoefficient { probe: p.to_string(), detail: format!("{what} is not finite: {values:?}") })
    }
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sampled check of the standing assumptions: boundedness, symmetry and
/// ellipticity of σ, Lipschitz difference quotients, and the z-growth
/// condition on σ (skipped in one dimension).
pub fn validate_assumptions(coeffs: &CoefficientSet, plan: &ProbePlan) -> Result<AssumptionReport> {
    let d = coeffs.dim();
    let probes = probe_points(plan, d);
    let bounds = coeffs.bounds;
    let zeros = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut sigma2 = vec![0.0; d * d];
    let mut drift = vec![0.0; d];
    let mut drift2 = vec![0.0; d];

    let (mut bound_worst, mut sym_worst, mut ell_worst) = (0.0f64, 0.0f64, 0.0f64);
    for p in &probes {
        coeffs.sigma(p.t, &p.x, p.y, &p.z, &mut sigma);
        ensure_finite(p, "sigma", &sigma)?;
        coeffs.drift(p.t, &p.x, p.y, &p.z, &mut drift);
        ensure_finite(p, "drift", &drift)?;
        let f0 = coeffs.driver(p.t, &p.x, 0.0, &zeros);
        let fp = coeffs.driver(p.t, &p.x, p.y, &p.z);
        let g = coeffs.terminal(&p.x);
        ensure_finite(p, "driver", &[f0, fp])?;
        ensure_finite(p, "terminal", &[g])?;

        let sup = frobenius(&sigma).max(f0.abs()).max(g.abs());
        bound_worst = bound_worst.max(sup - bounds.sup);
        for i in 0..d {
            for j in 0..i {
                sym_worst = sym_worst.max((sigma[i * d + j] - sigma[j * d + i]).abs());
            }
        }
        ell_worst = ell_worst.max(bounds.ellipticity - min_symmetric_eigenvalue(&sigma, d));
    }

    // Lipschitz: perturb one argument by a step in [h, 2h] towards the box interior
    let h = plan.diff_step;
    let mut rng = path_stream(plan.seed, 1);
    let mut quotients: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, q: f64| match quotients.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(q),
        None => quotients.push((name, q)),
    };
    let inward = |v: f64, r: (f64, f64), step: f64| if v + step <= r.1 { v + step } else { v - step };
    for p in &probes {
        coeffs.sigma(p.t, &p.x, p.y, &p.z, &mut sigma);
        coeffs.drift(p.t, &p.x, p.y, &p.z, &mut drift);
        let f = coeffs.driver(p.t, &p.x, p.y, &p.z);
        let g = coeffs.terminal(&p.x);
        for arg in ["x", "y", "z"] {
            let comps = if arg == "y" { 1 } else { d };
            for c in 0..comps {
                let step = h * (1.0 + rng.random::<f64>());
                let mut q = p.clone();
                let moved = match arg {
                    "x" => {
                        q.x[c] = inward(p.x[c], plan.x, step);
                        (q.x[c] - p.x[c]).abs()
                    }
                    "y" => {
                        q.y = inward(p.y, plan.y, step);
                        (q.y - p.y).abs()
                    }
                    _ => {
                        q.z[c] = inward(p.z[c], plan.z, step);
                        (q.z[c] - p.z[c]).abs()
                    }
                };
                coeffs.sigma(q.t, &q.x, q.y, &q.z, &mut sigma2);
                coeffs.drift(q.t, &q.x, q.y, &q.z, &mut drift2);
                ensure_finite(&q, "sigma", &sigma2)?;
                ensure_finite(&q, "drift", &drift2)?;
                let f2 = coeffs.driver(q.t, &q.x, q.y, &q.z);
                ensure_finite(&q, "driver", &[f2])?;
                record(format!("sigma/{arg}"), diff_norm(&sigma, &sigma2) / moved);
                record(format!("b/{arg}"), diff_norm(&drift, &drift2) / moved);
                record(format!("f/{arg}"), (f - f2).abs() / moved);
                if arg == "x" {
                    let g2 = coeffs.terminal(&q.x);
                    ensure_finite(&q, "terminal", &[g2])?;
                    record("g/x".to_string(), (g - g2).abs() / moved);
                }
            }
        }
    }
    let lip_worst = quotients.iter().fold(0.0f64, |m, (_, q)| m.max(q - bounds.lipschitz));

    // |σ(·,z₁) − σ(·,z₂)| ≤ C₀|z₁ − z₂| / (1 + |z₁|), first alternative; d = 1 skips
    let (growth_worst, growth_count) = if d == 1 {
        (0.0, 0)
    } else {
        let mut worst = 0.0f64;
        for pair in probes.chunks_exact(2) {
            let (p, q) = (&pair[0], &pair[1]);
            coeffs.sigma(p.t, &p.x, p.y, &p.z, &mut sigma);
            coeffs.sigma(p.t, &p.x, p.y, &q.z, &mut sigma2);
            let dz = diff_norm(&p.z, &q.z);
            let z1 = p.z.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(diff_norm(&sigma, &sigma2) - bounds.sup * dz / (1.0 + z1));
        }
        (worst, probes.len() / 2)
    };

    let tol = plan.tolerance;
    let mk = |name: &str, count: usize, worst: f64| {
        let worst = worst.max(0.0);
        AssumptionCheck { name: name.to_string(), probe_count: count, worst_violation: worst, pass: worst <= tol }
    };
    // symmetry has its own fixed tolerance
    let mut symmetry = mk("symmetry", probes.len(), sym_worst);
    symmetry.pass = symmetry.worst_violation <= 1e-12;
    Ok(AssumptionReport {
        problem: coeffs.name().to_string(),
        plan: plan.clone(),
        checks: vec![
            mk("boundedness", probes.len(), bound_worst),
            symmetry,
            mk("ellipticity", probes.len(), ell_worst),
            mk("lipschitz", probes.len(), lip_worst),
            mk("sigma-z-growth", growth_count, growth_worst),
        ],
        lipschitz_estimates: quotients
            .into_iter()
            .map(|(argument, max_quotient)| LipschitzEstimate { argument, max_quotient })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{problem, Deps, Params};

    #[test]
    fn constant_problem_passes_with_zero_violation() {
        let c = problem("constant", &Params::new()).unwrap();
        let r = validate_assumptions(&c, &c.probes).unwrap();
        assert!(r.pass(), "{r:?}");
        for check in &r.checks {
            assert_eq!(check.worst_violation, 0.0, "{}", check.name);
        }
    }

    #[test]
    fn degenerate_example_fails_ellipticity() {
        let c = problem("example-2.1-degenerate", &Params::new()).unwrap();
        let r = validate_assumptions(&c, &c.probes).unwrap();
        let ell = r.check("ellipticity").unwrap();
        assert!(!ell.pass);
        // σ(0) = 0 at the box centre, so the violation is the full floor
        assert!(ell.worst_violation >= 1.0);
    }

    #[test]
    fn non_finite_value_names_the_probe() {
        let c = CoefficientSet::new("bad", 1).with_driver(Deps::Y, |_, _, y, _| 1.0 / y);
        let err = validate_assumptions(&c, &c.probes).unwrap_err();
        match err {
            Error::InvalidCoefficient { probe, .. } => assert!(probe.contains("y=0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetric_sigma_fails_symmetry() {
        let c = CoefficientSet::new("skew", 2)
            .with_sigma(Deps::NONE, |_, _, _, _, out| out.copy_from_slice(&[1.0, 0.1, 0.0, 1.0]));
        let r = validate_assumptions(&c, &c.probes).unwrap();
        assert!(!r.check("symmetry").unwrap().pass);
    }
}
