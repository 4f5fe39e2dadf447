//! Built-in problems, addressed by string id.

use std::collections::BTreeMap;

use super::{CoefficientSet, Deps, ProbePlan};
use crate::error::{Error, Result};
use crate::simulate::{barlow_series, barlow_terms, PathFunctional, TSIRELSON_DEPTH};

/// Numeric problem parameters, e.g. `lambda` for the Barlow problem.
pub type Params = BTreeMap<String, f64>;

struct Entry {
    id: &'static str,
    summary: &'static str,
    keys: &'static [&'static str],
}

const ENTRIES: &[Entry] = &[
    Entry { id: "constant", summary: "b=0, σ=1, f=0, g=0", keys: &[] },
    Entry { id: "heat-x", summary: "σ=1, f=0, g=x; u=x", keys: &[] },
    Entry { id: "heat-x2", summary: "σ=1, f=0, g=x²; u=x²+(T−t)", keys: &[] },
    Entry { id: "heat-sin", summary: "σ=1, f=0, g=sin x; u=e^{−(T−t)/2} sin x", keys: &[] },
    Entry { id: "heat-2d", summary: "d=2, σ=[[1,.3],[.3,1]], g=|x|²", keys: &[] },
    Entry { id: "example-2.1", summary: "σ(z)=clip(z,½,2), f=0, g=x; u=x", keys: &[] },
    Entry { id: "example-2.1-degenerate", summary: "σ(z)=z, f=0, g=x (not elliptic)", keys: &[] },
    Entry { id: "example-2.2", summary: "σ(z)=clip(2−z,½,3/2), f=0, g=x; u=x, Z=1", keys: &[] },
    Entry { id: "quasilinear-tanh", summary: "σ(z)=1+0.1 tanh z, f=0.1 cos x − 0.2y, g=sin x", keys: &[] },
    Entry { id: "hedging", summary: "local vol σ(x)=0.3+0.2e^{−x²}, f=−ry, g=clip(x,0,1)", keys: &["rate"] },
    Entry { id: "drift-tanh", summary: "b=0.5 cos x, σ=1.5, f=0, g=0", keys: &[] },
    Entry { id: "barlow", summary: "b=μ, σ=σ₀(x) Barlow series, f=0, g=0", keys: &["lambda", "mu"] },
    Entry { id: "tsirelson", summary: "path drift K (dyadic), σ=1, f=0, g=0", keys: &["horizon", "depth"] },
];

/// `(id, summary)` pairs of the catalog.
pub fn catalog_ids() -> Vec<(&'static str, &'static str)> {
    ENTRIES.iter().map(|e| (e.id, e.summary)).collect()
}

fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Lipschitz bound of the truncated Barlow series over pairs at least `h`
/// apart: `Σ λⁿ min(2ⁿ, 1/(2h))`.
pub(crate) fn barlow_lipschitz(lambda: f64, h: f64) -> f64 {
    let terms = barlow_terms(lambda);
    (0..=terms).map(|n| lambda.powi(n as i32) * 2f64.powi(n as i32).min(0.5 / h)).sum()
}

pub fn problem(id: &str, params: &Params) -> Result<CoefficientSet> {
    let entry = ENTRIES.iter().find(|e| e.id == id).ok_or_else(|| Error::UnknownProblem(id.to_string()))?;
    if let Some(bad) = params.keys().find(|k| !entry.keys.contains(&k.as_str())) {
        return Err(Error::Config(format!("problem `{id}` has no parameter `{bad}`")));
    }
    let c = CoefficientSet::new(id, 1);
    let out = match id {
        "constant" => c.with_bounds(1.0, 1.0, 0.0),
        "heat-x" => c.with_terminal(|x| x[0]).with_bounds(2.0, 1.0, 1.0).with_exact(|_, _, x| x[0]),
        "heat-x2" => c
            .with_terminal(|x| x[0] * x[0])
            .with_bounds(4.0, 1.0, 4.01)
            .with_exact(|t_end, t, x| x[0] * x[0] + (t_end - t)),
        "heat-sin" => c
            .with_terminal(|x| x[0].sin())
            .with_bounds(1.0, 1.0, 1.0)
            .with_exact(|t_end, t, x| (-(t_end - t) / 2.0).exp() * x[0].sin()),
        "heat-2d" => CoefficientSet::new(id, 2)
            .with_sigma(Deps::NONE, |_, _, _, _, out| out.copy_from_slice(&[1.0, 0.3, 0.3, 1.0]))
            .with_terminal(|x| x[0] * x[0] + x[1] * x[1])
            .with_bounds(8.0, 0.7, 6.0)
            .with_exact(|t_end, t, x| x[0] * x[0] + x[1] * x[1] + 2.18 * (t_end - t)),
        "example-2.1" => c
            .with_scalar_sigma(Deps::Z, |_, _, _, z| clip(z, 0.5, 2.0))
            .with_terminal(|x| x[0])
            .with_bounds(2.0, 0.5, 1.0)
            .with_exact(|_, _, x| x[0]),
        "example-2.1-degenerate" => c
            .with_scalar_sigma(Deps::Z, |_, _, _, z| z)
            .with_terminal(|x| x[0])
            .with_bounds(2.0, 1.0, 1.0)
            .with_exact(|_, _, x| x[0]),
        "example-2.2" => c
            .with_scalar_sigma(Deps::Z, |_, _, _, z| clip(2.0 - z, 0.5, 1.5))
            .with_terminal(|x| x[0])
            .with_bounds(2.0, 0.5, 1.0)
            .with_exact(|_, _, x| x[0]),
        "quasilinear-tanh" => c
            .with_scalar_sigma(Deps::Z, |_, _, _, z| 1.0 + 0.1 * z.tanh())
            .with_driver(Deps::X | Deps::Y, |_, x, y, _| 0.1 * x[0].cos() - 0.2 * y)
            .with_terminal(|x| x[0].sin())
            .with_bounds(1.1, 0.9, 1.0),
        "hedging" => {
            let rate = param(params, "rate", 0.05);
            c.with_scalar_sigma(Deps::X, |_, x, _, _| 0.3 + 0.2 * (-x * x).exp())
                .with_driver(Deps::Y, move |_, _, y, _| -rate * y)
                .with_terminal(|x| clip(x[0], 0.0, 1.0))
                .with_bounds(1.0, 0.3, 1.0f64.max(rate))
        }
        "drift-tanh" => c
            .with_drift(Deps::X, |_, x, _, _, out| out[0] = 0.5 * x[0].cos())
            .with_scalar_sigma(Deps::NONE, |_, _, _, _| 1.5)
            .with_bounds(1.5, 1.5, 0.5),
        "barlow" => {
            let lambda = param(params, "lambda", 0.75);
            let mu = param(params, "mu", 0.0);
            PathFunctional::barlow(lambda)?;
            let terms = barlow_terms(lambda);
            let probes = ProbePlan { x: (0.0, 1.0), count: 10_000, ..ProbePlan::default() };
            let lip = barlow_lipschitz(lambda, probes.diff_step);
            let sup = (1.0 + 0.5 / (1.0 - lambda)).max(mu.abs());
            let mut c = c
                .with_scalar_sigma(Deps::X, move |_, x, _, _| barlow_series(lambda, terms, x))
                .with_bounds(sup, 1.0, lip)
                .with_probes(probes);
            if mu != 0.0 {
                c = c.with_drift(Deps::NONE, move |_, _, _, _, out| out[0] = mu);
            }
            c
        }
        "tsirelson" => {
            let horizon = param(params, "horizon", 1.0);
            let depth = param(params, "depth", TSIRELSON_DEPTH as f64);
            if !(horizon > 0.0) || depth < 1.0 || depth.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "tsirelson needs horizon > 0 and integer depth ≥ 1 (got {horizon}, {depth})"
                )));
            }
            c.with_path_drift(PathFunctional::tsirelson(horizon, depth as usize)).with_bounds(1.0, 1.0, 0.0)
        }
        _ => unreachable!("catalog entry without constructor"),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_assumptions;

    #[test]
    fn every_entry_builds_and_unknown_fails() {
        for (id, _) in catalog_ids() {
            problem(id, &Params::new()).unwrap();
        }
        assert!(matches!(problem("nope", &Params::new()), Err(Error::UnknownProblem(_))));
        let mut p = Params::new();
        p.insert("lambda".into(), 0.8);
        assert!(problem("heat-x", &p).is_err());
        assert!(problem("barlow", &p).is_ok());
    }

    #[test]
    fn catalog_problems_pass_their_declared_assumptions() {
        for id in [
            "constant",
            "heat-x",
            "heat-x2",
            "heat-sin",
            "heat-2d",
            "example-2.1",
            "example-2.2",
            "quasilinear-tanh",
            "hedging",
            "drift-tanh",
        ] {
            let c = problem(id, &Params::new()).unwrap();
            let r = validate_assumptions(&c, &c.probes).unwrap();
            assert!(r.pass(), "{id}: {:?}", r.checks);
        }
    }

    #[test]
    fn barlow_lipschitz_quotient_below_declared_bound() {
        let c = problem("barlow", &Params::new()).unwrap();
        let r = validate_assumptions(&c, &c.probes).unwrap();
        assert!(r.check("ellipticity").unwrap().pass);
        assert!(r.check("lipschitz").unwrap().pass, "{:?}", r.lipschitz_estimates);
        // brute-force dense scan of quotients at separation ≥ diff_step
        let lambda = 0.75;
        let terms = barlow_terms(lambda);
        let h = c.probes.diff_step;
        let mut worst = 0.0f64;
        for i in 0..10_000 {
            let x = i as f64 / 10_000.0;
            let q = (barlow_series(lambda, terms, x + h) - barlow_series(lambda, terms, x)).abs() / h;
            worst = worst.max(q);
        }
        assert!(worst <= c.bounds.lipschitz, "{worst} > {}", c.bounds.lipschitz);
    }
}
