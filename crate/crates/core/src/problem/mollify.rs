//! Smoothing by a C∞ bump kernel.
//!
//! The convolution is evaluated as a normalised kernel-weighted sum over a
//! fixed lattice in absolute coordinates. Because the weights are smooth in
//! the evaluation point and the lattice does not move with it, the result is
//! itself C∞, reproduces constants exactly, and costs a fixed number of
//! coefficient evaluations per call.

use std::sync::Arc;

use super::validate::probe_points;
use super::{CoefficientSet, Deps, Probe, ScalarFn, TerminalFn, VecFn};
use crate::error::{Error, Result};

/// Lattice nodes per kernel half-width.
pub const MOLLIFIER_NODES: usize = 8;

const MAX_DOUBLINGS: usize = 6;
const MAX_HALVINGS: usize = 40;
/// Sampled error must stay below this fraction of the target, leaving room
/// for points the probe set did not visit.
const SAFETY: f64 = 0.5;

fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// Normalised lattice weights around `centre` for bandwidth `h`.
fn axis_weights(centre: f64, h: f64) -> Vec<(f64, f64)> {
    let step = h / MOLLIFIER_NODES as f64;
    let lo = ((centre - h) / step).floor() as i64;
    let hi = ((centre + h) / step).ceil() as i64;
    let mut out: Vec<(f64, f64)> = (lo..=hi)
        .map(|j| {
            let s = j as f64 * step;
            (s, bump((centre - s) / h))
        })
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

/// Flattened argument layout `[t, x₀.., y, z₀..]`.
#[derive(Clone, Copy)]
struct Layout {
    dim: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 + 2 * self.dim
    }

    fn active(&self, deps: Deps) -> Vec<usize> {
        let mut axes = Vec::new();
        if deps.contains(Deps::T) {
            axes.push(0);
        }
        if deps.contains(Deps::X) {
            axes.extend(1..=self.dim);
        }
        if deps.contains(Deps::Y) {
            axes.push(1 + self.dim);
        }
        if deps.contains(Deps::Z) {
            axes.extend(2 + self.dim..2 + 2 * self.dim);
        }
        axes
    }

    fn pack(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(t);
        v.extend_from_slice(x);
        v.push(y);
        v.extend_from_slice(z);
        v
    }
}

/// Kernel average of `eval` over the active axes; `eval` accumulates
/// `weight · F(point)` into `acc`.
fn smooth_at(point: &[f64], axes: &[usize], h: f64, mut eval: impl FnMut(&[f64], f64)) {
    let tables: Vec<Vec<(f64, f64)>> = axes.iter().map(|&a| axis_weights(point[a], h)).collect();
    let mut idx = vec![0usize; axes.len()];
    let mut q = point.to_vec();
    loop {
        let mut w = 1.0;
        for (k, &a) in axes.iter().enumerate() {
            let (s, wk) = tables[k][idx[k]];
            q[a] = s;
            w *= wk;
        }
        eval(&q, w);
        // odometer
        let mut k = 0;
        loop {
            if k == axes.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < tables[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn smooth_vec(f: VecFn, deps: Deps, dim: usize, width: usize, h: f64) -> VecFn {
    let layout = Layout { dim };
    let axes = layout.active(deps);
    Arc::new(move |t, x, y, z, out: &mut [f64]| {
        let p = layout.pack(t, x, y, z);
        let mut tmp = vec![0.0; width];
        out.fill(0.0);
        smooth_at(&p, &axes, h, |q, w| {
            f(q[0], &q[1..=dim], q[1 + dim], &q[2 + dim..], &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * v;
            }
        });
    })
}

fn smooth_scalar(f: ScalarFn, deps: Deps, dim: usize, h: f64) -> ScalarFn {
    let layout = Layout { dim };
    let axes = layout.active(deps);
    Arc::new(move |t, x, y, z| {
        let p = layout.pack(t, x, y, z);
        let mut acc = 0.0;
        smooth_at(&p, &axes, h, |q, w| {
            acc += w * f(q[0], &q[1..=dim], q[1 + dim], &q[2 + dim..]);
        });
        acc
    })
}

fn smooth_terminal(g: TerminalFn, dim: usize, h: f64) -> TerminalFn {
    let axes: Vec<usize> = (0..dim).collect();
    Arc::new(move |x| {
        let mut acc = 0.0;
        smooth_at(x, &axes, h, |q, w| acc += w * g(q));
        acc
    })
}

/// Doubling/halving search for the largest bandwidth meeting `target`.
fn search<T>(n: usize, target: f64, build: impl Fn(f64) -> T, error: impl Fn(&T) -> f64) -> Result<(f64, T)> {
    let mut h = 1.0 / n as f64;
    let first = build(h);
    let e = error(&first);
    if e <= SAFETY * target {
        let mut best = (h, first);
        for _ in 0..MAX_DOUBLINGS {
            let cand_h = best.0 * 2.0;
            let cand = build(cand_h);
            if error(&cand) <= SAFETY * target {
                best = (cand_h, cand);
            } else {
                break;
            }
        }
        return Ok(best);
    }
    let mut last = e;
    for _ in 0..MAX_HALVINGS {
        h *= 0.5;
        let cand = build(h);
        last = error(&cand);
        if last <= SAFETY * target {
            return Ok((h, cand));
        }
    }
    Err(Error::Mollification(format!("no bandwidth meets target {target:e}; last sampled error {last:e} at h={h:e}")))
}

/// Mollify `σ` (to within `eps_n`), `f` and `g` (to within `1/n`) on the
/// coefficient's probe box. Only arguments a coefficient reads are smoothed;
/// the drift is left untouched.
pub fn mollify(coeffs: &CoefficientSet, n: usize, eps_n: f64) -> Result<CoefficientSet> {
    if n == 0 || !(eps_n > 0.0) {
        return Err(Error::Domain(format!("mollify needs n ≥ 1 and eps_n > 0 (n={n}, eps_n={eps_n})")));
    }
    let d = coeffs.dim();
    let mut plan = coeffs.probes.clone();
    plan.count = plan.count.max(2000);
    let probes: Vec<Probe> = probe_points(&plan, d);
    let tol_f = 1.0 / n as f64;
    let mut out = coeffs.clone();

    let sigma = if coeffs.sigma_deps().is_empty() {
        None
    } else {
        let base = coeffs.sigma_fn().clone();
        let deps = coeffs.sigma_deps();
        let exact: Vec<Vec<f64>> = probes
            .iter()
            .map(|p| {
                let mut m = vec![0.0; d * d];
                base(p.t, &p.x, p.y, &p.z, &mut m);
                m
            })
            .collect();
        let (_, f) = search(
            n,
            eps_n,
            |h| smooth_vec(base.clone(), deps, d, d * d, h),
            |cand| {
                let mut m = vec![0.0; d * d];
                probes.iter().zip(&exact).fold(0.0f64, |worst, (p, e)| {
                    cand(p.t, &p.x, p.y, &p.z, &mut m);
                    let diff = m.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    worst.max(diff)
                })
            },
        )?;
        Some((f, deps))
    };

    let driver = if coeffs.driver_deps().is_empty() {
        None
    } else {
        let base = coeffs.driver_fn().clone();
        let deps = coeffs.driver_deps();
        let exact: Vec<f64> = probes.iter().map(|p| base(p.t, &p.x, p.y, &p.z)).collect();
        let (_, f) = search(
            n,
            tol_f,
            |h| smooth_scalar(base.clone(), deps, d, h),
            |cand| probes.iter().zip(&exact).fold(0.0f64, |w, (p, e)| w.max((cand(p.t, &p.x, p.y, &p.z) - e).abs())),
        )?;
        Some((f, deps))
    };

    let terminal = if !coeffs.terminal_varies() {
        None
    } else {
        let base = coeffs.terminal_fn().clone();
        let exact: Vec<f64> = probes.iter().map(|p| base(&p.x)).collect();
        let (_, g) = search(
            n,
            tol_f,
            |h| smooth_terminal(base.clone(), d, h),
            |cand| probes.iter().zip(&exact).fold(0.0f64, |w, (p, e)| w.max((cand(&p.x) - e).abs())),
        )?;
        Some(g)
    };

    let smoothed_any = sigma.is_some() || driver.is_some() || terminal.is_some();
    out.set_raw(None, sigma, driver, terminal);
    if smoothed_any {
        out.drop_exact();
    }
    out.bounds.sup += eps_n.max(tol_f);
    out.bounds.ellipticity -= eps_n;
    Ok(out.renamed(format!("{}~n{}", coeffs.name(), n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{problem, Params};

    #[test]
    fn constants_are_reproduced() {
        let w = axis_weights(0.123, 0.05);
        let total: f64 = w.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(w.len() >= 2 * MOLLIFIER_NODES - 1);
    }

    #[test]
    fn smooth_input_is_preserved_within_one_over_n() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let m = mollify(&c, 7, 1e-3).unwrap();
        for i in 0..=40 {
            let x = -2.0 + 0.1 * i as f64;
            assert!((m.terminal(&[x]) - x).abs() <= 1.0 / 7.0);
            assert_eq!(m.sigma_matrix(0.3, &[x], 0.0, &[0.0]), vec![1.0]);
        }
    }

    #[test]
    fn absolute_value_is_smoothed() {
        let c = CoefficientSet::new("abs", 1).with_terminal(|x| x[0].abs());
        let m = mollify(&c, 10, 1e-3).unwrap();
        for i in 0..=400 {
            let x = -2.0 + 0.01 * i as f64;
            assert!((m.terminal(&[x]) - x.abs()).abs() <= 0.1);
        }
        // no kink at the origin: one-sided slopes agree
        let h = 1e-4;
        let left = (m.terminal(&[0.0]) - m.terminal(&[-h])) / h;
        let right = (m.terminal(&[h]) - m.terminal(&[0.0])) / h;
        assert!((left - right).abs() < 1e-2, "{left} {right}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let c = problem("constant", &Params::new()).unwrap();
        assert!(mollify(&c, 0, 0.1).is_err());
        assert!(mollify(&c, 3, 0.0).is_err());
    }
}
