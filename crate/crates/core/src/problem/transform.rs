use std::sync::Arc;

use super::validate::probe_points;
use super::{CoefficientSet, Deps, ScalarFn, TerminalFn, VecFn};
use crate::error::{Error, Result};
use crate::linalg::solve_small;

/// Shift the driver by `(2α−1)·2/n` and the terminal value by `(2α−1)/n`:
/// α = 1 gives the upper branch, α = 0 the lower one, α = ½ no shift.
pub fn shift_coefficients(coeffs: &CoefficientSet, n: usize, alpha: f64) -> Result<CoefficientSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("shift alpha {alpha} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::Domain("shift index n must be positive".into()));
    }
    let scale = 2.0 * alpha - 1.0;
    let df = scale * 2.0 / n as f64;
    let dg = scale / n as f64;
    let mut out = coeffs.clone();
    let f = coeffs.driver_fn().clone();
    let g = coeffs.terminal_fn().clone();
    let driver: ScalarFn = Arc::new(move |t, x, y, z| f(t, x, y, z) + df);
    let terminal: TerminalFn = Arc::new(move |x| g(x) + dg);
    out.set_raw(None, None, Some((driver, coeffs.driver_deps())), Some(terminal));
    out.drop_exact();
    Ok(out.renamed(format!("{}+shift({alpha})", coeffs.name())))
}

/// Girsanov kernel `θ(t, x, y, z) = −σ⁻¹ b`.
pub type DriftKernel = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Remove the drift by a change of measure: returns the coefficients with
/// `b ≡ 0` (driver unchanged) and the kernel `θ = −σ⁻¹b`.
pub fn remove_drift(coeffs: &CoefficientSet) -> Result<(CoefficientSet, DriftKernel)> {
    let d = coeffs.dim();
    for p in probe_points(&coeffs.probes, d) {
        let s = coeffs.sigma_matrix(p.t, &p.x, p.y, &p.z);
        if solve_small(&s, d, &vec![1.0; d]).is_none() {
            return Err(Error::Ellipticity(format!("σ is singular at probe {p}")));
        }
    }
    let b = coeffs.drift_fn().clone();
    let s = coeffs.sigma_fn().clone();
    let kernel: DriftKernel = Arc::new(move |t, x, y, z| {
        let mut drift = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        b(t, x, y, z, &mut drift);
        if drift.iter().all(|v| *v == 0.0) {
            return drift;
        }
        s(t, x, y, z, &mut sigma);
        let theta = solve_small(&sigma, d, &drift).unwrap_or_else(|| vec![f64::NAN; d]);
        theta.into_iter().map(|v| -v).collect()
    });
    let zero: VecFn = Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0));
    let mut out = coeffs.clone();
    out.set_raw(Some((zero, Deps::NONE)), None, None, None);
    Ok((out.renamed(format!("{}/driftless", coeffs.name())), kernel))
}

/// Strong-form coefficients `(b̃, σ̃, f̃)` and the inverse `ψ` of `z ↦ zσ`.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
pub enum StrongForm {
    Invertible {
        coeffs: CoefficientSet,
        psi: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
    },
    /// `z ↦ zσ(t,x,y,z)` fails to be monotone on `[z_lo, z_hi]` at `(t, x, y)`.
    NotInvertible {
        t: f64,
        x: f64,
        y: f64,
        z_lo: f64,
        z_hi: f64,
    },
}

impl std::fmt::Debug for StrongForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StrongForm::Invertible { coeffs, .. } => f.debug_struct("Invertible").field("coeffs", coeffs).finish(),
            StrongForm::NotInvertible { t, x, y, z_lo, z_hi } => f
                .debug_struct("NotInvertible")
                .field("t", t)
                .field("x", x)
                .field("y", y)
                .field("z_lo", z_lo)
                .field("z_hi", z_hi)
                .finish(),
        }
    }
}

const MONOTONE_SAMPLES: usize = 401;
const PROBE_POINTS: usize = 200;

fn bisect_inverse(h: impl Fn(f64) -> f64, target: f64, start: (f64, f64)) -> f64 {
    let (mut lo, mut hi) = start;
    let mut expand = 0;
    while h(lo) > target && expand < 200 {
        lo -= (hi - lo).max(1.0);
        expand += 1;
    }
    while h(hi) < target && expand < 400 {
        hi += (hi - lo).max(1.0);
        expand += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rewrite a one-dimensional weak FBSDE in strong form by inverting
/// `z ↦ zσ(t, x, y, z)` over the probe range of z.
pub fn weak_to_strong(coeffs: &CoefficientSet) -> Result<StrongForm> {
    if coeffs.dim() != 1 {
        return Err(Error::Domain("weak_to_strong is defined for d = 1".into()));
    }
    let plan = &coeffs.probes;
    let mut short = plan.clone();
    short.count = PROBE_POINTS;
    let (z_lo, z_hi) = plan.z;
    let s = coeffs.sigma_fn().clone();
    let h = move |t: f64, x: f64, y: f64, z: f64| {
        let mut m = [0.0];
        s(t, &[x], y, &[z], &mut m);
        z * m[0]
    };
    for p in probe_points(&short, 1) {
        let step = (z_hi - z_lo) / (MONOTONE_SAMPLES - 1) as f64;
        let mut prev = h(p.t, p.x[0], p.y, z_lo);
        for k in 1..MONOTONE_SAMPLES {
            let z = z_lo + k as f64 * step;
            let cur = h(p.t, p.x[0], p.y, z);
            if !(cur > prev) {
                return Ok(StrongForm::NotInvertible { t: p.t, x: p.x[0], y: p.y, z_lo: z - step, z_hi: z });
            }
            prev = cur;
        }
    }
    let hh = h.clone();
    let psi = Arc::new(move |t: f64, x: f64, y: f64, zt: f64| bisect_inverse(|z| hh(t, x, y, z), zt, (z_lo, z_hi)));
    let deps = coeffs.drift_deps() | coeffs.sigma_deps() | coeffs.driver_deps() | Deps::Z;
    let (b, sg, f) = (coeffs.drift_fn().clone(), coeffs.sigma_fn().clone(), coeffs.driver_fn().clone());
    let p1 = psi.clone();
    let drift: VecFn = Arc::new(move |t, x, y, z, out: &mut [f64]| {
        let z0 = p1(t, x[0], y, z[0]);
        b(t, x, y, &[z0], out)
    });
    let p2 = psi.clone();
    let sigma: VecFn = Arc::new(move |t, x, y, z, out: &mut [f64]| {
        let z0 = p2(t, x[0], y, z[0]);
        sg(t, x, y, &[z0], out)
    });
    let p3 = psi.clone();
    let b2 = coeffs.drift_fn().clone();
    let driver: ScalarFn = Arc::new(move |t, x, y, z| {
        let z0 = p3(t, x[0], y, z[0]);
        let mut bt = [0.0];
        b2(t, x, y, &[z0], &mut bt);
        f(t, x, y, &[z0]) - z0 * bt[0]
    });
    let mut out = coeffs.clone();
    out.set_raw(Some((drift, deps)), Some((sigma, deps)), Some((driver, deps)), None);
    out.drop_exact();
    Ok(StrongForm::Invertible { coeffs: out.renamed(format!("{}/strong", coeffs.name())), psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{problem, Params};

    #[test]
    fn shift_examples() {
        let c = problem("heat-x", &Params::new()).unwrap();
        let mid = shift_coefficients(&c, 4, 0.5).unwrap();
        let up = shift_coefficients(&c, 4, 1.0).unwrap();
        let down = shift_coefficients(&c, 4, 0.0).unwrap();
        let (x, z) = ([0.7], [0.1]);
        assert_eq!(mid.driver(0.2, &x, 0.0, &z), c.driver(0.2, &x, 0.0, &z));
        assert_eq!(mid.terminal(&x), c.terminal(&x));
        assert!((up.driver(0.2, &x, 0.0, &z) - 0.5).abs() < 1e-15);
        assert!((up.terminal(&x) - 0.95).abs() < 1e-15);
        assert!((down.driver(0.2, &x, 0.0, &z) + 0.5).abs() < 1e-15);
        assert!((down.terminal(&x) - 0.45).abs() < 1e-15);
        assert!(shift_coefficients(&c, 4, 1.5).is_err());
    }

    #[test]
    fn remove_drift_examples() {
        let zero = problem("constant", &Params::new()).unwrap();
        let (_, k) = remove_drift(&zero).unwrap();
        assert_eq!(k(0.1, &[0.3], 0.0, &[0.0]), vec![0.0]);

        let c = CoefficientSet::new("b1s2", 1)
            .with_drift(Deps::NONE, |_, _, _, _, out| out[0] = 1.0)
            .with_scalar_sigma(Deps::NONE, |_, _, _, _| 2.0);
        let (driftless, k) = remove_drift(&c).unwrap();
        assert_eq!(k(0.5, &[1.0], 0.0, &[0.0]), vec![-0.5]);
        assert_eq!(driftless.drift_vector(0.5, &[1.0], 0.0, &[0.0]), vec![0.0]);
    }

    #[test]
    fn remove_drift_rejects_singular_sigma() {
        let c = problem("example-2.1-degenerate", &Params::new()).unwrap();
        assert!(matches!(remove_drift(&c), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn strong_form_constant_sigma() {
        let c = CoefficientSet::new("s2", 1)
            .with_drift(Deps::NONE, |_, _, _, _, out| out[0] = 0.3)
            .with_scalar_sigma(Deps::NONE, |_, _, _, _| 2.0)
            .with_driver(Deps::Z, |_, _, _, z| z[0] * z[0]);
        let StrongForm::Invertible { coeffs, psi } = weak_to_strong(&c).unwrap() else {
            panic!("expected invertible");
        };
        assert!((psi(0.0, 0.0, 0.0, 3.0) - 1.5).abs() < 1e-12);
        let ft = coeffs.driver(0.0, &[0.0], 0.0, &[3.0]);
        assert!((ft - (1.5 * 1.5 - 1.5 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn strong_form_example_2_1_is_not_invertible() {
        let c = problem("example-2.1-degenerate", &Params::new()).unwrap();
        assert!(matches!(weak_to_strong(&c).unwrap(), StrongForm::NotInvertible { .. }));
    }

    #[test]
    fn strong_form_tanh_inverse_by_bisection() {
        let c = problem("quasilinear-tanh", &Params::new()).unwrap();
        let StrongForm::Invertible { psi, .. } = weak_to_strong(&c).unwrap() else {
            panic!("expected invertible");
        };
        assert!(psi(0.0, 0.0, 0.0, 0.0).abs() < 1e-12);
        // independent oracle: plain bisection on z(1 + 0.1 tanh z)
        let target = 1.3;
        let (mut lo, mut hi) = (-5.0f64, 5.0f64);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if m * (1.0 + 0.1 * m.tanh()) < target {
                lo = m
            } else {
                hi = m
            }
        }
        assert!((psi(0.0, 0.0, 0.0, target) - lo).abs() < 1e-10);
    }
}
