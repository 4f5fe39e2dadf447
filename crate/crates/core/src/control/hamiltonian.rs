use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::path_stream;
use crate::simulate::{barlow_series, barlow_terms, BarlowTerminal, PathFunctional};

/// `(t, α) -> value`
pub type ControlFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `(t, x) -> value`
pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `x -> (∂ₓu, ∂²ₓₓu)` of a known time-independent value function.
pub type DerivativeFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// One-dimensional control problem with coefficients `b(t,α)`, `σ(t,α)` and
/// running reward `f(t,x,α) = f_control(t,α) + f_state(t,x)` over
/// `A = [control_lo, control_hi]` (a single point when the bounds agree).
#[derive(Clone)]
pub struct HamiltonianSpec {
    pub name: String,
    pub control_lo: f64,
    pub control_hi: f64,
    pub n_controls: usize,
    drift: ControlFn,
    sigma: ControlFn,
    f_control: ControlFn,
    f_state: StateFn,
    terminal: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivatives: Option<DerivativeFn>,
}

impl fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("name", &self.name)
            .field("control_lo", &self.control_lo)
            .field("control_hi", &self.control_hi)
            .field("n_controls", &self.n_controls)
            .finish_non_exhaustive()
    }
}

pub const DEFAULT_CONTROLS: usize = 64;

impl HamiltonianSpec {
    pub fn new(name: impl Into<String>, control_lo: f64, control_hi: f64, n_controls: usize) -> Result<Self> {
        if !(control_lo <= control_hi) || !control_lo.is_finite() || !control_hi.is_finite() {
            return Err(Error::Config(format!("control set [{control_lo}, {control_hi}] is empty")));
        }
        if n_controls < 2 {
            return Err(Error::Config("n_controls must be at least 2".into()));
        }
        Ok(HamiltonianSpec {
            name: name.into(),
            control_lo,
            control_hi,
            n_controls,
            drift: Arc::new(|_, _| 0.0),
            sigma: Arc::new(|_, _| 1.0),
            f_control: Arc::new(|_, _| 0.0),
            f_state: Arc::new(|_, _| 0.0),
            terminal: Arc::new(|_| 0.0),
            derivatives: None,
        })
    }

    pub fn with_drift(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_sigma(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.sigma = Arc::new(f);
        self
    }

    pub fn with_reward(
        mut self,
        control: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        state: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.f_control = Arc::new(control);
        self.f_state = Arc::new(state);
        self
    }

    pub fn with_terminal(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(g);
        self
    }

    pub fn with_derivatives(mut self, d: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        self.derivatives = Some(Arc::new(d));
        self
    }

    pub fn derivatives(&self, x: f64) -> Option<(f64, f64)> {
        self.derivatives.as_ref().map(|d| d(x))
    }

    /// The same problem over a different control interval.
    pub fn with_controls(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Config(format!("control set [{lo}, {hi}] is empty")));
        }
        self.control_lo = lo;
        self.control_hi = hi;
        Ok(self)
    }

    #[inline]
    pub fn drift(&self, t: f64, alpha: f64) -> f64 {
        (self.drift)(t, alpha)
    }

    #[inline]
    pub fn sigma(&self, t: f64, alpha: f64) -> f64 {
        (self.sigma)(t, alpha)
    }

    #[inline]
    pub fn reward(&self, t: f64, x: f64, alpha: f64) -> f64 {
        (self.f_control)(t, alpha) + (self.f_state)(t, x)
    }

    #[inline]
    pub fn reward_control(&self, t: f64, alpha: f64) -> f64 {
        (self.f_control)(t, alpha)
    }

    #[inline]
    pub fn reward_state(&self, t: f64, x: f64) -> f64 {
        (self.f_state)(t, x)
    }

    #[inline]
    pub fn terminal(&self, x: f64) -> f64 {
        (self.terminal)(x)
    }

    pub fn is_singleton(&self) -> bool {
        self.control_lo == self.control_hi
    }
}

/// Catalog of control problems: `drift-k`, `diffusion-barlow`, `singleton`.
pub fn hamiltonian_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("drift-k", "b=α, σ=1, f=−½(α−k)², A=[k−2,k+2], g=0"),
        ("diffusion-barlow", "b=0, σ=α, f=−¼(α⁴+σ₀⁴), A=[1, 1+½/(1−λ)], g=∫∫σ₀²"),
        ("singleton", "A={1}, b=α, σ=α, f=−α²/2"),
    ]
}

pub fn hamiltonian_spec(id: &str, params: &BTreeMap<String, f64>) -> Result<HamiltonianSpec> {
    let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
    let allowed: &[&str] = match id {
        "drift-k" => &["k", "n_controls"],
        "diffusion-barlow" => &["lambda", "control_hi", "n_controls"],
        "singleton" => &["n_controls"],
        _ => return Err(Error::UnknownProblem(id.to_string())),
    };
    if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::Config(format!("control problem `{id}` has no parameter `{bad}`")));
    }
    let n = get("n_controls", DEFAULT_CONTROLS as f64);
    if n < 2.0 || n.fract() != 0.0 {
        return Err(Error::Config(format!("n_controls must be an integer ≥ 2, got {n}")));
    }
    let n = n as usize;
    match id {
        "drift-k" => {
            let k = get("k", 0.3);
            Ok(HamiltonianSpec::new(id, k - 2.0, k + 2.0, n)?
                .with_drift(|_, a| a)
                .with_reward(move |_, a| -0.5 * (a - k) * (a - k), |_, _| 0.0))
        }
        "diffusion-barlow" => {
            let lambda = get("lambda", 0.75);
            PathFunctional::barlow(lambda)?;
            let hi = get("control_hi", 1.0 + 0.5 / (1.0 - lambda));
            let terms = barlow_terms(lambda);
            let g = BarlowTerminal::new(lambda)?;
            let gd = g.clone();
            Ok(HamiltonianSpec::new(id, 1.0, hi, n)?
                .with_drift(|_, _| 0.0)
                .with_sigma(|_, a| a)
                .with_reward(|_, a| -0.25 * a.powi(4), move |_, x| -0.25 * barlow_series(lambda, terms, x).powi(4))
                .with_terminal(move |x| g.value(x))
                .with_derivatives(move |x| (gd.first_integral(x), barlow_series(lambda, terms, x).powi(2))))
        }
        "singleton" => Ok(HamiltonianSpec::new(id, 1.0, 1.0, n)?
            .with_drift(|_, a| a)
            .with_sigma(|_, a| a)
            .with_reward(|_, a| -0.5 * a * a, |_, _| 0.0)),
        _ => unreachable!(),
    }
}

const GOLDEN_ITERS: usize = 100;

/// Sup over the discretised control set refined by golden-section search
/// around the discrete argmax. Ties go to the smallest control.
pub fn maximize(lo: f64, hi: f64, n: usize, objective: impl Fn(f64) -> f64) -> (f64, f64) {
    if lo == hi {
        return (objective(lo), lo);
    }
    let step = (hi - lo) / (n - 1) as f64;
    let point = |j: usize| if j + 1 == n { hi } else { lo + j as f64 * step };
    let mut best = (objective(lo), lo, 0usize);
    for j in 1..n {
        let a = point(j);
        let v = objective(a);
        if v > best.0 {
            best = (v, a, j);
        }
    }
    let (mut a, mut b) = (point(best.2.saturating_sub(1)), point((best.2 + 1).min(n - 1)));
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..GOLDEN_ITERS {
        if (b - a) <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let refined = if fc >= fd { c } else { d };
    let value = objective(refined);
    if value > best.0 {
        (value, refined)
    } else {
        (best.0, best.1)
    }
}

/// `H(t,z,γ) = sup_α [½σ²γ + bz + f]`.
pub fn hamiltonian_h(spec: &HamiltonianSpec, t: f64, x: f64, z: f64, gamma: f64) -> (f64, f64) {
    let state = spec.reward_state(t, x);
    let (v, a) = maximize(spec.control_lo, spec.control_hi, spec.n_controls, |a| {
        let s = spec.sigma(t, a);
        0.5 * s * s * gamma + spec.drift(t, a) * z + spec.reward_control(t, a)
    });
    (v + state, a)
}

/// `H̃(t,ỹ,z̃) = sup_α [ỹb + z̃σ + f]`.
pub fn hamiltonian_tilde(spec: &HamiltonianSpec, t: f64, x: f64, y_t: f64, z_t: f64) -> (f64, f64) {
    let state = spec.reward_state(t, x);
    let (v, a) = maximize(spec.control_lo, spec.control_hi, spec.n_controls, |a| {
        y_t * spec.drift(t, a) + z_t * spec.sigma(t, a) + spec.reward_control(t, a)
    });
    (v + state, a)
}

/// `Ĥ(t,ŷ,ẑ) = sup_α [ŷb + ½ẑσ² + f]`.
pub fn hamiltonian_hat(spec: &HamiltonianSpec, t: f64, x: f64, y_hat: f64, z_hat: f64) -> (f64, f64) {
    let state = spec.reward_state(t, x);
    let (v, a) = maximize(spec.control_lo, spec.control_hi, spec.n_controls, |a| {
        let s = spec.sigma(t, a);
        y_hat * spec.drift(t, a) + 0.5 * z_hat * s * s + spec.reward_control(t, a)
    });
    (v + state, a)
}

/// `f*(t,z) = sup_α [zb + f]`.
pub fn f_star(spec: &HamiltonianSpec, t: f64, x: f64, z: f64) -> (f64, f64) {
    let state = spec.reward_state(t, x);
    let (v, a) = maximize(spec.control_lo, spec.control_hi, spec.n_controls, |a| {
        z * spec.drift(t, a) + spec.reward_control(t, a)
    });
    (v + state, a)
}

/// `(ŷ, ẑ) = (ỹ, z̃/σ)` for `σ > 0`.
pub fn adjoint_transform(sigma: f64, tilde_y: f64, tilde_z: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSigma(sigma));
    }
    Ok((tilde_y, tilde_z / sigma))
}

/// One probe of the three Hamiltonians at `(t, x, z, γ)`. `H̃` is taken at
/// `(ỹ, z̃) = (z, γ·σ(α*))` with `α*` the argmax of `H`, which is where the
/// strong-formulation adjoint pair sits along an optimal path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianProbe {
    pub t: f64,
    pub x: f64,
    pub z: f64,
    pub gamma: f64,
    pub h: f64,
    pub h_hat: f64,
    pub h_tilde: f64,
    pub argmax: f64,
}

impl HamiltonianProbe {
    pub fn hat_gap(&self) -> f64 {
        (self.h_hat - self.h).abs()
    }

    pub fn tilde_gap(&self) -> f64 {
        (self.h_tilde - self.h).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianTable {
    pub spec: String,
    pub probes: Vec<HamiltonianProbe>,
    pub max_hat_gap: f64,
    /// fraction of probes with `|H̃ − H| > tol`
    pub tilde_fraction: f64,
    pub tilde_tol: f64,
}

pub const TILDE_GAP_TOL: f64 = 1e-3;

/// Probes drawn uniformly: `t ∈ [0, 1]`, `x ∈ [−2, 2]`, and `(z, γ)` either
/// from the spec's known solution at `x` or uniformly from `[−2, 2]²`.
pub fn probe_hamiltonians(spec: &HamiltonianSpec, count: usize, seed: u64) -> HamiltonianTable {
    let probes: Vec<HamiltonianProbe> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(seed, i);
            let t = rng.random_range(0.0..1.0);
            let x = rng.random_range(-2.0..2.0);
            let (z, gamma) =
                spec.derivatives(x).unwrap_or_else(|| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            let (h, argmax) = hamiltonian_h(spec, t, x, z, gamma);
            let (h_hat, _) = hamiltonian_hat(spec, t, x, z, gamma);
            let (h_tilde, _) = hamiltonian_tilde(spec, t, x, z, gamma * spec.sigma(t, argmax));
            HamiltonianProbe { t, x, z, gamma, h, h_hat, h_tilde, argmax }
        })
        .collect();
    let max_hat_gap = probes.iter().map(HamiltonianProbe::hat_gap).fold(0.0, f64::max);
    let over = probes.iter().filter(|p| p.tilde_gap() > TILDE_GAP_TOL).count();
    HamiltonianTable {
        spec: spec.name.clone(),
        tilde_fraction: if count == 0 { 0.0 } else { over as f64 / count as f64 },
        probes,
        max_hat_gap,
        tilde_tol: TILDE_GAP_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn singleton_returns_integrand() {
        let s = hamiltonian_spec("singleton", &params()).unwrap();
        let (v, a) = hamiltonian_h(&s, 0.0, 0.0, 0.7, 2.0);
        assert_eq!(a, 1.0);
        assert!((v - (0.5 * 2.0 + 0.7 - 0.5)).abs() < 1e-15);
        let (vt, _) = hamiltonian_tilde(&s, 0.0, 0.0, 0.7, 2.0);
        assert!((vt - (0.7 + 2.0 - 0.5)).abs() < 1e-15);
        let (vh, _) = hamiltonian_hat(&s, 0.0, 0.0, 0.7, 2.0);
        assert_eq!(vh, v);
    }

    #[test]
    fn drift_spec_completes_the_square() {
        let k = 0.3;
        let s = hamiltonian_spec("drift-k", &params()).unwrap();
        for &(z, g) in &[(0.0, 0.0), (1.2, -0.4), (-1.9, 3.0)] {
            let (v, a) = hamiltonian_h(&s, 0.0, 0.0, z, g);
            assert!((v - (0.5 * g + k * z + 0.5 * z * z)).abs() < 1e-12, "z={z}");
            assert!((a - (k + z)).abs() < 1e-6);
            let (vt, _) = hamiltonian_tilde(&s, 0.0, 0.0, z, g);
            assert!((vt - (g + k * z + 0.5 * z * z)).abs() < 1e-12);
            let (fs, af) = f_star(&s, 0.0, 0.0, z);
            assert!((fs - (k * z + 0.5 * z * z)).abs() < 1e-12);
            assert!((af - (k + z)).abs() < 1e-6);
        }
        let (f0, a0) = f_star(&s, 0.0, 0.0, 0.0);
        assert!(f0.abs() < 1e-15 && (a0 - k).abs() < 1e-6);
    }

    #[test]
    fn barlow_spec_vanishes_at_sigma_squared() {
        let s = hamiltonian_spec("diffusion-barlow", &params()).unwrap();
        let terms = barlow_terms(0.75);
        for x in [0.1, 0.37, 0.5, 0.8] {
            let s0 = barlow_series(0.75, terms, x);
            let (v, a) = hamiltonian_h(&s, 0.0, x, 0.0, s0 * s0);
            assert!(v.abs() < 1e-12, "x={x} v={v}");
            assert!((a - s0).abs() < 1e-6);
        }
    }

    #[test]
    fn adjoint_transform_examples() {
        assert_eq!(adjoint_transform(1.0, 0.3, -0.7).unwrap(), (0.3, -0.7));
        assert_eq!(adjoint_transform(2.0, 1.0, 4.0).unwrap(), (1.0, 2.0));
        assert!(matches!(adjoint_transform(0.0, 1.0, 1.0), Err(Error::DegenerateSigma(_))));
    }

    #[test]
    fn argmax_ties_take_the_smallest_control() {
        let (v, a) = maximize(-1.0, 1.0, 5, |_| 2.0);
        assert_eq!((v, a), (2.0, -1.0));
    }

    #[test]
    fn catalog_rejects_unknown_params() {
        let mut p = params();
        p.insert("lambda".into(), 0.8);
        assert!(hamiltonian_spec("drift-k", &p).is_err());
        assert!(hamiltonian_spec("nope", &params()).is_err());
        assert!(hamiltonian_spec("diffusion-barlow", &p).is_ok());
    }

    #[test]
    fn barlow_tilde_gap_is_half_sigma_fourth() {
        let s = hamiltonian_spec("diffusion-barlow", &params()).unwrap();
        let table = probe_hamiltonians(&s, 200, 5);
        assert!(table.max_hat_gap <= 1e-8);
        assert_eq!(table.tilde_fraction, 1.0);
        for p in &table.probes {
            let s0 = barlow_series(0.75, barlow_terms(0.75), p.x);
            // H = 0 on the classical solution; H̃ = sup[σ₀³α − α⁴/4] − σ₀⁴/4
            assert!(p.h.abs() < 1e-9, "{p:?}");
            // z̃ inherits the argmax error, which is of order √ε
            assert!((p.tilde_gap() - 0.5 * s0.powi(4)).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn drift_probes_match_closed_forms() {
        let s = hamiltonian_spec("drift-k", &params()).unwrap();
        let table = probe_hamiltonians(&s, 100, 2);
        for p in &table.probes {
            let h = 0.5 * p.gamma + 0.3 * p.z + 0.5 * p.z * p.z;
            assert!((p.h - h).abs() < 1e-10);
            // σ = 1: H̃ = γ + kz + z²/2
            assert!((p.h_tilde - (p.gamma + 0.3 * p.z + 0.5 * p.z * p.z)).abs() < 1e-10);
        }
    }
}
