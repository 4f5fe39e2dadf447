//! Path functionals: the Tsirelson drift `K`, the Barlow diffusion
//! coefficient `σ₀`, and the Barlow terminal function `g(x) = ∫₀ˣ∫₀^s σ₀²`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fractional part `θ(x) = x − ⌊x⌋ ∈ [0, 1)`.
#[inline]
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    // x − ⌊x⌋ can round up to 1.0 for tiny negative x
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Tent `η(θ(x))`: distance from `x` to the nearest integer.
#[inline]
pub fn tent(x: f64) -> f64 {
    let r = frac(x);
    if r < 0.5 {
        r
    } else {
        1.0 - r
    }
}

/// Scalar sampled path on a uniform grid starting at time 0.
#[derive(Debug, Clone, Copy)]
pub struct PathPrefix<'a> {
    pub dt: f64,
    pub values: &'a [f64],
}

impl PathPrefix<'_> {
    /// Linear interpolation of the stored samples.
    pub fn at(&self, s: f64) -> f64 {
        let last = self.values.len() - 1;
        let pos = (s / self.dt).max(0.0);
        let k = (pos.floor() as usize).min(last);
        if k >= last {
            return self.values[last];
        }
        let w = pos - k as f64;
        if w == 0.0 {
            self.values[k]
        } else {
            self.values[k] + w * (self.values[k + 1] - self.values[k])
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }
}

pub type CustomFunctional = Arc<dyn Fn(f64, &PathPrefix<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PathFunctional {
    /// `K(t, x) = θ((x(tₙ) − x(tₙ₊₁)) / (tₙ − tₙ₊₁))` for `t ∈ [tₙ, tₙ₋₁)`.
    Tsirelson {
        partition: Vec<f64>,
    },
    /// `σ₀(x) = 1 + Σ_{n ≤ terms} λⁿ η(θ(2ⁿx))`.
    BarlowSigma {
        lambda: f64,
        terms: usize,
    },
    Custom {
        name: String,
        eval: CustomFunctional,
    },
}

impl std::fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathFunctional::Tsirelson { partition } => {
                f.debug_struct("Tsirelson").field("levels", &partition.len()).finish()
            }
            PathFunctional::BarlowSigma { lambda, terms } => {
                f.debug_struct("BarlowSigma").field("lambda", lambda).field("terms", terms).finish()
            }
            PathFunctional::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

/// Dyadic depth used for the Tsirelson partition `tₙ = T·2⁻ⁿ`.
pub const TSIRELSON_DEPTH: usize = 20;

/// Tail bound target for the truncated Barlow series.
pub const BARLOW_TAIL: f64 = 1e-8;

impl PathFunctional {
    /// Dyadic Tsirelson partition `t₀ = T > t₁ > … > t_depth`.
    pub fn tsirelson(t_end: f64, depth: usize) -> Self {
        let partition = (0..=depth).map(|n| t_end * 0.5f64.powi(n as i32)).collect();
        PathFunctional::Tsirelson { partition }
    }

    /// Tsirelson functional on a user partition; it must start at `T` and
    /// decrease strictly towards 0.
    pub fn tsirelson_with_partition(partition: Vec<f64>) -> Result<Self> {
        if partition.len() < 2 {
            return Err(Error::Domain("Tsirelson partition needs at least two points".into()));
        }
        if partition.windows(2).any(|w| !(w[1] < w[0]) || w[1] <= 0.0) {
            return Err(Error::Domain("Tsirelson partition must be strictly decreasing and positive".into()));
        }
        Ok(PathFunctional::Tsirelson { partition })
    }

    pub fn barlow(lambda: f64) -> Result<Self> {
        if !(lambda > std::f64::consts::FRAC_1_SQRT_2 && lambda < 1.0) {
            return Err(Error::Domain(format!("Barlow lambda must lie in (√2/2, 1), got {lambda}")));
        }
        Ok(PathFunctional::BarlowSigma { lambda, terms: barlow_terms(lambda) })
    }
}

/// Smallest `N` with `λ^{N+1}·(1/2)/(1−λ) < 1e-8`.
pub fn barlow_terms(lambda: f64) -> usize {
    let mut n = 0usize;
    while lambda.powi(n as i32 + 1) * 0.5 / (1.0 - lambda) >= BARLOW_TAIL {
        n += 1;
    }
    n
}

/// Evaluate the Tsirelson drift at time `t` on a path prefix.
pub fn tsirelson_drift(functional: &PathFunctional, t: f64, path: &PathPrefix<'_>) -> Result<f64> {
    let PathFunctional::Tsirelson { partition } = functional else {
        return Err(Error::Domain("tsirelson_drift needs a Tsirelson functional".into()));
    };
    let t_end = partition[0];
    if !(t > 0.0 && t <= t_end) {
        return Err(Error::Domain(format!("t = {t} outside (0, {t_end}]")));
    }
    Ok(tsirelson_unchecked(partition, t, path))
}

#[inline]
pub(crate) fn tsirelson_unchecked(partition: &[f64], t: f64, path: &PathPrefix<'_>) -> f64 {
    // t ∈ [tₙ, tₙ₋₁) with n ≥ 1; t = T belongs to the first interval
    let depth = partition.len() - 1;
    let mut n = 1;
    while n <= depth && t < partition[n] {
        n += 1;
    }
    if n >= depth {
        // below the last stored pair (tₙ, tₙ₊₁) the drift vanishes
        return 0.0;
    }
    let (hi, lo) = (partition[n], partition[n + 1]);
    let slope = (path.at(hi) - path.at(lo)) / (hi - lo);
    frac(slope)
}

pub fn barlow_sigma(functional: &PathFunctional, x: f64) -> Result<f64> {
    match functional {
        PathFunctional::BarlowSigma { lambda, terms } => Ok(barlow_series(*lambda, *terms, x)),
        _ => Err(Error::Domain("barlow_sigma needs a Barlow functional".into())),
    }
}

#[inline]
pub fn barlow_series(lambda: f64, terms: usize, x: f64) -> f64 {
    let mut acc = 1.0;
    let mut weight = 1.0;
    // reduce mod 1 before doubling: exact, and 2ᵏx would overflow for λ near 1
    let mut arg = frac(x);
    for _ in 0..=terms {
        acc += weight * tent(arg);
        weight *= lambda;
        arg = frac(2.0 * arg);
    }
    acc
}

/// Evaluate any path functional at `(t, path)`. Barlow is state dependent
/// and reads the current path value.
pub fn evaluate(functional: &PathFunctional, t: f64, path: &PathPrefix<'_>) -> f64 {
    match functional {
        PathFunctional::Tsirelson { partition } => {
            if t <= 0.0 {
                0.0
            } else {
                tsirelson_unchecked(partition, t.min(partition[0]), path)
            }
        }
        PathFunctional::BarlowSigma { lambda, terms } => barlow_series(*lambda, *terms, path.at(t)),
        PathFunctional::Custom { eval, .. } => eval(t, path),
    }
}

// ---------------------------------------------------------------------------
// Barlow terminal function g(x) = ∫₀ˣ ∫₀^s σ₀(r)² dr ds
// ---------------------------------------------------------------------------

/// Moments of the infinite tent series `S(u) = Σ λⁿ η(θ(2ⁿu))` on [0, 1]:
/// `m[k] = ∫ uᵏ S`, `q[k] = ∫ uᵏ S²`. Obtained from the self-similarity
/// `S(u) = η(u) + λ S(2u)`.
#[derive(Debug, Clone)]
pub struct TentMoments {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients of `p(c0 + c1·v)` for `p` given by coefficients.
fn compose_affine(p: &[f64], c0: f64, c1: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for (k, &pk) in p.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        for i in 0..=k {
            out[i] += pk * binom(k, i) * c0.powi((k - i) as i32) * c1.powi(i as i32);
        }
    }
    out
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// ∫_a^b p(u) du.
fn poly_integral(p: &[f64], a: f64, b: f64) -> f64 {
    p.iter().enumerate().map(|(k, c)| c * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k + 1) as f64).sum()
}

/// ∫₀¹ p(u) η(u)^power du with η the tent, power ∈ {1, 2}.
fn poly_tent_integral(p: &[f64], power: u32) -> f64 {
    let up: Vec<f64> = vec![0.0, 1.0];
    let down: Vec<f64> = vec![1.0, -1.0];
    let (mut left, mut right) = (p.to_vec(), p.to_vec());
    for _ in 0..power {
        left = poly_mul(&left, &up);
        right = poly_mul(&right, &down);
    }
    poly_integral(&left, 0.0, 0.5) + poly_integral(&right, 0.5, 1.0)
}

impl TentMoments {
    pub fn new(lambda: f64, max_degree: usize) -> Self {
        let km = max_degree + 1;
        // ∫₀¹ p(u) S(2u) du = ½[∫₀¹ p(v/2) S(v) dv + ∫₀¹ p((1+v)/2) S(v) dv]
        let monomial = |k: usize, len: usize| {
            let mut p = vec![0.0; len];
            p[k] = 1.0;
            p
        };
        let doubled = |p: &[f64]| -> Vec<f64> {
            let a = compose_affine(p, 0.0, 0.5);
            let b = compose_affine(p, 0.5, 0.5);
            a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
        };

        // m_k − λ Σ_j D_kj m_j = ∫ uᵏ η
        let mut mat = DMatrix::<f64>::identity(km + 1, km + 1);
        let mut rhs = DVector::<f64>::zeros(km + 1);
        for k in 0..=km {
            let p = monomial(k, km + 1);
            let d = doubled(&p);
            for (j, c) in d.iter().enumerate() {
                mat[(k, j)] -= lambda * c;
            }
            rhs[k] = poly_tent_integral(&p, 1);
        }
        let m = mat.lu().solve(&rhs).expect("tent moment system");

        // S² = η² + 2λ η S(2u) + λ² S(2u)²
        let kq = max_degree;
        let mut matq = DMatrix::<f64>::identity(kq + 1, kq + 1);
        let mut rhsq = DVector::<f64>::zeros(kq + 1);
        for k in 0..=kq {
            let p = monomial(k, kq + 2);
            let d = doubled(&p[..=kq]);
            for (j, c) in d.iter().enumerate() {
                matq[(k, j)] -= lambda * lambda * c;
            }
            // ∫ p η S(2u): left half η=u, right half η=1−u
            let left = compose_affine(&poly_mul(&p[..=kq], &[0.0, 1.0]), 0.0, 0.5);
            let right = compose_affine(&poly_mul(&p[..=kq], &[1.0, -1.0]), 0.5, 0.5);
            let mut cross = 0.0;
            for (j, c) in left.iter().enumerate() {
                cross += 0.5 * c * m[j];
            }
            for (j, c) in right.iter().enumerate() {
                cross += 0.5 * c * m[j];
            }
            rhsq[k] = poly_tent_integral(&p[..=kq], 2) + 2.0 * lambda * cross;
        }
        let q = matq.lu().solve(&rhsq).expect("tent square moment system");
        TentMoments { m: m.as_slice().to_vec(), q: q.as_slice().to_vec() }
    }
}

/// Tabulated `g` and `G = g'` for the Barlow diffusion-control problem.
///
/// Cells of width `2⁻ᴹ` split σ₀ into a resolved linear part and the
/// self-similar tail `λᴹ S(2ᴹ r − j)`, so every cell integral is exact.
#[derive(Debug, Clone)]
pub struct BarlowTerminal {
    pub lambda: f64,
    pub terms: usize,
    level: u32,
    width: f64,
    /// G(a_j) = ∫₀^{a_j} σ₀²
    big_g: Vec<f64>,
    /// g(a_j)
    small_g: Vec<f64>,
    /// σ₀(a_j)²
    sigma_sq: Vec<f64>,
}

impl BarlowTerminal {
    pub const DEFAULT_LEVEL: u32 = 16;

    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_level(lambda, Self::DEFAULT_LEVEL)
    }

    pub fn with_level(lambda: f64, level: u32) -> Result<Self> {
        let PathFunctional::BarlowSigma { terms, .. } = PathFunctional::barlow(lambda)? else { unreachable!() };
        let moments = TentMoments::new(lambda, 2);
        let cells = 1usize << level;
        let width = 1.0 / cells as f64;
        let tail = lambda.powi(level as i32);
        let resolved = |r: f64| -> f64 {
            // Σ_{n<M} λⁿ η(θ(2ⁿ r))
            let mut acc = 0.0;
            let mut w = 1.0;
            let mut arg = r;
            for _ in 0..level {
                acc += w * tent(arg);
                w *= lambda;
                arg *= 2.0;
            }
            acc
        };
        let mut big_g = Vec::with_capacity(cells + 1);
        let mut small_g = Vec::with_capacity(cells + 1);
        let mut sigma_sq = Vec::with_capacity(cells + 1);
        let (mut gg, mut sg) = (0.0f64, 0.0f64);
        for j in 0..cells {
            let a = j as f64 * width;
            big_g.push(gg);
            small_g.push(sg);
            let s0 = barlow_series(lambda, terms, a);
            sigma_sq.push(s0 * s0);
            // σ₀(a + w v) = A0 + A1 v + λᴹ S(v) on the cell
            let a0 = 1.0 + resolved(a);
            // η is continuous, so the right-edge value closes the linear piece
            let a1 = 1.0 + resolved(a + width) - a0;
            let int_sq = |p: [f64; 2]| -> f64 {
                // ∫₀¹ p(v) [A(v)² + 2λᴹ A(v) S(v) + λ²ᴹ S(v)²] dv
                let a_poly = [a0, a1];
                let pa = poly_mul(&p, &a_poly);
                let paa = poly_mul(&pa, &a_poly);
                let exact = poly_integral(&paa, 0.0, 1.0);
                let cross: f64 = pa.iter().enumerate().map(|(k, c)| c * moments.m[k]).sum();
                let square: f64 = p.iter().enumerate().map(|(k, c)| c * moments.q[k]).sum();
                exact + 2.0 * tail * cross + tail * tail * square
            };
            let cell_g = width * int_sq([1.0, 0.0]);
            // ∫_cell (a + w − r) σ₀² dr = w² ∫₀¹ (1 − v) σ₀² dv
            let cell_moment = width * width * int_sq([1.0, -1.0]);
            sg += gg * width + cell_moment;
            gg += cell_g;
        }
        big_g.push(gg);
        small_g.push(sg);
        let s1 = barlow_series(lambda, terms, 1.0);
        sigma_sq.push(s1 * s1);
        Ok(BarlowTerminal { lambda, terms, level, width, big_g, small_g, sigma_sq })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// `∫₀¹ σ₀²`.
    pub fn period_integral(&self) -> f64 {
        self.big_g[self.big_g.len() - 1]
    }

    fn local(&self, y: f64) -> (usize, f64) {
        let cells = self.big_g.len() - 1;
        let pos = y / self.width;
        let j = (pos.floor() as usize).min(cells - 1);
        (j, y - j as f64 * self.width)
    }

    /// `G(x) = ∫₀ˣ σ₀²`.
    pub fn first_integral(&self, x: f64) -> f64 {
        let m = x.floor();
        let y = x - m;
        let (j, s) = self.local(y);
        m * self.period_integral() + self.big_g[j] + self.sigma_sq[j] * s
    }

    /// `g(x) = ∫₀ˣ G`.
    pub fn value(&self, x: f64) -> f64 {
        let m = x.floor();
        let y = x - m;
        let (j, s) = self.local(y);
        let g_y = self.small_g[j] + self.big_g[j] * s + 0.5 * self.sigma_sq[j] * s * s;
        let g1 = self.period_integral();
        let i1 = self.small_g[self.small_g.len() - 1];
        g1 * m * (m - 1.0) * 0.5 + m * i1 + m * g1 * y + g_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frac_and_tent() {
        assert_eq!(frac(-0.25), 0.75);
        assert_eq!(frac(1.0), 0.0);
        assert_eq!(tent(0.5), 0.5);
        assert_eq!(tent(0.75), 0.25);
        assert_eq!(tent(3.0), 0.0);
    }

    #[test]
    fn tsirelson_examples() {
        let k = PathFunctional::tsirelson(1.0, TSIRELSON_DEPTH);
        let dt = 1.0 / 64.0;
        let unit: Vec<f64> = (0..=64).map(|i| i as f64 * dt).collect();
        let p = PathPrefix { dt, values: &unit };
        for t in [0.3, 0.5, 0.99, 1.0] {
            assert_eq!(tsirelson_drift(&k, t, &p).unwrap(), 0.0);
        }
        let half: Vec<f64> = unit.iter().map(|v| 0.5 * v).collect();
        let p = PathPrefix { dt, values: &half };
        assert!((tsirelson_drift(&k, 0.75, &p).unwrap() - 0.5).abs() < 1e-15);
        let neg: Vec<f64> = unit.iter().map(|v| -0.25 * v).collect();
        let p = PathPrefix { dt, values: &neg };
        assert!((tsirelson_drift(&k, 0.6, &p).unwrap() - 0.75).abs() < 1e-15);
        assert!(tsirelson_drift(&k, 0.0, &p).is_err());
        assert!(tsirelson_drift(&k, 1.5, &p).is_err());
    }

    #[test]
    fn tsirelson_partition_validation() {
        assert!(PathFunctional::tsirelson_with_partition(vec![1.0, 0.5, 0.5]).is_err());
        assert!(PathFunctional::tsirelson_with_partition(vec![1.0, 0.4, 0.1]).is_ok());
    }

    #[test]
    fn barlow_examples() {
        let b = PathFunctional::barlow(0.75).unwrap();
        assert_eq!(barlow_sigma(&b, 0.0).unwrap(), 1.0);
        assert!((barlow_sigma(&b, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!(PathFunctional::barlow(0.7).is_err());
        assert!(PathFunctional::barlow(1.0).is_err());
        let n = barlow_terms(0.75);
        assert!(0.75f64.powi(n as i32 + 1) * 2.0 < 1e-8);
        assert!(0.75f64.powi(n as i32) * 2.0 >= 1e-8);
    }

    #[test]
    fn tent_moments_first_order() {
        let lam = 0.75;
        let mom = TentMoments::new(lam, 2);
        // ∫ S = Σ λⁿ/4
        assert!((mom.m[0] - 0.25 / (1.0 - lam)).abs() < 1e-14);
        // symmetry S(u) = S(1−u) gives ∫ u S = ½ ∫ S and ∫ u S² = ½ ∫ S²
        assert!((mom.m[1] - 0.5 * mom.m[0]).abs() < 1e-14);
        assert!((mom.q[1] - 0.5 * mom.q[0]).abs() < 1e-14);
    }

    #[test]
    fn tent_square_moment_matches_fine_sum() {
        // brute-force midpoint sum on a non-dyadic grid, truncated series
        let lam = 0.75;
        let mom = TentMoments::new(lam, 2);
        let n = 300_000;
        let h = 1.0 / n as f64;
        let terms = barlow_terms(lam);
        let mut acc = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) * h;
            let s = barlow_series(lam, terms, u) - 1.0;
            acc += s * s * h;
        }
        assert!((acc - mom.q[0]).abs() < 1e-4, "{acc} vs {}", mom.q[0]);
    }

    #[test]
    fn barlow_terminal_basic_identities() {
        let bt = BarlowTerminal::new(0.75).unwrap();
        assert_eq!(bt.value(0.0), 0.0);
        assert_eq!(bt.first_integral(0.0), 0.0);
        // ∫₀¹ σ₀² = 1 + 2 m0 + q0
        let mom = TentMoments::new(0.75, 2);
        let expect = 1.0 + 2.0 * mom.m[0] + mom.q[0];
        assert!((bt.period_integral() - expect).abs() < 1e-12);
        // g is even because σ₀ is even: σ₀(−x) = σ₀(x)
        for x in [0.3, 1.7, 2.25] {
            assert!((bt.value(x) - bt.value(-x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn barlow_terminal_level_consistency() {
        let coarse = BarlowTerminal::with_level(0.75, 10).unwrap();
        let fine = BarlowTerminal::with_level(0.75, 14).unwrap();
        for i in 0..=16 {
            let x = i as f64 / 16.0;
            assert!((coarse.value(x) - fine.value(x)).abs() < 1e-12, "x={x}");
        }
    }
}
