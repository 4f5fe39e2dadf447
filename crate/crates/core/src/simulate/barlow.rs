use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::functional::{frac, tent, BarlowTerminal, PathFunctional};
use super::{PathBundle, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::path_stream;

const TABLE_LEVEL: u32 = 16;
/// Nested table levels; the omitted remainder is below `λ^48 / (2(1 − λ))`.
const TABLE_DEPTH: i32 = 3;

/// Fast evaluation of `σ₀` by self-similarity: a table of the first 16 tent
/// terms on `[0, 1]`, linearly interpolated (exact between dyadic nodes of
/// that level), reused at scales `2^16`, `2^32`, …
#[derive(Debug, Clone)]
pub struct BarlowTable {
    lambda: f64,
    partial: Vec<f64>,
}

impl BarlowTable {
    pub fn new(lambda: f64) -> Result<Self> {
        PathFunctional::barlow(lambda)?;
        let cells = 1usize << TABLE_LEVEL;
        let partial = (0..=cells)
            .map(|i| {
                let v = i as f64 / cells as f64;
                let (mut acc, mut w, mut arg) = (0.0, 1.0, v);
                for _ in 0..TABLE_LEVEL {
                    acc += w * tent(arg);
                    w *= lambda;
                    arg *= 2.0;
                }
                acc
            })
            .collect();
        Ok(BarlowTable { lambda, partial })
    }

    #[inline]
    fn lookup(&self, v: f64) -> f64 {
        let pos = v * (self.partial.len() - 1) as f64;
        let i = (pos as usize).min(self.partial.len() - 2);
        let w = pos - i as f64;
        self.partial[i] + w * (self.partial[i + 1] - self.partial[i])
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        let scale = (1u64 << TABLE_LEVEL) as f64;
        let weight = self.lambda.powi(TABLE_LEVEL as i32);
        let (mut acc, mut w, mut arg) = (1.0, 1.0, x);
        for _ in 0..TABLE_DEPTH {
            acc += w * self.lookup(frac(arg));
            w *= weight;
            arg *= scale;
        }
        acc
    }
}

/// Fine-step control for the time-changed simulation: `du = ε·u` clamped to
/// `[min, max]`, geometric near the start where `E σ₀²(W_u)` moves fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineSteps {
    pub ratio: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for FineSteps {
    fn default() -> Self {
        FineSteps { ratio: 0.01, min: 1e-8, max: 1e-3 }
    }
}

/// Weak solution of `dX = σ₀(X) dB`, `X₀ = 0`, as a time-changed Brownian
/// motion `X_t = W(A_t)`, `∫₀^{A_t} σ₀(W)⁻² du = t`. `X` is observed at the
/// first fine step past each grid time, which is a stopping time for `W`.
/// `Y` holds `g(X) − ½∫σ₀⁴(X) ds = g(W) − ½∫σ₀²(W) du` (trapezoid rule in
/// `u`), `Z = g′(X)`, and `increments` hold `ΔX / σ₀(X_k)`.
pub fn barlow_time_change(
    terminal: &BarlowTerminal,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    steps: FineSteps,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be positive".into()));
    }
    if !(steps.ratio > 0.0 && steps.min > 0.0 && steps.min <= steps.max) {
        return Err(Error::Config("fine steps need ratio > 0 and 0 < min ≤ max".into()));
    }
    let table = BarlowTable::new(terminal.lambda)?;
    let n = grid.n_steps;
    let nodes = n + 1;
    let mut x = vec![0.0; n_paths * nodes];
    let mut y = vec![0.0; n_paths * nodes];
    let mut z = vec![0.0; n_paths * nodes];
    let mut increments = vec![0.0; n_paths * n];
    x.par_chunks_mut(nodes)
        .zip(y.par_chunks_mut(nodes))
        .zip(z.par_chunks_mut(nodes))
        .zip(increments.par_chunks_mut(n))
        .enumerate()
        .for_each(|(p, (((xp, yp), zp), bp))| {
            let mut rng = path_stream(seed, p);
            let (mut w, mut u, mut clock, mut integral) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut s2 = table.sigma(w).powi(2);
            yp[0] = terminal.value(0.0);
            zp[0] = terminal.first_integral(0.0);
            let mut k = 1;
            while k <= n {
                let du = (steps.ratio * u).clamp(steps.min, steps.max);
                let dz: f64 = rng.sample(StandardNormal);
                w += du.sqrt() * dz;
                u += du;
                let s2_next = table.sigma(w).powi(2);
                integral += 0.5 * (s2 + s2_next) * du;
                clock += du / s2;
                s2 = s2_next;
                while k <= n && clock >= grid.time(k) {
                    xp[k] = w;
                    yp[k] = terminal.value(w) - 0.5 * integral;
                    zp[k] = terminal.first_integral(w);
                    k += 1;
                }
            }
            for j in 0..n {
                bp[j] = (xp[j + 1] - xp[j]) / table.sigma(xp[j]);
            }
        });
    Ok(PathBundle {
        grid: *grid,
        dim: 1,
        n_paths,
        seed,
        increments,
        x,
        y,
        z,
        residual: vec![0.0; n_paths * nodes],
        weights: None,
        exit_fraction: 0.0,
        warnings: Vec::new(),
    })
}
