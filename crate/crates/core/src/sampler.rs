//! Exact Gaussian path sampling on uniform grids.
//!
//! Stationary models use circulant embedding diagonalized by the FFT;
//! self-similar models use a Cholesky factor computed once per grid; fBm is
//! built from cumulative sums of a stationary fGn draw.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, SelfSimilarModel, StationaryModel};
use crate::rng::NormalStream;

/// Largest grid accepted by the Cholesky planner (cubic cost).
pub const CHOLESKY_MAX: usize = 1 << 13;

/// Default relative tolerance on negative circulant eigenvalues.
pub const DEFAULT_TOL_PSD: f64 = 1e-10;

/// Sampled values `X(0), X(delta), ..., X((n-1) delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub delta: f64,
    pub values: Vec<f64>,
    pub model_id: String,
    pub seed: u64,
    pub replicate: u64,
}

impl GridPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes a JSON header line followed by the values as little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "n": self.values.len(),
            "delta": self.delta,
            "model_id": self.model_id,
            "seed": self.seed,
            "replicate": self.replicate,
        });
        writeln!(w, "{header}")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<GridPath> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let h: serde_json::Value = serde_json::from_str(&line)?;
        let field = |k: &str| {
            h.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("path header lacks {k:?}")))
        };
        let n = field("n")?.as_u64().ok_or_else(|| Error::Config("bad n".into()))? as usize;
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(GridPath {
            delta: field("delta")?.as_f64().unwrap_or(f64::NAN),
            values,
            model_id: field("model_id")?.as_str().unwrap_or_default().to_string(),
            seed: field("seed")?.as_u64().unwrap_or(0),
            replicate: field("replicate")?.as_u64().unwrap_or(0),
        })
    }
}

#[derive(Clone)]
struct Circulant {
    /// Half size `m`; the embedding has size `2m`.
    m: usize,
    /// Clipped eigenvalues of the embedding.
    eigenvalues: Vec<f64>,
    clipped_mass: f64,
    total_mass: f64,
    fft: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
struct Cholesky {
    /// Row `i` holds `L[i][0..=i]` for grid times `(i+1) delta`.
    rows: Vec<Vec<f64>>,
    jitter: f64,
}

#[derive(Clone)]
enum PlanKind {
    Circulant(Circulant),
    Cholesky(Cholesky),
}

/// Precomputed sampler for one model and grid, reusable across replicates.
#[derive(Clone)]
pub struct SamplerPlan {
    pub n: usize,
    pub delta: f64,
    pub model_id: String,
    kind: PlanKind,
}

impl std::fmt::Debug for SamplerPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("SamplerPlan");
        d.field("n", &self.n)
            .field("delta", &self.delta)
            .field("model_id", &self.model_id);
        match &self.kind {
            PlanKind::Circulant(c) => d
                .field("embed_size", &(2 * c.m))
                .field("clipped_mass", &c.clipped_mass),
            PlanKind::Cholesky(c) => d.field("factor_dim", &c.rows.len()).field("jitter", &c.jitter),
        };
        d.finish()
    }
}

impl SamplerPlan {
    /// Size `2m` of the circulant embedding, if this is a circulant plan.
    pub fn embed_size(&self) -> Option<usize> {
        match &self.kind {
            PlanKind::Circulant(c) => Some(2 * c.m),
            PlanKind::Cholesky(_) => None,
        }
    }

    /// Eigenvalues of the circulant embedding after clipping.
    pub fn spectrum(&self) -> Option<&[f64]> {
        match &self.kind {
            PlanKind::Circulant(c) => Some(&c.eigenvalues),
            PlanKind::Cholesky(_) => None,
        }
    }

    /// Negative spectral mass removed by clipping, relative to the total.
    pub fn clipped_fraction(&self) -> f64 {
        match &self.kind {
            PlanKind::Circulant(c) => c.clipped_mass / c.total_mass,
            PlanKind::Cholesky(_) => 0.0,
        }
    }

    /// Dimension of the Cholesky factor, if this is a Cholesky plan.
    pub fn factor_dim(&self) -> Option<usize> {
        match &self.kind {
            PlanKind::Cholesky(c) => Some(c.rows.len()),
            PlanKind::Circulant(_) => None,
        }
    }

    /// Diagonal jitter added during factorization (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        match &self.kind {
            PlanKind::Cholesky(c) => c.jitter,
            PlanKind::Circulant(_) => 0.0,
        }
    }

    /// Largest `|(L L^T)_{ij} - cov(t_i, t_j)|` over `count` pseudo-random
    /// entries of a Cholesky plan.
    pub fn reconstruction_error(&self, m: &SelfSimilarModel, count: usize, seed: u64) -> Result<f64> {
        let PlanKind::Cholesky(c) = &self.kind else {
            return Err(Error::Precondition("reconstruction error needs a Cholesky plan".into()));
        };
        let dim = c.rows.len();
        let mut s = NormalStream::new(seed, 0);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let i = ((s.next_uniform() * dim as f64) as usize).min(dim - 1);
            let j = ((s.next_uniform() * dim as f64) as usize).min(dim - 1);
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            let lhs: f64 = (0..=j).map(|k| c.rows[i][k] * c.rows[j][k]).sum();
            let ti = (i + 1) as f64 * self.delta;
            let tj = (j + 1) as f64 * self.delta;
            let rhs = m.cov(ti, tj)? + if i == j { c.jitter } else { 0.0 };
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }
}

fn check_grid(n: usize, delta: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Precondition(format!("grid needs at least 2 points, got {n}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            reason: "must be positive and finite",
        });
    }
    Ok(())
}

/// Circulant-embedding plan for `rho(k delta)`, `k = 0..n-1`.
pub fn plan_circulant(rho: &StationaryModel, n: usize, delta: f64, tol_psd: f64) -> Result<SamplerPlan> {
    check_grid(n, delta)?;
    rho.validate()?;
    let cap = (n.saturating_mul(1 << 10)).max(2);
    let mut m = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    loop {
        let size = 2 * m;
        let mut row = vec![Complex::new(0.0, 0.0); size];
        for k in 0..=m {
            let c = rho.rho(k as f64 * delta)?;
            row[k].re = c;
            if k > 0 && k < m {
                row[size - k].re = c;
            }
        }
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);
        let eig: Vec<f64> = row.iter().map(|z| z.re).collect();
        let max = eig.iter().fold(0.0f64, |a, &b| a.max(b));
        let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min >= -tol_psd * max || 2 * m > cap {
            if min < -tol_psd * max {
                return Err(Error::Embedding {
                    min_eigenvalue: min,
                    size,
                });
            }
            let clipped_mass: f64 = eig.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
            let total_mass: f64 = eig.iter().map(|v| v.abs()).sum();
            let eigenvalues = eig.into_iter().map(|v| v.max(0.0)).collect();
            return Ok(SamplerPlan {
                n,
                delta,
                model_id: rho.id(),
                kind: PlanKind::Circulant(Circulant {
                    m,
                    eigenvalues,
                    clipped_mass,
                    total_mass,
                    fft,
                }),
            });
        }
        m *= 2;
    }
}

/// One exact draw of the stationary process on the plan's grid.
pub fn sample_stationary(plan: &SamplerPlan, seed: u64, replicate: u64) -> Result<GridPath> {
    let PlanKind::Circulant(c) = &plan.kind else {
        return Err(Error::Precondition("sample_stationary needs a circulant plan".into()));
    };
    let values = circulant_draw(c, plan.n, &mut NormalStream::new(seed, replicate));
    Ok(GridPath {
        delta: plan.delta,
        values,
        model_id: plan.model_id.clone(),
        seed,
        replicate,
    })
}

fn circulant_draw(c: &Circulant, n: usize, stream: &mut NormalStream) -> Vec<f64> {
    let m = c.m;
    let size = 2 * m;
    let nf = size as f64;
    let mut a = vec![Complex::new(0.0, 0.0); size];
    a[0].re = (c.eigenvalues[0] / nf).sqrt() * stream.next_normal();
    a[m].re = (c.eigenvalues[m] / nf).sqrt() * stream.next_normal();
    for j in 1..m {
        let s = (c.eigenvalues[j] / (2.0 * nf)).sqrt();
        let z = Complex::new(s * stream.next_normal(), s * stream.next_normal());
        a[j] = z;
        a[size - j] = z.conj();
    }
    c.fft.process(&mut a);
    a.iter().take(n).map(|z| z.re).collect()
}

/// Cholesky plan for `X(delta), ..., X((n-1) delta)` of a self-similar model;
/// `X(0) = 0` is pinned.
pub fn plan_cholesky(m: &SelfSimilarModel, n: usize, delta: f64) -> Result<SamplerPlan> {
    check_grid(n, delta)?;
    if n > CHOLESKY_MAX {
        return Err(Error::Size {
            size: n,
            limit: CHOLESKY_MAX,
        });
    }
    m.validate()?;
    let dim = n - 1;
    let times: Vec<f64> = (1..=dim).map(|i| i as f64 * delta).collect();
    let max_diag = times
        .iter()
        .map(|&t| m.cov(t, t))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let build = |jitter: f64| -> Result<Vec<Vec<f64>>> {
        times
            .par_iter()
            .enumerate()
            .map(|(i, &ti)| {
                let mut row = Vec::with_capacity(i + 1);
                for &tj in &times[..=i] {
                    row.push(m.cov(ti, tj)?);
                }
                row[i] += jitter;
                Ok(row)
            })
            .collect()
    };
    let mut rows = build(0.0)?;
    let mut jitter = 0.0;
    if let Err(pivot) = cholesky_in_place(&mut rows) {
        jitter = 1e-12 * max_diag;
        rows = build(jitter)?;
        cholesky_in_place(&mut rows).map_err(|_| Error::NotPositiveDefinite { pivot })?;
    }
    Ok(SamplerPlan {
        n,
        delta,
        model_id: m.id(),
        kind: PlanKind::Cholesky(Cholesky { rows, jitter }),
    })
}

/// Column-by-column Cholesky on a lower triangle stored by rows; the rows
/// below each pivot are updated in parallel, each with a fixed-order dot
/// product. Returns the failing pivot on breakdown.
fn cholesky_in_place(rows: &mut [Vec<f64>]) -> std::result::Result<(), usize> {
    let dim = rows.len();
    for j in 0..dim {
        let (head, tail) = rows.split_at_mut(j + 1);
        let rj = &mut head[j];
        let s: f64 = rj[..j].iter().map(|v| v * v).sum();
        let pivot = rj[j] - s;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(j);
        }
        let d = pivot.sqrt();
        rj[j] = d;
        let rj: &[f64] = rj;
        tail.par_iter_mut().for_each(|ri| {
            let dot: f64 = ri[..j].iter().zip(&rj[..j]).map(|(a, b)| a * b).sum();
            ri[j] = (ri[j] - dot) / d;
        });
    }
    Ok(())
}

/// One exact draw of the self-similar process; `values[0] = 0`.
pub fn sample_self_similar(plan: &SamplerPlan, seed: u64, replicate: u64) -> Result<GridPath> {
    let PlanKind::Cholesky(c) = &plan.kind else {
        return Err(Error::Precondition("sample_self_similar needs a Cholesky plan".into()));
    };
    let dim = c.rows.len();
    let mut z = vec![0.0; dim];
    NormalStream::new(seed, replicate).fill_normals(&mut z);
    let mut values = Vec::with_capacity(dim + 1);
    values.push(0.0);
    for row in &c.rows {
        values.push(row.iter().zip(&z).map(|(l, x)| l * x).sum());
    }
    Ok(GridPath {
        delta: plan.delta,
        values,
        model_id: plan.model_id.clone(),
        seed,
        replicate,
    })
}

/// Plan for fBm on `n` grid points: unit-lag fGn of length `n - 1`.
pub fn plan_fbm(h: f64, n: usize, delta: f64) -> Result<SamplerPlan> {
    check_grid(n, delta)?;
    let mut plan = plan_circulant(&StationaryModel::Fgn { h }, (n - 1).max(2), 1.0, DEFAULT_TOL_PSD)?;
    plan.n = n;
    plan.delta = delta;
    plan.model_id = SelfSimilarModel::Fbm { h }.id();
    Ok(plan)
}

/// fBm path from a [`plan_fbm`] plan: cumulative fGn scaled by `delta^H`.
pub fn sample_fbm_with(plan: &SamplerPlan, h: f64, seed: u64, replicate: u64) -> Result<GridPath> {
    let PlanKind::Circulant(c) = &plan.kind else {
        return Err(Error::Precondition("fBm sampling needs a circulant fGn plan".into()));
    };
    let incr = circulant_draw(c, plan.n - 1, &mut NormalStream::new(seed, replicate));
    let scale = plan.delta.powf(h);
    let mut values = Vec::with_capacity(plan.n);
    let mut acc = 0.0;
    values.push(0.0);
    for g in incr {
        acc += g;
        values.push(scale * acc);
    }
    Ok(GridPath {
        delta: plan.delta,
        values,
        model_id: plan.model_id.clone(),
        seed,
        replicate,
    })
}

/// Exact fBm path on `n` points with step `delta`.
pub fn sample_fbm(h: f64, n: usize, delta: f64, seed: u64, replicate: u64) -> Result<GridPath> {
    sample_fbm_with(&plan_fbm(h, n, delta)?, h, seed, replicate)
}

/// Sampler for any supported model, choosing the exact method per family.
#[derive(Debug, Clone)]
pub enum PathSampler {
    Stationary(SamplerPlan),
    Fbm { h: f64, plan: SamplerPlan },
    SelfSimilar(SamplerPlan),
}

impl PathSampler {
    pub fn new(model: &Model, n: usize, delta: f64) -> Result<PathSampler> {
        Ok(match model {
            Model::Stationary(s) => PathSampler::Stationary(plan_circulant(s, n, delta, DEFAULT_TOL_PSD)?),
            Model::SelfSimilar(SelfSimilarModel::Fbm { h }) => PathSampler::Fbm {
                h: *h,
                plan: plan_fbm(*h, n, delta)?,
            },
            Model::SelfSimilar(m) => PathSampler::SelfSimilar(plan_cholesky(m, n, delta)?),
        })
    }

    pub fn plan(&self) -> &SamplerPlan {
        match self {
            PathSampler::Stationary(p) | PathSampler::SelfSimilar(p) => p,
            PathSampler::Fbm { plan, .. } => plan,
        }
    }

    pub fn sample(&self, seed: u64, replicate: u64) -> Result<GridPath> {
        match self {
            PathSampler::Stationary(p) => sample_stationary(p, seed, replicate),
            PathSampler::Fbm { h, plan } => sample_fbm_with(plan, *h, seed, replicate),
            PathSampler::SelfSimilar(p) => sample_self_similar(p, seed, replicate),
        }
    }
}

/// Exact standard deviations of `X(u_j + lag delta) - X(u_j)` at the first
/// `count` grid points `u_j = j delta`.
pub fn increment_scales(model: &Model, delta: f64, lag_steps: usize, count: usize) -> Result<Vec<f64>> {
    let lag = lag_steps as f64 * delta;
    match model {
        Model::SelfSimilar(m) => (0..count)
            .into_par_iter()
            .map(|j| m.increment_var(j as f64 * delta, lag).map(f64::sqrt))
            .collect(),
        Model::Stationary(s) => {
            let v = 2.0 * (1.0 - s.rho(lag)?);
            if !(v > 0.0) {
                return Err(Error::Degenerate { at: 0.0 });
            }
            Ok(vec![v.sqrt(); count])
        }
    }
}

/// `(X(u_j + lag) - X(u_j)) / ||X(u_j + lag) - X(u_j)||` on the grid, with
/// exact model denominators.
pub fn normalized_increments(path: &GridPath, lag_steps: usize, model: &Model) -> Result<GridPath> {
    if lag_steps == 0 || path.len() <= lag_steps {
        return Err(Error::Precondition(format!(
            "lag of {lag_steps} steps does not fit a path of {} points",
            path.len()
        )));
    }
    let count = path.len() - lag_steps;
    let scales = increment_scales(model, path.delta, lag_steps, count)?;
    Ok(apply_increment_scales(path, lag_steps, &scales))
}

/// [`normalized_increments`] with precomputed scales.
pub fn apply_increment_scales(path: &GridPath, lag_steps: usize, scales: &[f64]) -> GridPath {
    let values = scales
        .iter()
        .enumerate()
        .map(|(j, s)| (path.values[j + lag_steps] - path.values[j]) / s)
        .collect();
    GridPath {
        delta: path.delta,
        values,
        model_id: path.model_id.clone(),
        seed: path.seed,
        replicate: path.replicate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::a_alpha;

    fn empirical_var(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn white_noise_and_brownian_increments_have_flat_spectra() {
        let p = plan_circulant(&StationaryModel::WhiteNoise, 8, 1.0, DEFAULT_TOL_PSD).unwrap();
        assert!(p.spectrum().unwrap().iter().all(|v| (v - 1.0).abs() < 1e-14));
        let p = plan_circulant(&StationaryModel::Fgn { h: 0.5 }, 20, 1.0, DEFAULT_TOL_PSD).unwrap();
        assert!(p.spectrum().unwrap().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn long_range_fgn_embeds() {
        let p = plan_circulant(&StationaryModel::Fgn { h: 0.9 }, 1 << 14, 1.0, DEFAULT_TOL_PSD).unwrap();
        let s = p.spectrum().unwrap();
        let max = s.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(s.iter().all(|&v| v >= -DEFAULT_TOL_PSD * max));
        assert!(p.clipped_fraction() < 1e-6);
    }

    #[test]
    fn white_noise_variance() {
        let p = plan_circulant(&StationaryModel::WhiteNoise, 2, 1.0, DEFAULT_TOL_PSD).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|r| sample_stationary(&p, 5, r).unwrap().values[0]).collect();
        assert!((empirical_var(&xs) - 1.0).abs() < 0.02);
    }

    #[test]
    fn fgn_lag_one_autocovariance() {
        let n = 1 << 15;
        let p = plan_circulant(&StationaryModel::Fgn { h: 0.7 }, n, 1.0, DEFAULT_TOL_PSD).unwrap();
        let y = sample_stationary(&p, 11, 0).unwrap().values;
        let c1 = y.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1) as f64;
        assert!((c1 - (2f64.powf(0.4) - 1.0)).abs() < 0.01, "{c1}");
        assert!((a_alpha(1.4, 1.0) - (2f64.powf(0.4) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn determinism() {
        let p = plan_circulant(&StationaryModel::Fgn { h: 0.6 }, 100, 0.25, DEFAULT_TOL_PSD).unwrap();
        assert_eq!(sample_stationary(&p, 1, 2).unwrap(), sample_stationary(&p, 1, 2).unwrap());
        assert_ne!(sample_stationary(&p, 1, 2).unwrap(), sample_stationary(&p, 1, 3).unwrap());
        let m = SelfSimilarModel::bifbm(0.6, 0.75).unwrap();
        let c = plan_cholesky(&m, 50, 0.1).unwrap();
        assert_eq!(sample_self_similar(&c, 9, 0).unwrap(), sample_self_similar(&c, 9, 0).unwrap());
    }

    #[test]
    fn fbm_paths() {
        let p = sample_fbm(0.5, 5, 0.25, 1, 0).unwrap();
        assert_eq!(p.values[0], 0.0);
        let xs: Vec<f64> = (0..10_000)
            .map(|r| *sample_fbm(0.3, 9, 0.125, 2, r).unwrap().values.last().unwrap())
            .collect();
        assert!((empirical_var(&xs) - 1.0).abs() < 0.05);
    }

    #[test]
    fn fbm_self_similarity() {
        let plan = plan_fbm(0.7, 5, 0.25).unwrap();
        let (mut half, mut one) = (Vec::new(), Vec::new());
        for r in 0..20_000 {
            let p = sample_fbm_with(&plan, 0.7, 3, r).unwrap();
            half.push(p.values[2]);
            one.push(p.values[4]);
        }
        let ratio = empirical_var(&one) / empirical_var(&half);
        assert!((ratio / 2f64.powf(1.4) - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn cholesky_pins_origin_and_reconstructs() {
        let b = SelfSimilarModel::fbm(0.5).unwrap();
        let p = plan_cholesky(&b, 4, 1.0).unwrap();
        assert_eq!(p.factor_dim(), Some(3));
        // min(s,t) on {1,2,3}: factor is the lower all-ones matrix
        assert!(p.reconstruction_error(&b, 16, 1).unwrap() < 1e-14);
        let m = SelfSimilarModel::bifbm(0.6, 0.75).unwrap();
        let p = plan_cholesky(&m, 1024, 1.0 / 1023.0).unwrap();
        assert!(p.reconstruction_error(&m, 16, 2).unwrap() < 1e-8);
        assert!(matches!(plan_cholesky(&m, CHOLESKY_MAX + 1, 1.0), Err(Error::Size { .. })));
    }

    #[test]
    fn cholesky_plan_reuse_is_cheap() {
        let m = SelfSimilarModel::bifbm(0.6, 0.75).unwrap();
        let t0 = std::time::Instant::now();
        let p = plan_cholesky(&m, 1024, 1.0 / 1023.0).unwrap();
        let factor = t0.elapsed();
        let t1 = std::time::Instant::now();
        for r in 0..100 {
            sample_self_similar(&p, 4, r).unwrap();
        }
        let draws = t1.elapsed() / 100;
        assert!(factor > draws * 5, "{factor:?} vs {draws:?}");
    }

    #[test]
    fn bifbm_unit_variance() {
        for m in [SelfSimilarModel::bifbm(0.5, 1.0).unwrap(), SelfSimilarModel::bifbm(0.6, 0.75).unwrap()] {
            let p = plan_cholesky(&m, 5, 0.25).unwrap();
            let xs: Vec<f64> = (0..20_000).map(|r| sample_self_similar(&p, 6, r).unwrap().values[4]).collect();
            assert!((empirical_var(&xs) - m.cov(1.0, 1.0).unwrap()).abs() < 0.05);
        }
    }

    #[test]
    fn normalized_increment_variances() {
        let model = Model::SelfSimilar(SelfSimilarModel::bifbm(0.6, 0.75).unwrap());
        let Model::SelfSimilar(m) = &model else { unreachable!() };
        let sampler = PathSampler::new(&model, 9, 0.125).unwrap();
        let mut first = Vec::new();
        let mut last = Vec::new();
        for r in 0..10_000 {
            let y = normalized_increments(&sampler.sample(8, r).unwrap(), 2, &model).unwrap();
            first.push(y.values[0]);
            last.push(*y.values.last().unwrap());
        }
        assert!((empirical_var(&first) - 1.0).abs() < 0.05);
        assert!((empirical_var(&last) - 1.0).abs() < 0.05);
        let s = increment_scales(&model, 0.125, 2, 1).unwrap()[0];
        assert!(s.is_finite() && s > 0.0);
        assert!((s * s - m.increment_var(0.0, 0.25).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn fbm_normalized_increments_follow_the_kernel() {
        // eps = 4 steps; correlation at lag h eps is a_{2H}(h)
        let model = Model::SelfSimilar(SelfSimilarModel::fbm(0.7).unwrap());
        let sampler = PathSampler::new(&model, 4097, 0.25).unwrap();
        let y = normalized_increments(&sampler.sample(1, 0).unwrap(), 4, &model).unwrap().values;
        let n = y.len() - 4;
        let c = (0..n).map(|j| y[j] * y[j + 4]).sum::<f64>() / n as f64;
        assert!((c - a_alpha(1.4, 1.0)).abs() < 0.05, "{c}");
    }

    /// Empirical covariance of four grid points over many replicates against
    /// the model, entrywise within three standard errors.
    fn check_exactness(sampler: &PathSampler, idx: [usize; 4], cov: impl Fn(usize, usize) -> f64) {
        let r = 10_000;
        let mut data = vec![[0.0; 4]; r];
        for (k, row) in data.iter_mut().enumerate() {
            let p = sampler.sample(77, k as u64).unwrap();
            for (a, &i) in idx.iter().enumerate() {
                row[a] = p.values[i];
            }
        }
        for a in 0..4 {
            for b in a..4 {
                let prods: Vec<f64> = data.iter().map(|row| row[a] * row[b]).collect();
                let mean = prods.iter().sum::<f64>() / r as f64;
                let se = (empirical_var(&prods) / r as f64).sqrt();
                let want = cov(idx[a], idx[b]);
                assert!((mean - want).abs() <= 3.5 * se, "({a},{b}) {mean} vs {want} se {se}");
            }
        }
    }

    #[test]
    fn samplers_reproduce_model_covariances() {
        let idx = [1, 5, 17, 40];
        let rho = StationaryModel::Fgn { h: 0.8 };
        let s = PathSampler::new(&Model::Stationary(rho.clone()), 64, 0.5).unwrap();
        check_exactness(&s, idx, |i, j| rho.rho((i as f64 - j as f64) * 0.5).unwrap());
        let m = SelfSimilarModel::fbm(0.3).unwrap();
        let s = PathSampler::new(&Model::SelfSimilar(m.clone()), 64, 0.1).unwrap();
        check_exactness(&s, idx, |i, j| m.cov(i as f64 * 0.1, j as f64 * 0.1).unwrap());
        let m = SelfSimilarModel::bifbm(0.7, 0.6).unwrap();
        let s = PathSampler::new(&Model::SelfSimilar(m.clone()), 64, 0.1).unwrap();
        check_exactness(&s, idx, |i, j| m.cov(i as f64 * 0.1, j as f64 * 0.1).unwrap());
    }

    #[test]
    fn distinct_replicates_are_uncorrelated() {
        let p = plan_circulant(&StationaryModel::WhiteNoise, 4096, 1.0, DEFAULT_TOL_PSD).unwrap();
        let a = sample_stationary(&p, 3, 0).unwrap().values;
        let b = sample_stationary(&p, 3, 1).unwrap().values;
        let c = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        assert!(c.abs() < 3.0 / (a.len() as f64).sqrt());
    }

    #[test]
    fn path_dump_round_trip() {
        let p = sample_fbm(0.6, 17, 0.5, 4, 2).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let back = GridPath::read_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, p);
    }
}
