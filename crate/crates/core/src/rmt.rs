//! Marchenko–Pastur null model: CDF, bulk fitting, KS testing and the trap edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

/// Default Tracy–Widom margin multiplier `C` in `λ⁺(1 + C·M^{-2/3})`.
pub const TW_MARGIN: f64 = 6.0;

/// Bulk edges `(λ⁻, λ⁺) = σ²(1 ∓ Q^{-1/2})²`.
pub fn mp_edges(sigma: f64, q: f64) -> (f64, f64) {
    let r = q.sqrt().recip();
    let s2 = sigma * sigma;
    (s2 * (1.0 - r) * (1.0 - r), s2 * (1.0 + r) * (1.0 + r))
}

/// Marchenko–Pastur density `Q/(2πσ²λ)·√((λ⁺-λ)(λ-λ⁻))` inside the bulk, 0 outside.
pub fn mp_density(lambda: f64, sigma: f64, q: f64) -> f64 {
    let (lo, hi) = mp_edges(sigma, q);
    if lambda <= lo || lambda >= hi {
        return 0.0;
    }
    q / (2.0 * std::f64::consts::PI * sigma * sigma * lambda) * ((hi - lambda) * (lambda - lo)).sqrt()
}

fn check_params(sigma: f64, q: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::BadParams(format!("sigma must be > 0, got {sigma}")));
    }
    if !(q.is_finite() && q >= 1.0) {
        return Err(Error::BadParams(format!("Q must be >= 1, got {q}")));
    }
    Ok(())
}

/// The MP density written in the angle `x = c - h·cos θ` (unit variance), where
/// it has no endpoint singularities.
struct AngleForm {
    a: f64,
    c: f64,
    h: f64,
    scale: f64,
}

impl AngleForm {
    fn new(q: f64) -> Self {
        let (a, b) = mp_edges(1.0, q);
        Self {
            a,
            c: 0.5 * (a + b),
            h: 0.5 * (b - a),
            scale: q / (2.0 * std::f64::consts::PI),
        }
    }

    fn integrand(&self, theta: f64) -> f64 {
        let (s, co) = (0.5 * theta).sin_cos();
        let s2 = s * s;
        // c - h cos θ == a + 2h sin²(θ/2), without cancellation near θ = 0
        let denom = self.a + 2.0 * self.h * s2;
        let num = 4.0 * s2 * co * co * self.h * self.h;
        if num == 0.0 {
            0.0
        } else {
            num / denom
        }
    }

    fn theta(&self, x: f64) -> f64 {
        ((self.c - x) / self.h).clamp(-1.0, 1.0).acos()
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(mid);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(mid - dx) + f(mid + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, lo, hi);
        if err <= tol || depth == 0 {
            return val;
        }
        let mid = 0.5 * (lo + hi);
        rec(f, lo, mid, 0.5 * tol, depth - 1) + rec(f, mid, hi, 0.5 * tol, depth - 1)
    }
    if hi <= lo {
        return 0.0;
    }
    rec(f, lo, hi, tol, 30)
}

const CDF_TOL: f64 = 1e-13;

/// Marchenko–Pastur CDF at `lambda` for scale `sigma` and aspect ratio `q`.
pub fn mp_cdf(lambda: f64, sigma: f64, q: f64) -> Result<f64> {
    check_params(sigma, q)?;
    let x = lambda / (sigma * sigma);
    let form = AngleForm::new(q);
    let (a, b) = (form.a, form.c + form.h);
    if x <= a {
        return Ok(0.0);
    }
    if x >= b {
        return Ok(1.0);
    }
    let th = form.theta(x);
    let v = form.scale * integrate(&|t| form.integrand(t), 0.0, th, CDF_TOL / form.scale);
    Ok(v.clamp(0.0, 1.0))
}

/// CDF at every point of an ascending slice, integrating piecewise between
/// consecutive points.
pub fn mp_cdf_sorted(sorted: &[f64], sigma: f64, q: f64) -> Result<Vec<f64>> {
    check_params(sigma, q)?;
    let form = AngleForm::new(q);
    let s2 = sigma * sigma;
    let f = |t: f64| form.integrand(t);
    let tol = CDF_TOL / form.scale / (sorted.len().max(1) as f64);
    let mut out = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &lambda in sorted {
        let th = form.theta(lambda / s2);
        if th > prev {
            acc += integrate(&f, prev, th, tol);
            prev = th;
        }
        out.push((form.scale * acc).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Survival function of the Kolmogorov distribution, `P(K > t)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        // P(K <= t) = √(2π)/t Σ exp(-(2k-1)²π²/(8t²))
        let pi2 = std::f64::consts::PI.powi(2);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * pi2 / (8.0 * t * t)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            sf += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

/// Kolmogorov–Smirnov statistic of `sample` (ascending) against `cdf`, with the
/// asymptotic p-value at `√n·D`.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::BadParams("ks_test sample must be sorted".into()));
    }
    let values: Vec<f64> = sample.iter().map(|&x| cdf(x)).collect();
    let d = ks_distance(&values, sample.len());
    Ok((d, kolmogorov_sf((sample.len() as f64).sqrt() * d)))
}

/// KS distance for CDF values at the lowest `cdf_values.len()` order statistics
/// of a sample of size `n_total`. With `n_total == cdf_values.len()` this is
/// the ordinary statistic.
pub(crate) fn ks_distance(cdf_values: &[f64], n_total: usize) -> f64 {
    let n = n_total as f64;
    cdf_values
        .iter()
        .enumerate()
        .fold(0.0_f64, |d, (i, &f)| {
            let hi = (i + 1) as f64 / n - f;
            let lo = f - i as f64 / n;
            d.max(hi).max(lo)
        })
}

/// Which eigenvalues feed the MP fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimPolicy {
    /// Fraction of the largest eigenvalues dropped before fitting (rounded up).
    pub top_fraction: f64,
}

impl Default for TrimPolicy {
    fn default() -> Self {
        Self { top_fraction: 0.02 }
    }
}

/// Fitted Marchenko–Pastur bulk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MPFit {
    pub sigma_mp: f64,
    pub q: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub ks_stat: f64,
    pub p_value: f64,
    pub n_bulk: usize,
}

pub const MIN_FIT_EIGENVALUES: usize = 20;

const SCAN_POINTS: usize = 121;
const GOLDEN_RTOL: f64 = 1e-6;

/// Fits σ by minimizing the KS distance between the trimmed bulk and the MP law.
///
/// The trimmed-away top eigenvalues are still counted in the empirical CDF
/// (ranks are `i/n`, not `i/n_bulk`), so the bulk is compared against the lower
/// part of the MP law rather than a renormalized one. The σ search runs a
/// log-spaced scan of `[0.1σ̂, 10σ̂]` followed by golden-section refinement
/// around the best scan point, since the objective is flat far from the bulk.
pub fn fit_mp(spec: &Spectrum, trim: TrimPolicy) -> Result<MPFit> {
    let n = spec.len();
    if n < MIN_FIT_EIGENVALUES {
        return Err(Error::TooFewEigenvalues {
            needed: MIN_FIT_EIGENVALUES,
            available: n,
        });
    }
    if !(0.0..1.0).contains(&trim.top_fraction) {
        return Err(Error::BadParams(format!(
            "trim fraction must be in [0, 1), got {}",
            trim.top_fraction
        )));
    }
    let n_trim = (trim.top_fraction * n as f64).ceil() as usize;
    let bulk: Vec<f64> = spec.eigenvalues[n_trim..].iter().rev().copied().collect();
    let q = spec.q;
    let objective = |sigma: f64| -> f64 {
        let cdf = mp_cdf_sorted(&bulk, sigma, q).expect("sigma > 0 and Q >= 1");
        ks_distance(&cdf, n)
    };

    let sigma_hat = (spec.eigenvalues.iter().sum::<f64>() / n as f64).sqrt();
    let (lo, hi) = (0.1 * sigma_hat, 10.0 * sigma_hat);
    let ratio = (hi / lo).powf(1.0 / (SCAN_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo * ratio.powi(i as i32)).collect();
    let scores: Vec<f64> = grid.iter().map(|&s| objective(s)).collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SCAN_POINTS - 1)];
    let (mut sigma, mut d) = golden_section(&objective, a, b, GOLDEN_RTOL);
    if scores[best] < d {
        sigma = grid[best];
        d = scores[best];
    }
    let (lambda_minus, lambda_plus) = mp_edges(sigma, q);
    Ok(MPFit {
        sigma_mp: sigma,
        q,
        lambda_minus,
        lambda_plus,
        ks_stat: d,
        p_value: kolmogorov_sf((bulk.len() as f64).sqrt() * d),
        n_bulk: bulk.len(),
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, rtol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > rtol * 0.5 * (a + b) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Trap cutoff `λ⁺·(1 + margin·M^{-2/3})`.
pub fn bulk_edge_threshold(fit: &MPFit, m: usize, margin: f64) -> f64 {
    fit.lambda_plus * (1.0 + margin * (m as f64).powf(-2.0 / 3.0))
}
