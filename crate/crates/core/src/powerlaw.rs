//! Power-law tail fits of an ESD and the heavy-tail regime taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmt::ks_distance;
use crate::spectral::Spectrum;

/// Continuous power-law MLE `α = 1 + n / Σ ln(λ_i / xmin)`.
pub fn mle_alpha(tail: &[f64], xmin: f64) -> Result<f64> {
    if tail.is_empty() {
        return Err(Error::EmptyTail);
    }
    if !(xmin.is_finite() && xmin > 0.0) {
        return Err(Error::ZeroXmin(xmin));
    }
    let mut log_sum = 0.0;
    for &x in tail {
        if !(x >= xmin) {
            return Err(Error::BadParams(format!("tail value {x} below xmin {xmin}")));
        }
        log_sum += (x / xmin).ln();
    }
    if log_sum <= 0.0 {
        return Err(Error::DegenerateTail);
    }
    Ok(1.0 + tail.len() as f64 / log_sum)
}

/// Pareto CDF `1 - (x/xmin)^{1-α}` for `x >= xmin`.
pub fn pareto_cdf(x: f64, xmin: f64, alpha: f64) -> f64 {
    if x <= xmin {
        0.0
    } else {
        1.0 - (x / xmin).powf(1.0 - alpha)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PLWarning {
    #[default]
    None,
    /// Fewer than `thin_tail` points above the chosen xmin.
    ThinTail,
    /// The chosen xmin sits in the lowest decile: the whole ESD looks power-law.
    FullSpectrumPL,
    /// The layer also has correlation traps, which can bias the tail.
    TrapContaminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PLOptions {
    pub min_tail: usize,
    pub thin_tail: usize,
    /// Fraction of the spectrum (from the bottom) in which a chosen xmin
    /// triggers [`PLWarning::FullSpectrumPL`].
    pub full_spectrum_fraction: f64,
}

impl Default for PLOptions {
    fn default() -> Self {
        Self {
            min_tail: 8,
            thin_tail: 16,
            full_spectrum_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PLFit {
    pub alpha: f64,
    pub lambda_min_fit: f64,
    pub lambda_max: f64,
    pub d_ks: f64,
    pub n_tail: usize,
    pub warning: PLWarning,
}

/// KS distance of the ascending `tail` against the Pareto fitted at `tail[0]`.
fn tail_candidate(tail: &[f64]) -> Option<(f64, f64)> {
    let xmin = tail[0];
    let alpha = mle_alpha(tail, xmin).ok()?;
    let cdf: Vec<f64> = tail.iter().map(|&x| pareto_cdf(x, xmin, alpha)).collect();
    Some((alpha, ks_distance(&cdf, tail.len())))
}

/// KS distance of a tail given by its logs, or `None` as soon as it reaches `bound`.
fn ks_below(logs: &[f64], alpha: f64, bound: f64) -> Option<f64> {
    let (l0, m) = (logs[0], logs.len() as f64);
    let mut d = 0.0_f64;
    for (i, &l) in logs.iter().enumerate() {
        let f = -((1.0 - alpha) * (l - l0)).exp_m1();
        d = d.max((i + 1) as f64 / m - f).max(f - i as f64 / m);
        if d >= bound {
            return None;
        }
    }
    Some(d)
}

/// Scans every distinct eigenvalue as xmin and keeps the KS-minimizing tail.
/// Ties go to the smaller xmin.
///
/// The scan uses suffix sums of `ln λ` for the MLE and abandons a candidate
/// once its KS distance reaches the best so far; the chosen tail is then
/// refitted exactly.
pub fn fit_powerlaw(spec: &Spectrum, opts: &PLOptions) -> Result<PLFit> {
    let min_tail = opts.min_tail.max(2);
    let n = spec.len();
    if n < min_tail {
        return Err(Error::TooFewEigenvalues {
            needed: min_tail,
            available: n,
        });
    }
    let x = spec.ascending();
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + logs[i];
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 0..=n - min_tail {
        if j > 0 && x[j] == x[j - 1] {
            continue;
        }
        let m = (n - j) as f64;
        let log_sum = suffix[j] - m * logs[j];
        if !(log_sum > 0.0) {
            continue;
        }
        let bound = best.map_or(f64::INFINITY, |b| b.1);
        if let Some(d) = ks_below(&logs[j..], 1.0 + m / log_sum, bound) {
            best = Some((j, d));
        }
    }
    let j = best.ok_or(Error::DegenerateTail)?.0;
    let (alpha, d_ks) = tail_candidate(&x[j..]).ok_or(Error::DegenerateTail)?;
    let n_tail = n - j;
    let warning = if (j as f64) < opts.full_spectrum_fraction * n as f64 {
        PLWarning::FullSpectrumPL
    } else if n_tail < opts.thin_tail {
        PLWarning::ThinTail
    } else {
        PLWarning::None
    };
    Ok(PLFit {
        alpha,
        lambda_min_fit: x[j],
        lambda_max: x[n - 1],
        d_ks,
        n_tail,
        warning,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HtsrRegime {
    RandomLike,
    FatTailed,
    Ideal,
    VeryHeavyTailed,
}

impl HtsrRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            HtsrRegime::RandomLike => "random_like",
            HtsrRegime::FatTailed => "fat_tailed",
            HtsrRegime::Ideal => "ideal",
            HtsrRegime::VeryHeavyTailed => "very_heavy_tailed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeBands {
    /// Hard lower bound; below it the layer is very heavy-tailed.
    pub vht_below: f64,
    /// Half-width of the band around 2 counted as ideal.
    pub ideal_halfwidth: f64,
    pub random_like_from: f64,
}

impl Default for RegimeBands {
    fn default() -> Self {
        Self {
            vht_below: 2.0,
            ideal_halfwidth: 0.2,
            random_like_from: 6.0,
        }
    }
}

pub fn classify_regime(alpha: f64, bands: &RegimeBands) -> HtsrRegime {
    if alpha < bands.vht_below {
        HtsrRegime::VeryHeavyTailed
    } else if alpha <= 2.0 + bands.ideal_halfwidth {
        HtsrRegime::Ideal
    } else if alpha >= bands.random_like_from {
        HtsrRegime::RandomLike
    } else {
        HtsrRegime::FatTailed
    }
}
