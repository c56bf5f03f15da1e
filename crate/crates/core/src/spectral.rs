//! Empirical spectral densities, singular triplets and elementwise shuffles.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::{LayerTag, WeightMatrix};

/// Eigenvalues below `RANK_CUTOFF * λ_max` are treated as zero modes.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Eigenvalues of `X = (1/N) WᵀW`, sorted descending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Aspect ratio `N/M >= 1`.
    pub q: f64,
    pub n_zero_excluded: usize,
    /// Sum of the excluded eigenvalues, kept so that the trace is recoverable.
    pub excluded_mass: f64,
}

impl Spectrum {
    /// Wraps precomputed positive eigenvalues (any order).
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>, q: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 1.0) {
            return Err(Error::BadParams(format!("aspect ratio Q must be >= 1, got {q}")));
        }
        if eigenvalues.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::BadParams("eigenvalues must be finite and positive".into()));
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            eigenvalues,
            q,
            n_zero_excluded: 0,
            excluded_mass: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Retained eigenvalues in ascending order.
    pub fn ascending(&self) -> Vec<f64> {
        self.eigenvalues.iter().rev().copied().collect()
    }

    /// Total trace, including the excluded zero modes.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() + self.excluded_mass
    }

    /// Every eigenvalue multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            eigenvalues: self.eigenvalues.iter().map(|v| v * c).collect(),
            q: self.q,
            n_zero_excluded: self.n_zero_excluded,
            excluded_mass: self.excluded_mass * c,
        }
    }
}

pub fn esd(w: &WeightMatrix) -> Result<Spectrum> {
    esd_with_cutoff(w, RANK_CUTOFF)
}

/// ESD from the singular values of `W`, never forming `WᵀW`.
pub fn esd_with_cutoff(w: &WeightMatrix, cutoff: f64) -> Result<Spectrum> {
    let n = w.rows() as f64;
    let sv = w.to_dmatrix().singular_values();
    let mut lambdas: Vec<f64> = sv.iter().map(|s| s * s / n).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let lambda_max = lambdas.first().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateMatrix(w.layer_id().to_owned()));
    }
    let floor = cutoff * lambda_max;
    let keep = lambdas.iter().take_while(|&&l| l > floor).count();
    let excluded_mass = lambdas[keep..].iter().sum();
    let n_zero_excluded = lambdas.len() - keep;
    lambdas.truncate(keep);
    Ok(Spectrum {
        eigenvalues: lambdas,
        q: w.aspect_ratio(),
        n_zero_excluded,
        excluded_mass,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularTriplet {
    pub sigma: f64,
    /// Left vector, length `N` (canonical rows).
    pub u: Vec<f64>,
    /// Right vector, length `M` (canonical cols).
    pub v: Vec<f64>,
}

/// Leading `k` singular triplets of the canonical matrix.
///
/// Signs are fixed so that the largest-magnitude entry of each `v` is positive.
pub fn top_singular_triplets(w: &WeightMatrix, k: usize) -> Result<Vec<SingularTriplet>> {
    let available = w.rows().min(w.cols());
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(svd_triplets(&w.to_dmatrix(), k))
}

pub(crate) fn svd_triplets(m: &DMatrix<f64>, k: usize) -> Vec<SingularTriplet> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vt");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order
        .into_iter()
        .take(k)
        .map(|j| {
            let mut uj: Vec<f64> = u.column(j).iter().copied().collect();
            let mut vj: Vec<f64> = vt.row(j).iter().copied().collect();
            let pivot = vj
                .iter()
                .copied()
                .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if pivot < 0.0 {
                uj.iter_mut().for_each(|x| *x = -*x);
                vj.iter_mut().for_each(|x| *x = -*x);
            }
            SingularTriplet {
                sigma: svd.singular_values[j],
                u: uj,
                v: vj,
            }
        })
        .collect()
}

/// `rows x cols` matrix of i.i.d. `N(0, sigma²)` entries.
pub fn gaussian_matrix(
    layer_id: &str,
    rows: usize,
    cols: usize,
    sigma: f64,
    seed: u64,
) -> Result<WeightMatrix> {
    let mut r = rng::rng(seed);
    let entries = (0..rows * cols)
        .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut r))
        .collect();
    WeightMatrix::new(layer_id, rows, cols, entries, LayerTag::Dense)
}

/// Uniform random permutation of all entries (Fisher–Yates), shape preserved.
pub fn shuffle_elements(w: &WeightMatrix, seed: u64) -> WeightMatrix {
    let mut entries = w.entries().to_vec();
    entries.shuffle(&mut rng::rng(seed));
    w.with_entries(entries)
        .expect("a permutation of valid entries is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;
    use proptest::prelude::*;

    fn sorted_bits(w: &WeightMatrix) -> Vec<u64> {
        let mut v: Vec<u64> = w.entries().iter().map(|x| x.to_bits()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn scaled_identity_has_unit_spectrum() {
        let n = 17;
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = (n as f64).sqrt();
        }
        let s = esd(&WeightMatrix::new("i", n, n, e, LayerTag::Dense).unwrap()).unwrap();
        assert_eq!(s.len(), n);
        for l in s.eigenvalues {
            assert!((l - 1.0).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let w = WeightMatrix::new("z", 4, 3, vec![0.0; 12], LayerTag::Dense).unwrap();
        assert!(matches!(esd(&w), Err(Error::DegenerateMatrix(_))));
    }

    #[test]
    fn rank_deficient_counts_zero_modes() {
        // rank 1, 5x3
        let u = [1.0, -2.0, 0.5, 3.0, 1.0];
        let v = [2.0, 1.0, -1.0];
        let e = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let w = WeightMatrix::new("r1", 5, 3, e, LayerTag::Dense).unwrap();
        let s = esd(&w).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.n_zero_excluded, 2);
        assert!((s.trace() - w.frobenius_sq() / 5.0).abs() < 1e-12 * s.trace());
    }

    #[test]
    fn gaussian_edge_near_mp_prediction() {
        // lambda+ = (1 + 1/2)^2 for Q = 4, sigma = 1
        let mut maxes = Vec::new();
        for seed in 0..10 {
            maxes.push(esd(&gaussian(2000, 500, 100 + seed)).unwrap().lambda_max());
        }
        let mean = maxes.iter().sum::<f64>() / maxes.len() as f64;
        assert!((mean / 2.25 - 1.0).abs() < 0.05, "mean lambda_max {mean}");
        assert!(maxes.iter().all(|m| (m / 2.25 - 1.0).abs() < 0.05));
    }

    #[test]
    fn rank_one_triplet() {
        let u = [0.6, 0.0, 0.8, 0.0];
        let v = [0.0, -1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let e = u.iter().flat_map(|a| v.iter().map(move |b| 3.0 * a * b)).collect();
        let w = WeightMatrix::new("r", 4, 3, e, LayerTag::Dense).unwrap();
        let t = top_singular_triplets(&w, 1).unwrap();
        assert!((t[0].sigma - 3.0).abs() < 1e-12);
        let dot: f64 = t[0].v.iter().zip(v).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        assert!(top_singular_triplets(&w, 0).unwrap().is_empty());
        assert!(matches!(
            top_singular_triplets(&w, 4),
            Err(Error::KTooLarge { k: 4, available: 3 })
        ));
    }

    #[test]
    fn svd_agrees_with_esd() {
        let w = gaussian(200, 784, 5);
        let s = esd(&w).unwrap();
        let t = top_singular_triplets(&w, 2).unwrap();
        let l = t[0].sigma * t[0].sigma / w.rows() as f64;
        assert!((l / s.lambda_max() - 1.0).abs() < 1e-9);
        assert!(t[0].sigma >= t[1].sigma);
        let m = w.to_dmatrix();
        for tr in &t {
            let mv = &m * nalgebra::DVector::from_column_slice(&tr.v);
            for (a, b) in mv.iter().zip(&tr.u) {
                assert!((a - tr.sigma * b).abs() <= 1e-8 * t[0].sigma);
            }
            let nu: f64 = tr.u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv: f64 = tr.v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((nu - 1.0).abs() < 1e-10 && (nv - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_decreases_with_k() {
        let w = gaussian(30, 12, 9);
        let m = w.to_dmatrix();
        let all = top_singular_triplets(&w, 12).unwrap();
        let mut prev = f64::INFINITY;
        let mut approx = DMatrix::<f64>::zeros(30, 12);
        for t in &all {
            approx += nalgebra::DVector::from_column_slice(&t.u)
                * nalgebra::RowDVector::from_row_slice(&t.v)
                * t.sigma;
            let r = (&m - &approx).norm();
            assert!(r <= prev);
            prev = r;
        }
        assert!(prev < 1e-10 * m.norm());
    }

    #[test]
    fn shuffle_one_by_one() {
        let w = WeightMatrix::new("s", 1, 1, vec![4.5], LayerTag::Dense).unwrap();
        assert_eq!(shuffle_elements(&w, 3), w);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shuffle_preserves_multiset(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
            let w = gaussian(rows, cols, seed);
            let s = shuffle_elements(&w, seed ^ 1);
            prop_assert_eq!(sorted_bits(&w), sorted_bits(&s));
            prop_assert_eq!(s.rows(), w.rows());
            prop_assert_eq!(s.cols(), w.cols());
            prop_assert_eq!(s.clone(), shuffle_elements(&w, seed ^ 1));
            let maxabs = |m: &WeightMatrix| m.entries().iter().fold(0.0f64, |a, b| a.max(b.abs()));
            prop_assert_eq!(maxabs(&w).to_bits(), maxabs(&s).to_bits());
        }

        #[test]
        fn trace_identity(rows in 2usize..40, cols in 2usize..40, seed in any::<u64>()) {
            let w = gaussian(rows, cols, seed);
            let fro = w.frobenius_sq() / w.rows() as f64;
            let s = esd(&w).unwrap();
            prop_assert!((s.trace() / fro - 1.0).abs() < 1e-9);
            let sh = esd(&shuffle_elements(&w, seed)).unwrap();
            prop_assert!((sh.trace() / s.trace() - 1.0).abs() < 1e-9);
            prop_assert!(s.q >= 1.0);
            prop_assert!(s.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
        }
    }
}
