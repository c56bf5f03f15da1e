//! Interpretability probes: token-axis Fourier energy, the modular-addition
//! rule kernel, attention key banks, and receptive-field back-projection for
//! the MLP.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::{ModAddTransformer, Model, CTX};
use crate::store::WeightMatrix;

pub const TOP_FREQS: usize = 6;
pub const TOP_PREFERENCE: usize = 5;

/// Normalized per-frequency power of a token-indexed matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DftProfile {
    /// Mean squared magnitude over feature columns, before normalization.
    pub power: Vec<f64>,
    pub energies: Vec<f64>,
    pub top_idx: Vec<usize>,
    pub non_dc_mass: f64,
}

impl DftProfile {
    /// Largest energy divided by the median energy.
    pub fn peak_to_median(&self) -> f64 {
        let mut e = self.energies.clone();
        e.sort_by(f64::total_cmp);
        let median = if e.len() % 2 == 1 {
            e[e.len() / 2]
        } else {
            0.5 * (e[e.len() / 2 - 1] + e[e.len() / 2])
        };
        e[e.len() - 1] / median
    }
}

/// Indices of the `k` largest values, larger first, lower index on ties.
pub fn top_k_desc(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-frequency power of the columns of a `p x d` row-major matrix under the
/// unitary DFT along the token axis.
fn column_power(m: &[f64], p: usize, d: usize) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(p);
    let scale = 1.0 / p as f64;
    let per_col: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut buf: Vec<Complex<f64>> = (0..p).map(|t| Complex::new(m[t * d + j], 0.0)).collect();
            fft.process(&mut buf);
            buf.iter().map(|c| c.norm_sqr() * scale).collect()
        })
        .collect();
    let mut power = vec![0.0; p];
    for col in &per_col {
        for (acc, x) in power.iter_mut().zip(col) {
            *acc += x;
        }
    }
    for x in &mut power {
        *x /= d as f64;
    }
    power
}

pub fn token_dft_energy(m: &[f64], p: usize, d: usize) -> Result<DftProfile> {
    if p < 2 || d == 0 || m.len() != p * d {
        return Err(Error::BadParams(format!(
            "token matrix of {} entries is not {p}x{d} with p >= 2, d >= 1",
            m.len()
        )));
    }
    let power = column_power(m, p, d);
    let total: f64 = power.iter().sum();
    let energies: Vec<f64> = if total > 0.0 {
        power.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; p]
    };
    Ok(DftProfile {
        top_idx: top_k_desc(&energies, TOP_FREQS),
        non_dc_mass: energies[1..].iter().sum(),
        energies,
        power,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleKernel {
    /// Centered mean logit per answer offset `Δ = z - (x + y) mod p`.
    pub k: Vec<f64>,
    pub top_deltas: Vec<usize>,
    /// `|k̂(f)|²` under the unitary DFT.
    pub dft_power: Vec<f64>,
    pub dft_top: Vec<usize>,
}

/// Rule kernel of a `p x p x p` logit table indexed `[x][y][z]`.
pub fn rule_kernel(logits: &[f64], p: usize) -> Result<RuleKernel> {
    if p < 2 || logits.len() != p * p * p {
        return Err(Error::BadParams(format!(
            "logit table of {} entries is not {p}^3",
            logits.len()
        )));
    }
    let mut k = vec![0.0; p];
    for x in 0..p {
        for y in 0..p {
            let row = &logits[(x * p + y) * p..][..p];
            let s = (x + y) % p;
            for (delta, kd) in k.iter_mut().enumerate() {
                *kd += row[(s + delta) % p];
            }
        }
    }
    let n = (p * p) as f64;
    for v in &mut k {
        *v /= n;
    }
    let mean = k.iter().sum::<f64>() / p as f64;
    for v in &mut k {
        *v -= mean;
    }
    let dft_power = column_power(&k, p, 1);
    Ok(RuleKernel {
        top_deltas: top_k_desc(&k, TOP_FREQS),
        dft_top: top_k_desc(&dft_power, TOP_FREQS),
        k,
        dft_power,
    })
}

/// Numeric-token logits for every `[x, y, =]` input, indexed `[x][y][z]`.
pub fn modadd_logit_table(model: &ModAddTransformer) -> Result<Vec<f64>> {
    let (p, v) = (model.p, model.vocab());
    let eq = model.equals_token();
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|x| {
            let toks: Vec<[usize; CTX]> = (0..p).map(|y| [x, y, eq]).collect();
            let full = model.forward_modadd(&toks)?;
            Ok(full.chunks_exact(v).flat_map(|r| r[..p].iter().copied()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Token embedding rows for the numeric tokens, `p x d_model`.
pub fn embedding_matrix(model: &ModAddTransformer) -> Vec<f64> {
    let e = &model.param("embed.embed").expect("embedding present").data;
    e[..model.p * model.d_model].to_vec()
}

/// Unembedding columns for the numeric tokens, transposed to `p x d_model`.
pub fn unembedding_matrix(model: &ModAddTransformer) -> Vec<f64> {
    let (p, d, v) = (model.p, model.d_model, model.vocab());
    let u = &model.param("unembed.unembed").expect("unembedding present").data;
    let mut out = vec![0.0; p * d];
    for j in 0..d {
        for t in 0..p {
            out[t * d + j] = u[j * v + t];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadKeys {
    /// Position-0 keys on `[x, 0, =]`, `p x d_head`.
    pub k0: Vec<f64>,
    /// Position-1 keys on `[0, y, =]`, `p x d_head`.
    pub k1: Vec<f64>,
    pub q_eq: Vec<f64>,
    pub gram_lambda_max0: f64,
    pub gram_lambda_max1: f64,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub top_s0: Vec<usize>,
    pub top_s1: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyBank {
    pub p: usize,
    pub d_head: usize,
    pub heads: Vec<HeadKeys>,
}

impl KeyBank {
    /// Both keys concatenated over heads, `p x (heads * d_head)` each.
    pub fn concat_keys(&self) -> (Vec<f64>, Vec<f64>) {
        let (p, dh, nh) = (self.p, self.d_head, self.heads.len());
        let mut a = vec![0.0; p * dh * nh];
        let mut b = a.clone();
        for (h, hk) in self.heads.iter().enumerate() {
            for t in 0..p {
                a[t * dh * nh + h * dh..][..dh].copy_from_slice(&hk.k0[t * dh..][..dh]);
                b[t * dh * nh + h * dh..][..dh].copy_from_slice(&hk.k1[t * dh..][..dh]);
            }
        }
        (a, b)
    }
}

/// Largest eigenvalue of `G = K°K°ᵀ / d` for a `p x d` key table `K`, where
/// `K°` subtracts the mean over tokens.
pub fn centered_gram_lambda_max(keys: &[f64], p: usize, d: usize) -> f64 {
    let mut k = DMatrix::from_row_slice(p, d, keys);
    let mean: DVector<f64> = k.row_mean().transpose();
    for mut row in k.row_iter_mut() {
        row -= mean.transpose();
    }
    // K°ᵀK° shares its nonzero spectrum with K°K°ᵀ and is only d x d.
    let small = k.tr_mul(&k) / d as f64;
    SymmetricEigen::new(small)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

fn preference(keys: &[f64], q: &[f64], d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    keys.chunks_exact(d)
        .map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect()
}

/// Keys from the probe inputs `[x, 0, =]`, `[0, y, =]` and the equals-position
/// query from `[0, 0, =]`, split per head.
pub fn extract_key_bank(model: &ModAddTransformer) -> KeyBank {
    let (p, d, dh) = (model.p, model.d_model, model.d_head);
    let eq = model.equals_token();
    let (q_table, k_tables) = model.qk_tables();
    let heads = (0..model.heads)
        .into_par_iter()
        .map(|h| {
            let off = h * dh;
            let slice = |table: &[f64]| -> Vec<f64> {
                (0..p)
                    .flat_map(|t| table[t * d + off..][..dh].iter().copied())
                    .collect()
            };
            let k0 = slice(&k_tables[0]);
            let k1 = slice(&k_tables[1]);
            let q_eq = q_table[eq * d + off..][..dh].to_vec();
            let s0 = preference(&k0, &q_eq, dh);
            let s1 = preference(&k1, &q_eq, dh);
            let abs = |s: &[f64]| s.iter().map(|x| x.abs()).collect::<Vec<_>>();
            HeadKeys {
                gram_lambda_max0: centered_gram_lambda_max(&k0, p, dh),
                gram_lambda_max1: centered_gram_lambda_max(&k1, p, dh),
                top_s0: top_k_desc(&abs(&s0), TOP_PREFERENCE),
                top_s1: top_k_desc(&abs(&s1), TOP_PREFERENCE),
                k0,
                k1,
                q_eq,
                s0,
                s1,
            }
        })
        .collect();
    KeyBank { p, d_head: dh, heads }
}

/// `vᵀ · chain[0] · chain[1] ⋯`, each matrix in its native `out x in` layout.
pub fn back_project(v: &[f64], chain: &[WeightMatrix]) -> Result<Vec<f64>> {
    let mut cur = DVector::from_column_slice(v);
    for w in chain {
        let m = w.native_dmatrix();
        if m.nrows() != cur.len() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: cur.len(),
            });
        }
        cur = m.tr_mul(&cur);
    }
    Ok(cur.as_slice().to_vec())
}

/// The `k` rows of `w1` (native layout) with the largest `|v_i|`, lower index
/// first on ties.
pub fn top_rows_by_coeff(w1: &WeightMatrix, v: &[f64], k: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let m = w1.native_dmatrix();
    if v.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: v.len(),
        });
    }
    if k > m.nrows() {
        return Err(Error::KTooLarge {
            k,
            available: m.nrows(),
        });
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    Ok(top_k_desc(&abs, k)
        .into_iter()
        .map(|i| (i, m.row(i).iter().copied().collect()))
        .collect())
}

/// Bias-corrected sample excess kurtosis; needs at least four values.
pub fn kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 4 {
        return Err(Error::BadParams(format!("kurtosis needs >= 4 values, got {n}")));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in x {
        let d2 = (v - mean) * (v - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m4 /= nf;
    if m2 == 0.0 {
        return Err(Error::DegenerateMatrix("kurtosis of a constant vector".into()));
    }
    let g2 = m4 / (m2 * m2) - 3.0;
    Ok(((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)))
}

/// Whether the top frequency indices pair up as `{f, p - f}`.
pub fn frequencies_paired(top: &[usize], p: usize) -> bool {
    top.iter()
        .all(|&f| f != 0 && top.contains(&((p - f) % p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::{init_transformer, ModAddConfig};
    use crate::rng::rng;
    use crate::store::LayerTag;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    /// Direct O(p²) unitary DFT power.
    fn naive_power(m: &[f64], p: usize, d: usize) -> Vec<f64> {
        (0..p)
            .map(|f| {
                (0..d)
                    .map(|j| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for t in 0..p {
                            let ang = -2.0 * PI * (f * t) as f64 / p as f64;
                            re += m[t * d + j] * ang.cos();
                            im += m[t * d + j] * ang.sin();
                        }
                        (re * re + im * im) / p as f64
                    })
                    .sum::<f64>()
                    / d as f64
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pure_tone_splits_between_pair() {
        let p = 113;
        let m: Vec<f64> = (0..p).map(|t| (2.0 * PI * 5.0 * t as f64 / p as f64).cos()).collect();
        let prof = token_dft_energy(&m, p, 1).unwrap();
        assert!((prof.energies[5] - 0.5).abs() < 1e-12);
        assert!((prof.energies[108] - 0.5).abs() < 1e-12);
        assert_eq!(&prof.top_idx[..2], &[5, 108]);
        assert!((prof.non_dc_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_all_dc() {
        let prof = token_dft_energy(&[2.5; 11], 11, 1).unwrap();
        assert!((prof.energies[0] - 1.0).abs() < 1e-12);
        assert!(prof.non_dc_mass.abs() < 1e-12);
    }

    #[test]
    fn fft_matches_naive_dft() {
        let (p, d) = (13, 4);
        let m = random(p * d, 3);
        let fast = token_dft_energy(&m, p, d).unwrap().power;
        for (a, b) in fast.iter().zip(naive_power(&m, p, d)) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn indicator_kernel() {
        let p = 7;
        let mut l = vec![0.0; p * p * p];
        for x in 0..p {
            for y in 0..p {
                l[(x * p + y) * p + (x + y) % p] = 1.0;
            }
        }
        let k = rule_kernel(&l, p).unwrap();
        assert_eq!(k.k[0], 1.0 - 1.0 / p as f64);
        for d in 1..p {
            assert_eq!(k.k[d], -1.0 / p as f64);
        }
        assert_eq!(k.top_deltas[0], 0);
        let flat = rule_kernel(&vec![3.0; p * p * p], p).unwrap();
        assert!(flat.k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_attention_gives_empty_key_bank() {
        let cfg = ModAddConfig {
            p: 7,
            d_model: 8,
            d_mlp: 4,
            heads: 2,
            d_head: 4,
            ..ModAddConfig::default()
        };
        let mut m = init_transformer(&cfg).unwrap();
        for p in m.params_mut() {
            if p.tag == LayerTag::Attention {
                p.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let kb = extract_key_bank(&m);
        for h in &kb.heads {
            assert!(h.k0.iter().chain(&h.k1).all(|&x| x == 0.0));
            assert_eq!(h.gram_lambda_max0, 0.0);
            assert!(h.s0.iter().chain(&h.s1).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn key_bank_matches_manual_projection() {
        let cfg = ModAddConfig {
            p: 5,
            d_model: 6,
            d_mlp: 4,
            heads: 2,
            d_head: 3,
            ..ModAddConfig::default()
        };
        let m = init_transformer(&cfg).unwrap();
        let e = &m.param("embed.embed").unwrap().data;
        let pos = &m.param("pos_embed.pos").unwrap().data;
        let wk = &m.param("blocks.0.attn.W_K").unwrap().data;
        let kb = extract_key_bank(&m);
        // Key of token 3 at position 1, head 1.
        let x: Vec<f64> = (0..6).map(|j| e[3 * 6 + j] + pos[6 + j]).collect();
        for c in 0..3 {
            let want: f64 = (0..6).map(|i| x[i] * wk[i * 6 + 3 + c]).sum();
            assert!((kb.heads[1].k1[3 * 3 + c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn back_projection_examples() {
        let w = WeightMatrix::new("w", 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], LayerTag::Dense).unwrap();
        assert_eq!(back_project(&[1.0, 0.0], &[w.clone()]).unwrap(), vec![1.0, 2.0, 3.0]);
        let id = WeightMatrix::new("i", 2, 2, vec![1.0, 0.0, 0.0, 1.0], LayerTag::Dense).unwrap();
        assert_eq!(back_project(&[0.3, -0.7], &[id]).unwrap(), vec![0.3, -0.7]);
        assert!(matches!(
            back_project(&[1.0, 0.0, 0.0], &[w]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn top_rows_examples() {
        let w = WeightMatrix::new("w", 3, 2, (0..6).map(f64::from).collect(), LayerTag::Dense).unwrap();
        let one = top_rows_by_coeff(&w, &[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(one, vec![(1, vec![2.0, 3.0])]);
        let order: Vec<usize> = top_rows_by_coeff(&w, &[0.5, -0.5, 0.9], 3)
            .unwrap()
            .into_iter()
            .map(|r| r.0)
            .collect();
        assert_eq!(order, vec![2, 0, 1]);
        assert!(matches!(
            top_rows_by_coeff(&w, &[1.0, 0.0, 0.0], 4),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn kurtosis_reference_values() {
        // Bias-corrected excess kurtosis of 1..=5 is -1.2.
        assert!((kurtosis(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap() + 1.2).abs() < 1e-12);
        let spike = kurtosis(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        assert!((spike - 8.0).abs() < 1e-12);
        assert!(kurtosis(&[1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn pairing_check() {
        assert!(frequencies_paired(&[5, 108, 7, 106], 113));
        assert!(!frequencies_paired(&[5, 108, 7], 113));
        assert!(!frequencies_paired(&[0, 5, 108], 113));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dft_symmetry_and_parseval(p in 2usize..40, d in 1usize..6, seed in 0u64..1000) {
            let m = random(p * d, seed);
            let prof = token_dft_energy(&m, p, d).unwrap();
            let sum: f64 = prof.energies.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for f in 1..p {
                prop_assert!((prof.energies[f] - prof.energies[p - f]).abs() < 1e-12);
            }
            let fro: f64 = m.iter().map(|x| x * x).sum::<f64>() / d as f64;
            let total: f64 = prof.power.iter().sum();
            prop_assert!((total - fro).abs() <= 1e-9 * fro);
        }

        #[test]
        fn kernel_centered_and_symmetric(p in 2usize..12, seed in 0u64..1000) {
            let k = rule_kernel(&random(p * p * p, seed), p).unwrap();
            prop_assert!(k.k.iter().sum::<f64>().abs() < 1e-9);
            for f in 1..p {
                prop_assert!((k.dft_power[f] - k.dft_power[p - f]).abs() < 1e-12);
            }
        }

        #[test]
        fn gram_ignores_constant_shift_and_rotation(seed in 0u64..1000) {
            let (p, d) = (17, 5);
            let keys = random(p * d, seed);
            let base = centered_gram_lambda_max(&keys, p, d);
            let shift = random(d, seed + 1);
            let shifted: Vec<f64> = keys.iter().enumerate().map(|(i, x)| x + 3.0 * shift[i % d]).collect();
            prop_assert!((centered_gram_lambda_max(&shifted, p, d) - base).abs() < 1e-12 * (1.0 + base));
            let q = DMatrix::from_row_slice(d, d, &random(d * d, seed + 2)).qr().q();
            let rotated = DMatrix::from_row_slice(p, d, &keys) * q;
            let rot: Vec<f64> = (0..p).flat_map(|i| rotated.row(i).iter().copied().collect::<Vec<_>>()).collect();
            prop_assert!((centered_gram_lambda_max(&rot, p, d) - base).abs() < 1e-10 * (1.0 + base));
        }
    }
}
