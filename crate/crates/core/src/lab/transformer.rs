use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{add_row_bias, column_sums, gemm, matmul, relu_backward, relu_in_place};
use super::{AdamWConfig, Model, Param};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{CheckpointBundle, LabeledDataset, LayerTag};

pub const CTX: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModAddConfig {
    pub p: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub heads: usize,
    pub d_head: usize,
    pub train_fraction: f64,
    /// Weights are drawn from `N(0, (init_range/√d_model)²)`; biases start at 0.
    pub init_range: f64,
    /// `None` trains full-batch.
    pub batch: Option<usize>,
    pub optimizer: AdamWConfig,
    pub steps: u64,
    pub seed: u64,
    /// Seed for the train/test split; defaults to `seed`.
    pub data_seed: u64,
    pub snapshots_per_decade: u32,
}

impl Default for ModAddConfig {
    fn default() -> Self {
        Self {
            p: 113,
            d_model: 128,
            d_mlp: 512,
            heads: 4,
            d_head: 32,
            train_fraction: 0.3,
            init_range: 0.8,
            batch: None,
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 1.0,
                beta1: 0.9,
                beta2: 0.98,
                eps: 1e-8,
                warmup_steps: 10,
            },
            steps: 30_000,
            seed: 0,
            data_seed: 0,
            snapshots_per_decade: 10,
        }
    }
}

impl ModAddConfig {
    pub fn vocab(&self) -> usize {
        self.p + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads * self.d_head != self.d_model {
            return Err(Error::BadParams(format!(
                "heads * d_head ({} * {}) must equal d_model ({})",
                self.heads, self.d_head, self.d_model
            )));
        }
        if self.p < 2 || self.d_mlp == 0 || self.d_head == 0 {
            return Err(Error::BadParams("p >= 2 and positive widths required".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::BadParams(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

// Parameter slots.
const EMBED: usize = 0;
const POS: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const FC1: usize = 6;
const FC1_B: usize = 7;
const FC2: usize = 8;
const FC2_B: usize = 9;
const UNEMBED: usize = 10;

/// One-layer attention-only-then-MLP transformer without LayerNorm, reading
/// `[x, y, =]` and predicting `(x + y) mod p` at the last position. Matrices are
/// stored in `x·W` layout (`in x out`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModAddTransformer {
    pub p: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub heads: usize,
    pub d_head: usize,
    params: Vec<Param>,
}

pub fn init_transformer(cfg: &ModAddConfig) -> Result<ModAddTransformer> {
    cfg.validate()?;
    let (v, d, m) = (cfg.vocab(), cfg.d_model, cfg.d_mlp);
    let shapes: [(&str, usize, usize, LayerTag); 11] = [
        ("embed.embed", v, d, LayerTag::Embedding),
        ("pos_embed.pos", CTX, d, LayerTag::Embedding),
        ("blocks.0.attn.W_Q", d, d, LayerTag::Attention),
        ("blocks.0.attn.W_K", d, d, LayerTag::Attention),
        ("blocks.0.attn.W_V", d, d, LayerTag::Attention),
        ("blocks.0.attn.out_proj", d, d, LayerTag::Attention),
        ("blocks.0.mlp.fc1", d, m, LayerTag::Dense),
        ("blocks.0.mlp.fc1.bias", 1, m, LayerTag::Bias),
        ("blocks.0.mlp.fc2", m, d, LayerTag::Dense),
        ("blocks.0.mlp.fc2.bias", 1, d, LayerTag::Bias),
        ("unembed.unembed", d, v, LayerTag::Unembedding),
    ];
    let normal = Normal::new(0.0, cfg.init_range / (d as f64).sqrt())
        .map_err(|e| Error::BadParams(e.to_string()))?;
    let mut r = rng::rng(cfg.seed);
    let params = shapes
        .iter()
        .map(|&(id, rows, cols, tag)| {
            let mut p = Param::zeros(id, rows, cols, tag);
            if tag != LayerTag::Bias {
                for x in &mut p.data {
                    *x = normal.sample(&mut r);
                }
            }
            p
        })
        .collect();
    Ok(ModAddTransformer {
        p: cfg.p,
        d_model: d,
        d_mlp: m,
        heads: cfg.heads,
        d_head: cfg.d_head,
        params,
    })
}

struct Tables {
    /// Residual input per position, `vocab x d`: `E + P[j]`.
    resid: [Vec<f64>; CTX],
    q: Vec<f64>,
    k: [Vec<f64>; CTX],
    v: [Vec<f64>; CTX],
}

struct Forward {
    tokens: Vec<[usize; CTX]>,
    tables: Tables,
    /// Attention weights, `B x heads x CTX`.
    attn: Vec<f64>,
    z: Vec<f64>,
    x1: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    x2: Vec<f64>,
    logits: Vec<f64>,
}

impl ModAddTransformer {
    pub fn vocab(&self) -> usize {
        self.p + 1
    }

    pub fn equals_token(&self) -> usize {
        self.p
    }

    /// Rebuilds a model from a checkpoint, reading every width except the
    /// head count from the layer shapes.
    pub fn from_bundle(bundle: &CheckpointBundle, heads: usize) -> Result<Self> {
        let shape = |id: &str| {
            bundle.layer(id).map(|l| l.native_shape()).ok_or_else(|| {
                Error::ArchitectureMismatch(format!("checkpoint has no layer `{id}`"))
            })
        };
        let (vocab, d_model) = shape("embed.embed")?;
        let (_, d_mlp) = shape("blocks.0.mlp.fc1")?;
        if vocab < 3 || heads == 0 || d_model % heads != 0 {
            return Err(Error::ArchitectureMismatch(format!(
                "embedding {vocab}x{d_model} does not fit a modadd model with {heads} heads"
            )));
        }
        let cfg = ModAddConfig {
            p: vocab - 1,
            d_model,
            d_mlp,
            heads,
            d_head: d_model / heads,
            ..ModAddConfig::default()
        };
        let mut model = init_transformer(&cfg)?;
        model.load_bundle(bundle)?;
        Ok(model)
    }

    fn tokens(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<[usize; CTX]>> {
        if data.feature_dim() != CTX {
            return Err(Error::DimensionMismatch {
                expected: CTX,
                found: data.feature_dim(),
            });
        }
        let vocab = self.vocab();
        idx.iter()
            .map(|&i| {
                let s = data.sample(i);
                let mut t = [0usize; CTX];
                for (slot, &x) in t.iter_mut().zip(s) {
                    if !(x >= 0.0 && x.fract() == 0.0 && (x as usize) < vocab) {
                        return Err(Error::TokenOutOfRange {
                            token: x.max(0.0) as usize,
                            vocab,
                        });
                    }
                    *slot = x as usize;
                }
                Ok(t)
            })
            .collect()
    }

    fn tables(&self) -> Tables {
        let (v, d) = (self.vocab(), self.d_model);
        let e = &self.params[EMBED].data;
        let pos = &self.params[POS].data;
        let resid: [Vec<f64>; CTX] = std::array::from_fn(|j| {
            let mut r = e.clone();
            add_row_bias(&mut r, &pos[j * d..(j + 1) * d]);
            r
        });
        let proj = |r: &[f64], w: usize| matmul(false, false, v, d, d, r, &self.params[w].data);
        Tables {
            q: proj(&resid[CTX - 1], WQ),
            k: std::array::from_fn(|j| proj(&resid[j], WK)),
            v: std::array::from_fn(|j| proj(&resid[j], WV)),
            resid,
        }
    }

    /// Query table at the last position and key tables at each position,
    /// `vocab x d_model`, heads concatenated along columns.
    pub fn qk_tables(&self) -> (Vec<f64>, [Vec<f64>; CTX]) {
        let t = self.tables();
        (t.q, t.k)
    }

    fn forward_tokens(&self, tokens: Vec<[usize; CTX]>) -> Forward {
        let b = tokens.len();
        let (d, m, v, nh, dh) = (self.d_model, self.d_mlp, self.vocab(), self.heads, self.d_head);
        let tables = self.tables();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; b * nh * CTX];
        let mut z = vec![0.0; b * d];
        let mut x1 = vec![0.0; b * d];
        for (s, t) in tokens.iter().enumerate() {
            let q = &tables.q[t[CTX - 1] * d..][..d];
            for h in 0..nh {
                let off = h * dh;
                let mut scores = [0.0; CTX];
                for j in 0..CTX {
                    let k = &tables.k[j][t[j] * d + off..][..dh];
                    scores[j] = q[off..off + dh].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for sc in &mut scores {
                    *sc = (*sc - mx).exp();
                    sum += *sc;
                }
                let zs = &mut z[s * d + off..][..dh];
                for j in 0..CTX {
                    let a = scores[j] / sum;
                    attn[(s * nh + h) * CTX + j] = a;
                    let vv = &tables.v[j][t[j] * d + off..][..dh];
                    for (zz, x) in zs.iter_mut().zip(vv) {
                        *zz += a * x;
                    }
                }
            }
            x1[s * d..(s + 1) * d].copy_from_slice(&tables.resid[CTX - 1][t[CTX - 1] * d..][..d]);
        }
        gemm(false, false, b, d, d, 1.0, &z, &self.params[WO].data, 1.0, &mut x1);
        let mut pre = matmul(false, false, b, m, d, &x1, &self.params[FC1].data);
        add_row_bias(&mut pre, &self.params[FC1_B].data);
        let mut hidden = pre.clone();
        relu_in_place(&mut hidden);
        let mut x2 = x1.clone();
        gemm(false, false, b, d, m, 1.0, &hidden, &self.params[FC2].data, 1.0, &mut x2);
        add_row_bias(&mut x2, &self.params[FC2_B].data);
        let logits = matmul(false, false, b, v, d, &x2, &self.params[UNEMBED].data);
        Forward {
            tokens,
            tables,
            attn,
            z,
            x1,
            pre,
            hidden,
            x2,
            logits,
        }
    }

    /// Full-vocabulary logits at the last position for arbitrary token triples.
    pub fn forward_modadd(&self, tokens: &[[usize; CTX]]) -> Result<Vec<f64>> {
        let vocab = self.vocab();
        for t in tokens {
            if let Some(&bad) = t.iter().find(|&&x| x >= vocab) {
                return Err(Error::TokenOutOfRange { token: bad, vocab });
            }
        }
        Ok(self.forward_tokens(tokens.to_vec()).logits)
    }

    fn numeric_logits(&self, full: &[f64]) -> Vec<f64> {
        let v = self.vocab();
        full.chunks_exact(v).flat_map(|row| row[..self.p].iter().copied()).collect()
    }

    /// Mean cross-entropy over numeric tokens, and `dL/dlogits` (full vocab).
    fn cross_entropy(&self, logits: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
        let (v, p) = (self.vocab(), self.p);
        let b = labels.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; logits.len()];
        for (s, (row, &y)) in logits.chunks_exact(v).zip(labels).enumerate() {
            let row = &row[..p];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + sum.ln();
            loss += lse - row[y];
            for j in 0..p {
                let prob = (row[j] - lse).exp();
                grad[s * v + j] = (prob - if j == y { 1.0 } else { 0.0 }) / b;
            }
        }
        (loss / b, grad)
    }

    fn backward(&self, f: &Forward, dlogits: &[f64]) -> Vec<Vec<f64>> {
        let b = f.tokens.len();
        let (d, m, v, nh, dh) = (self.d_model, self.d_mlp, self.vocab(), self.heads, self.d_head);
        let pr = |i: usize| &self.params[i].data;
        let mut g: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.data.len()]).collect();

        g[UNEMBED] = matmul(true, false, d, v, b, &f.x2, dlogits);
        let dx2 = matmul(false, true, b, d, v, dlogits, pr(UNEMBED));

        g[FC2] = matmul(true, false, m, d, b, &f.hidden, &dx2);
        g[FC2_B] = column_sums(&dx2, d);
        let mut dpre = matmul(false, true, b, m, d, &dx2, pr(FC2));
        relu_backward(&mut dpre, &f.pre);
        g[FC1] = matmul(true, false, d, m, b, &f.x1, &dpre);
        g[FC1_B] = column_sums(&dpre, m);
        let mut dx1 = dx2;
        gemm(false, true, b, d, m, 1.0, &dpre, pr(FC1), 1.0, &mut dx1);

        g[WO] = matmul(true, false, d, d, b, &f.z, &dx1);
        let dz = matmul(false, true, b, d, d, &dx1, pr(WO));

        let mut d_resid: [Vec<f64>; CTX] = std::array::from_fn(|_| vec![0.0; v * d]);
        let mut dq_tab = vec![0.0; v * d];
        let mut dk_tab: [Vec<f64>; CTX] = std::array::from_fn(|_| vec![0.0; v * d]);
        let mut dv_tab: [Vec<f64>; CTX] = std::array::from_fn(|_| vec![0.0; v * d]);
        let scale = 1.0 / (dh as f64).sqrt();
        for (s, t) in f.tokens.iter().enumerate() {
            let last = t[CTX - 1];
            for (acc, x) in d_resid[CTX - 1][last * d..][..d].iter_mut().zip(&dx1[s * d..(s + 1) * d]) {
                *acc += x;
            }
            let q = &f.tables.q[last * d..][..d];
            for h in 0..nh {
                let off = h * dh;
                let dzh = &dz[s * d + off..][..dh];
                let a = &f.attn[(s * nh + h) * CTX..][..CTX];
                let mut da = [0.0; CTX];
                for j in 0..CTX {
                    let vv = &f.tables.v[j][t[j] * d + off..][..dh];
                    da[j] = dzh.iter().zip(vv).map(|(x, y)| x * y).sum();
                    for (acc, x) in dv_tab[j][t[j] * d + off..][..dh].iter_mut().zip(dzh) {
                        *acc += a[j] * x;
                    }
                }
                let mean_da: f64 = (0..CTX).map(|j| a[j] * da[j]).sum();
                for j in 0..CTX {
                    let ds = a[j] * (da[j] - mean_da) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let k = &f.tables.k[j][t[j] * d + off..][..dh];
                    for (acc, x) in dq_tab[last * d + off..][..dh].iter_mut().zip(k) {
                        *acc += ds * x;
                    }
                    for (acc, x) in dk_tab[j][t[j] * d + off..][..dh].iter_mut().zip(&q[off..off + dh]) {
                        *acc += ds * x;
                    }
                }
            }
        }

        g[WQ] = matmul(true, false, d, d, v, &f.tables.resid[CTX - 1], &dq_tab);
        gemm(false, true, v, d, d, 1.0, &dq_tab, pr(WQ), 1.0, &mut d_resid[CTX - 1]);
        for j in 0..CTX {
            gemm(true, false, d, d, v, 1.0, &f.tables.resid[j], &dk_tab[j], 1.0, &mut g[WK]);
            gemm(true, false, d, d, v, 1.0, &f.tables.resid[j], &dv_tab[j], 1.0, &mut g[WV]);
            gemm(false, true, v, d, d, 1.0, &dk_tab[j], pr(WK), 1.0, &mut d_resid[j]);
            gemm(false, true, v, d, d, 1.0, &dv_tab[j], pr(WV), 1.0, &mut d_resid[j]);
        }
        for j in 0..CTX {
            for (acc, x) in g[EMBED].iter_mut().zip(&d_resid[j]) {
                *acc += x;
            }
            let col = column_sums(&d_resid[j], d);
            g[POS][j * d..(j + 1) * d].copy_from_slice(&col);
        }
        g
    }
}

impl Model for ModAddTransformer {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn n_classes(&self) -> usize {
        self.p
    }

    fn logits(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<f64>> {
        let tokens = self.tokens(data, idx)?;
        Ok(self.numeric_logits(&self.forward_tokens(tokens).logits))
    }

    fn loss(&self, data: &LabeledDataset, idx: &[usize]) -> Result<f64> {
        let tokens = self.tokens(data, idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        Ok(self.cross_entropy(&self.forward_tokens(tokens).logits, &labels).0)
    }

    fn loss_and_grad(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let tokens = self.tokens(data, idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let f = self.forward_tokens(tokens);
        let (loss, dlogits) = self.cross_entropy(&f.logits, &labels);
        Ok((loss, self.backward(&f, &dlogits)))
    }

    fn hidden_activations(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(Vec<f64>, usize)> {
        let tokens = self.tokens(data, idx)?;
        Ok((self.forward_tokens(tokens).hidden, self.d_mlp))
    }
}
