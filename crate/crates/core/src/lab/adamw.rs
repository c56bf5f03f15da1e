use serde::{Deserialize, Serialize};

/// AdamW hyperparameters (decoupled weight decay, PyTorch update order).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear learning-rate warmup length in steps; 0 disables it.
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update of every tensor in `params`.
pub fn adamw_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamWState, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step;
    let lr = if cfg.warmup_steps > 0 {
        cfg.lr * (t as f64 / cfg.warmup_steps as f64).min(1.0)
    } else {
        cfg.lr
    };
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2_sqrt = (1.0 - cfg.beta2.powi(t as i32)).sqrt();
    let step_size = lr / bc1;
    let decay = 1.0 - lr * cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        assert_eq!(p.len(), g.len());
        for j in 0..p.len() {
            if cfg.weight_decay != 0.0 {
                p[j] *= decay;
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let denom = v[j].sqrt() / bc2_sqrt + cfg.eps;
            p[j] -= step_size * m[j] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut Vec<f64>, g: Vec<f64>, cfg: &AdamWConfig, steps: usize) {
        let mut st = AdamWState::new([p.len()]);
        for _ in 0..steps {
            adamw_step(&mut [p.as_mut_slice()], &[g.clone()], &mut st, cfg);
        }
    }

    #[test]
    fn zero_grads_no_decay_is_identity() {
        let mut p = vec![1.5, -2.0, 0.25];
        let orig = p.clone();
        run(&mut p, vec![0.0; 3], &AdamWConfig::default(), 10);
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let cfg = AdamWConfig::default();
        let mut p = vec![0.0];
        run(&mut p, vec![1.0], &cfg, 1);
        assert!((p[0] + cfg.lr).abs() <= 1e-6 * cfg.lr);
    }

    #[test]
    fn decoupled_decay_only() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            lr: 0.01,
            ..AdamWConfig::default()
        };
        let mut p = vec![3.0, -1.0];
        let mut want = p.clone();
        let mut st = AdamWState::new([2]);
        for _ in 0..5 {
            adamw_step(&mut [p.as_mut_slice()], &[vec![0.0, 0.0]], &mut st, &cfg);
            for w in &mut want {
                *w *= 1.0 - cfg.lr * cfg.weight_decay;
            }
            assert_eq!(p, want);
        }
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let cfg = AdamWConfig {
            lr: 0.0,
            ..AdamWConfig::default()
        };
        let mut p = vec![0.3, 7.0];
        let orig = p.clone();
        run(&mut p, vec![5.0, -2.0], &cfg, 3);
        assert_eq!(p, orig);
    }

    #[test]
    fn warmup_scales_first_step() {
        let cfg = AdamWConfig {
            warmup_steps: 10,
            ..AdamWConfig::default()
        };
        let mut p = vec![0.0];
        run(&mut p, vec![1.0], &cfg, 1);
        assert!((p[0] + cfg.lr / 10.0).abs() <= 1e-6 * cfg.lr);
    }
}
