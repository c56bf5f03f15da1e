//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 6, 7, 8, 10 and 11 read trained runs from
//! `$SPECTRASCOPE_ACCEPTANCE_DIR` (default `target/acceptance-runs`), training
//! them there first when absent. MNIST comes from `$MNIST_DIR` (default
//! `data/mnist`). `SPECTRASCOPE_ACCEPTANCE_NO_TRAIN=1` reports missing runs as
//! failures instead of training. The process exits non-zero on failure only when
//! `SPECTRASCOPE_ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use spectrascope_core::interp::{
    embedding_matrix, modadd_logit_table, rule_kernel, token_dft_energy, unembedding_matrix,
};
use spectrascope_core::lab::{
    build_modadd_dataset, grad_check, init_mlp, init_transformer, load_run, run_mlp, run_modadd,
    MlpConfig, ModAddConfig, ModAddTransformer, Model, RunContext, SnapshotRecord,
};
use spectrascope_core::metrics::{abs_weight_entropy, activation_sparsity, l2_norm, local_circuit_complexity};
use spectrascope_core::powerlaw::{fit_powerlaw, PLOptions};
use spectrascope_core::report::{
    analyze_checkpoint, classify_phases, AnalysisConfig, CheckpointReport, PhaseConfig, PhaseLabel,
};
use spectrascope_core::rmt::mp_edges;
use spectrascope_core::rng::{derive, rng};
use spectrascope_core::spectral::{gaussian_matrix, Spectrum};
use spectrascope_core::traps::{bbp_sweep, critical_theta, detect_traps, plant_spike, BbpParams, TrapConfig};
use spectrascope_core::{load_manifest, rescale_bundle, CheckpointBundle, LabeledDataset};

type Check = Result<(bool, String), String>;

const FC2: &str = "blocks.0.mlp.fc2";

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn runs_dir() -> PathBuf {
    std::env::var_os("SPECTRASCOPE_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("target/acceptance-runs"))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn print_progress(kind: &'static str) -> impl FnMut(&SnapshotRecord) {
    move |r| {
        eprintln!(
            "  [{kind}] step {:>8} train {:.4} test {:.4}",
            r.step, r.train_acc, r.test_acc
        )
    }
}

/// A completed run directory, trained (or resumed) on demand.
fn ensure_run(name: &str) -> Result<PathBuf, String> {
    let dir = runs_dir().join(name);
    if load_run(&dir).map(|i| i.complete).unwrap_or(false) {
        return Ok(dir);
    }
    if std::env::var("SPECTRASCOPE_ACCEPTANCE_NO_TRAIN").as_deref() == Ok("1") {
        return Err(format!("no complete {name} run in {}", dir.display()));
    }
    eprintln!("training {name} into {}", dir.display());
    let res = match name {
        "modadd" => run_modadd(&ModAddConfig::default(), &dir, &mut print_progress("modadd")),
        _ => run_mlp(&MlpConfig::default(), &mnist_dir(), &dir, &mut print_progress("mlp")),
    };
    res.map(|_| dir).map_err(|e| format!("{name} run failed: {e}"))
}

struct Run {
    dir: PathBuf,
    bundles: Vec<CheckpointBundle>,
    reports: Vec<CheckpointReport>,
}

impl Run {
    fn load(name: &str) -> Result<Self, String> {
        let dir = ensure_run(name)?;
        let info = load_run(&dir).map_err(|e| e.to_string())?;
        let mut bundles = Vec::new();
        for rec in &info.records {
            let Some(sub) = &rec.dir else { continue };
            let mut b = load_manifest(&dir.join(sub)).map_err(|e| e.to_string())?;
            b.train_acc = Some(rec.train_acc);
            b.test_acc = Some(rec.test_acc);
            bundles.push(b);
        }
        let reports = bundles
            .iter()
            .map(|b| analyze_checkpoint(b, &AnalysisConfig::default()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Self { dir, bundles, reports })
    }

    fn test(&self, i: usize) -> f64 {
        self.bundles[i].test_acc.unwrap()
    }

    fn train(&self, i: usize) -> f64 {
        self.bundles[i].train_acc.unwrap()
    }

    /// Earliest snapshot with the maximum test accuracy.
    fn best(&self) -> usize {
        (0..self.bundles.len()).fold(0, |b, i| if self.test(i) > self.test(b) { i } else { b })
    }
}

fn c1_mp_edges() -> Check {
    let mut r = rng(101);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let sigma = 10f64.powf(r.random_range(-2.0..1.0));
        let q = 10f64.powf(r.random_range(0.0..2.0));
        let (lm, lp) = mp_edges(sigma, q);
        let s = q.powf(-0.5);
        if q > 1.0 {
            worst = worst.max(rel(lm, sigma * sigma * (1.0 - s).powi(2)));
        }
        worst = worst.max(rel(lp, sigma * sigma * (1.0 + s).powi(2)));
    }
    // Edges carried by fitted bulks obey the same identity.
    for (i, (rows, cols)) in [(400, 100), (300, 300), (1000, 50)].into_iter().enumerate() {
        let w = gaussian_matrix("g", rows, cols, 0.3, 200 + i as u64).map_err(|e| e.to_string())?;
        let fit = detect_traps(&w, &TrapConfig::default()).map_err(|e| e.to_string())?.mp_fit;
        let s = fit.q.powf(-0.5);
        worst = worst.max(rel(fit.lambda_plus, fit.sigma_mp.powi(2) * (1.0 + s).powi(2)));
        if fit.q > 1.0 {
            worst = worst.max(rel(fit.lambda_minus, fit.sigma_mp.powi(2) * (1.0 - s).powi(2)));
        }
    }
    Ok((worst <= 1e-12, format!("max relative edge error {worst:.2e}")))
}

fn c2_null_fit() -> Check {
    let (mut sig_ok, mut p_ok, mut clean) = (0, 0, 0);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for seed in 0..20u64 {
        let w = gaussian_matrix("null", 2000, 500, 1.0, derive(202, seed)).map_err(|e| e.to_string())?;
        let rep = detect_traps(&w, &TrapConfig { seed, ..TrapConfig::default() }).map_err(|e| e.to_string())?;
        let s = rep.mp_fit.sigma_mp;
        lo = lo.min(s);
        hi = hi.max(s);
        sig_ok += usize::from((0.97..=1.03).contains(&s));
        p_ok += usize::from(rep.mp_fit.p_value > 0.01);
        clean += usize::from(rep.n_traps == 0);
    }
    Ok((
        sig_ok == 20 && p_ok >= 19 && clean >= 19,
        format!("sigma in [{lo:.4}, {hi:.4}], p > 0.01 in {p_ok}/20, zero traps in {clean}/20"),
    ))
}

fn c3_powerlaw() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [1.5, 2.0, 2.5, 3.5] {
        let mut est = Vec::new();
        for seed in 0..30u64 {
            let mut r = rng(derive(303 + (alpha * 10.0) as u64, seed));
            let x: Vec<f64> = (0..10_000)
                .map(|_| (1.0 - r.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
                .collect();
            let spec = Spectrum::from_eigenvalues(x, 1.0).map_err(|e| e.to_string())?;
            est.push(fit_powerlaw(&spec, &PLOptions::default()).map_err(|e| e.to_string())?.alpha);
        }
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        let worst = est.iter().map(|a| (a - alpha).abs()).fold(0.0, f64::max);
        pass &= (mean - alpha).abs() <= 0.05 && worst <= 0.15;
        parts.push(format!("alpha {alpha}: bias {:+.4}, max err {worst:.4}", mean - alpha));
    }
    Ok((pass, parts.join("; ")))
}

fn c4_bbp() -> Check {
    let params = BbpParams::new(0.25, 1.0).map_err(|e| e.to_string())?;
    let rows = bbp_sweep(&params, 1000, &[0.0, 1.5, 2.0], 100, &TrapConfig { seed: 404, ..TrapConfig::default() })
        .map_err(|e| e.to_string())?;
    let rate = |i: usize| rows[i].trap_rate;
    Ok((
        rate(0) <= 0.02 && rate(1) >= 0.98 && rate(2) == 1.0,
        format!(
            "trap rate {:.2} at 0, {:.2} at 1.5 theta_c, {:.2} at 2 theta_c (100 seeds)",
            rate(0),
            rate(1),
            rate(2)
        ),
    ))
}

fn c5_gradients() -> Check {
    let mlp = init_mlp(&MlpConfig::default()).map_err(|e| e.to_string())?;
    let mut r = rng(505);
    let inputs: Vec<f64> = (0..4 * 784).map(|_| r.random::<f64>()).collect();
    let data = LabeledDataset::new(inputs, vec![784], vec![0, 3, 7, 9], 10)
        .map_err(|e| e.to_string())?;
    let a = grad_check(&mlp, &data, &[0, 1, 2, 3], 1e-5, 256, 1).map_err(|e| e.to_string())?;

    let cfg = ModAddConfig::default();
    let tf = init_transformer(&cfg).map_err(|e| e.to_string())?;
    let (train, _) = build_modadd_dataset(cfg.p, cfg.train_fraction, 0).map_err(|e| e.to_string())?;
    let b = grad_check(&tf, &train, &[0, 700, 2500, 3800], 1e-5, 256, 2).map_err(|e| e.to_string())?;
    Ok((
        a.n_checked >= 200 && b.n_checked >= 200 && a.max_rel_error <= 1e-5 && b.max_rel_error <= 1e-5,
        format!(
            "mlp {:.2e} over {} params, transformer {:.2e} over {} params",
            a.max_rel_error, a.n_checked, b.max_rel_error, b.n_checked
        ),
    ))
}

fn c6_modadd(run: &Run) -> Check {
    let n = run.bundles.len();
    let last_step = run.bundles.last().map(|b| b.step).unwrap_or(0);
    let Some(pre) = (0..n).find(|&i| run.train(i) == 1.0 && run.test(i) < 0.5) else {
        return Ok((false, "no snapshot with train 1.0 and test < 0.5".into()));
    };
    let grok = (pre..n).find(|&i| run.test(i) >= 0.95);
    let (a, b) = (true, grok.is_some());

    let points: Vec<_> = run.reports.iter().map(CheckpointReport::point).collect();
    let labels = classify_phases(&points, &PhaseConfig::default()).map_err(|e| e.to_string())?;
    let cfg = PhaseConfig::default();
    let first_grok = (0..n).find(|&i| run.test(i) >= cfg.grok_threshold).unwrap_or(n);
    let window = (0..n).filter(|&i| {
        (i < first_grok && run.train(i) >= cfg.train_fit) || (i >= first_grok && run.test(i) >= cfg.grok_threshold)
    });
    let dirty: Vec<u64> = window
        .filter(|&i| run.reports[i].analyzed().any(|l| l.trap_report.n_traps > 0))
        .map(|i| run.bundles[i].step)
        .collect();
    let c = dirty.is_empty()
        && labels.contains(&PhaseLabel::PreGrokking)
        && labels.contains(&PhaseLabel::Grokking);

    let best = run.best();
    let first_fit = (0..n).find(|&i| run.train(i) == 1.0).unwrap();
    let (ab, af) = (
        run.reports[best].mean_alpha().unwrap_or(f64::NAN),
        run.reports[first_fit].mean_alpha().unwrap_or(f64::NAN),
    );
    let d = (1.5..=3.0).contains(&ab) && ab < af;
    Ok((
        a && b && c && d && last_step <= 200_000,
        format!(
            "(a) train 1.0 / test {:.3} at step {} (b) test {} (c) {} (d) mean alpha {ab:.3} at best step {} vs {af:.3} at first fit step {}",
            run.test(pre),
            run.bundles[pre].step,
            grok.map(|g| format!("{:.3} at step {}", run.test(g), run.bundles[g].step))
                .unwrap_or_else(|| "never >= 0.95".into()),
            if dirty.is_empty() { "no traps in pre/grok".to_owned() } else { format!("traps at steps {dirty:?}") },
            run.bundles[best].step,
            run.bundles[first_fit].step,
        ),
    ))
}

fn c7_mlp(run: &Run) -> Check {
    let i = run.bundles.len() - 1;
    let rep = &run.reports[i];
    let layer = |id: &str| rep.analyzed().find(|l| l.layer_id == id);
    let (Some(f1), Some(f2)) = (layer("fc1"), layer("fc2")) else {
        return Ok((false, "fc1/fc2 not analyzed".into()));
    };
    let traps = f1.trap_report.n_traps + f2.trap_report.n_traps;
    let (a1, a2) = (f1.pl_fit.alpha, f2.pl_fit.alpha);
    Ok((
        run.train(i) == 1.0 && run.test(i) < 0.8 && traps == 0 && a1 > a2,
        format!(
            "step {}: train {:.4}, test {:.4}, traps fc1 {} fc2 {}, alpha fc1 {a1:.3} fc2 {a2:.3}",
            run.bundles[i].step,
            run.train(i),
            run.test(i),
            f1.trap_report.n_traps,
            f2.trap_report.n_traps
        ),
    ))
}

fn corrupt(bundle: &CheckpointBundle, seed: u64) -> Result<CheckpointBundle, String> {
    let w = bundle.layer(FC2).ok_or("no fc2 layer")?;
    let sigma = (w.frobenius_sq() / w.entries().len() as f64).sqrt();
    let theta = 3.0 * critical_theta(sigma, w.aspect_ratio().recip());
    let mut out = bundle.clone();
    *out.layer_mut(FC2).unwrap() = plant_spike(w, theta, seed).map_err(|e| e.to_string())?;
    Ok(out)
}

fn c8_anti_grok(run: &Run) -> Check {
    let best = run.best();
    let ctx = RunContext::open(&run.dir, &mnist_dir()).map_err(|e| e.to_string())?;
    let mut points: Vec<_> = run.reports[..=best].iter().map(CheckpointReport::point).collect();
    let mut details = Vec::new();
    let mut fc2_trapped = true;
    let mut dropped = true;
    for k in 0..2u64 {
        let mut b = corrupt(&run.bundles[best], k)?;
        b.step = run.bundles[best].step + 1 + k;
        let model = ctx.load(&b).map_err(|e| e.to_string())?;
        b.train_acc = Some(model.accuracy(&ctx.train).map_err(|e| e.to_string())?);
        b.test_acc = Some(model.accuracy(&ctx.test).map_err(|e| e.to_string())?);
        let rep = analyze_checkpoint(&b, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
        let traps = rep.analyzed().find(|l| l.layer_id == FC2).map_or(0, |l| l.trap_report.n_traps);
        fc2_trapped &= traps >= 1;
        dropped &= b.test_acc.unwrap() < 0.8 * run.test(best);
        details.push(format!(
            "spike {k}: fc2 traps {traps}, mean traps {:.3}, test {:.3}",
            rep.mean_traps(),
            b.test_acc.unwrap()
        ));
        points.push(rep.point());
    }
    let labels = classify_phases(&points, &PhaseConfig::default()).map_err(|e| e.to_string())?;
    let last = *labels.last().unwrap();
    Ok((
        fc2_trapped && dropped && last == PhaseLabel::AntiGrokking,
        format!(
            "best test {:.3}; {}; final label {last}",
            run.test(best),
            details.join("; ")
        ),
    ))
}

fn c9_metrics() -> Check {
    let cfg = MlpConfig { widths: vec![20, 16, 12, 10], ..MlpConfig::default() };
    let m = init_mlp(&cfg).map_err(|e| e.to_string())?;
    let mut r = rng(909);
    let data = LabeledDataset::new(
        (0..40 * 20).map(|_| r.random::<f64>()).collect(),
        vec![20],
        (0..40).map(|i| i % 10).collect(),
        10,
    )
    .map_err(|e| e.to_string())?;
    let lc0 = local_circuit_complexity(&m, &data, 0.0, 1, 1).map_err(|e| e.to_string())?;
    let s_zero = activation_sparsity(&vec![0.0; 64], 8, 1e-12).map_err(|e| e.to_string())?;
    let s_one = activation_sparsity(&vec![1.0; 64], 8, 1e-12).map_err(|e| e.to_string())?;
    let h1 = abs_weight_entropy(&[1.0]);
    let e1 = (-1.0f64).exp();
    let he = abs_weight_entropy(&[e1]);
    let b = m.to_bundle(0).map_err(|e| e.to_string())?;
    let l2 = l2_norm(&b);
    let l2x = l2_norm(&rescale_bundle(&b, 2.0).map_err(|e| e.to_string())?);
    let pass = lc0 == 0.0 && s_zero == 1.0 && s_one == 0.0 && h1 == 0.0 && he == e1 && l2x == 2.0 * l2;
    Ok((
        pass,
        format!("LC(0) {lc0}, sparsity {s_zero}/{s_one}, H_abs {h1}/{he:.17}, l2 x2 ratio {}", l2x / l2),
    ))
}

fn c10_dft(run: &Run) -> Check {
    let p = 113;
    let f = 7;
    let tone: Vec<f64> = (0..p)
        .flat_map(|t| {
            let x = 2.0 * std::f64::consts::PI * (f * t) as f64 / p as f64;
            [x.cos(), 2.0 * x.cos()]
        })
        .collect();
    let tone_e = token_dft_energy(&tone, p, 2).map_err(|e| e.to_string())?.energies;
    let tone_ok = (tone_e[f] - 0.5).abs() < 1e-12 && (tone_e[p - f] - 0.5).abs() < 1e-12;

    let mut logits = vec![0.0; p * p * p];
    for x in 0..p {
        for y in 0..p {
            logits[(x * p + y) * p + (x + y) % p] = 1.0;
        }
    }
    let k = rule_kernel(&logits, p).map_err(|e| e.to_string())?.k;
    let pf = p as f64;
    let kernel_ok = (k[0] - (1.0 - 1.0 / pf)).abs() < 1e-12 && k[1..].iter().all(|v| (v + 1.0 / pf).abs() < 1e-12);

    let mut r = rng(1010);
    let m: Vec<f64> = (0..p * 16).map(|_| r.random_range(-1.0..1.0)).collect();
    let prof = token_dft_energy(&m, p, 16).map_err(|e| e.to_string())?;
    let time_energy = m.iter().map(|x| x * x).sum::<f64>() / 16.0;
    let parseval = rel(prof.power.iter().sum::<f64>(), time_energy);

    let best = run.best();
    let model = ModAddTransformer::from_bundle(&run.bundles[best], ModAddConfig::default().heads)
        .map_err(|e| e.to_string())?;
    let kern = rule_kernel(&modadd_logit_table(&model).map_err(|e| e.to_string())?, model.p)
        .map_err(|e| e.to_string())?;
    let emb = token_dft_energy(&embedding_matrix(&model), model.p, model.d_model).map_err(|e| e.to_string())?;
    let unemb = token_dft_energy(&unembedding_matrix(&model), model.p, model.d_model).map_err(|e| e.to_string())?;
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let same = sorted(&kern.dft_top) == sorted(&emb.top_idx);
    Ok((
        tone_ok && kernel_ok && parseval <= 1e-9 && same,
        format!(
            "tone {:.3}/{:.3}, indicator kernel {}, Parseval {parseval:.1e}, step {} kernel {:?} embed {:?} unembed {:?}",
            tone_e[f],
            tone_e[p - f],
            if kernel_ok { "exact" } else { "off" },
            run.bundles[best].step,
            sorted(&kern.dft_top),
            sorted(&emb.top_idx),
            sorted(&unemb.top_idx),
        ),
    ))
}

fn c11_scale(run: &Run) -> Check {
    let best = run.best();
    let base = &run.reports[best];
    let mut worst = 0.0_f64;
    let mut traps_same = true;
    for c in [0.5, 2.0, 4.0] {
        let b = rescale_bundle(&run.bundles[best], c).map_err(|e| e.to_string())?;
        let rep = analyze_checkpoint(&b, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
        for (x, y) in base.analyzed().zip(rep.analyzed()) {
            worst = worst.max((x.pl_fit.alpha - y.pl_fit.alpha).abs());
            traps_same &= x.trap_report.n_traps == y.trap_report.n_traps;
        }
    }
    Ok((
        worst <= 1e-9 && traps_same,
        format!(
            "max |d alpha| {worst:.2e} over {} layers, traps {}",
            base.analyzed().count(),
            if traps_same { "unchanged" } else { "changed" }
        ),
    ))
}

fn with<'a>(run: &'a Result<Run, String>, f: fn(&Run) -> Check) -> impl FnMut() -> Check + 'a {
    move || run.as_ref().map_err(Clone::clone).and_then(f)
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, check: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {n:>2} {name}: {} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    };
    report(1, "MP edge exactness", &mut c1_mp_edges);
    report(2, "MP null fit", &mut c2_null_fit);
    report(3, "PL estimator calibration", &mut c3_powerlaw);
    report(4, "BBP single-entry spike", &mut c4_bbp);
    report(5, "gradient checks", &mut c5_gradients);

    let modadd = Run::load("modadd");
    report(6, "modular-addition phase signature", &mut with(&modadd, c6_modadd));
    let mlp = Run::load("mlp");
    report(7, "MLP pre-grok signature", &mut with(&mlp, c7_mlp));
    report(8, "anti-grok synthesis", &mut with(&modadd, c8_anti_grok));
    report(9, "comparison-metric identities", &mut c9_metrics);
    report(10, "DFT and rule-kernel oracles", &mut with(&modadd, c10_dft));
    report(11, "scale invariance of alpha", &mut with(&modadd, c11_scale));

    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 && std::env::var("SPECTRASCOPE_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
