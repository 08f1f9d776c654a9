//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::time::Instant;

use lpad_cli::config::{DataSource, EvalSplit};
use lpad_cli::run::MeanSd;
use lpad_cli::{run, Command, RunConfig};
use lpad_core::anomaly::{f1_score, metrics, normal_cdf, normal_quantile, ThresholdSource};
use lpad_core::diffcore::scalar::sigmoid;
use lpad_core::diffcore::{finite_difference_grad, grad_agreement, Mode, ParamId, Tensor};
use lpad_core::nets::Branch;
use lpad_core::priors::{kl_bernoulli, kl_gaussian_closed_form, sample_bernoulli_hard, KlMode};
use lpad_core::rbm::{exact_oracle, gibbs_step, state_index, RbmChains, RbmParams};
use lpad_core::rng::{standard_normal, stream};
use lpad_core::vae::toy::LinearGaussianToy;
use lpad_core::vae::{Model, ModelSpec, PriorKind, ReconMetric};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn rbm_sampler() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for trial in 0..10u64 {
        let mut rng = stream(100 + trial, 0);
        let mut u =
            |n: usize| Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let p = RbmParams::new(u(9).reshape(&[3, 3]).unwrap(), u(3), u(3)).unwrap();
        let exact = exact_oracle(&p).unwrap();
        let mut chains = RbmChains::zeros(1, 3, 3);
        let mut rng = stream(200 + trial, 0);
        let mut counts = [0usize; 64];
        let sweeps = 100_000;
        for _ in 0..sweeps {
            gibbs_step(&mut chains, &p, &mut rng).unwrap();
            counts[state_index(chains.v.data(), chains.h.data())] += 1;
        }
        let tv = 0.5
            * counts
                .iter()
                .zip(&exact.probs)
                .map(|(&c, &q)| (c as f64 / sweeps as f64 - q).abs())
                .sum::<f64>();
        worst = worst.max(tv);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 0.05 && secs < 60.0,
        format!("worst TV {worst:.4} over 10 RBMs in {secs:.1}s"),
    )
}

fn tiny(prior: PriorKind, metric: ReconMetric) -> ModelSpec {
    let mut s = ModelSpec::new(prior, 2, 8, 4, metric).with_branches(
        vec![Branch {
            filters: 2,
            kernel: 3,
        }],
        1,
    );
    s.beta = 1.5;
    s.lambda = 0.5;
    if let Some(r) = s.rbm.as_mut() {
        r.chains = 6;
        r.sweeps = 3;
    }
    s
}

fn batch(seed: u64, b: usize, unit: bool) -> Tensor {
    let mut rng = stream(seed, 0);
    let data = (0..b * 16)
        .map(|_| {
            if unit {
                rng.random::<f64>()
            } else {
                standard_normal(&mut rng)
            }
        })
        .collect();
    Tensor::new(vec![b, 2, 8], data).unwrap()
}

/// Largest absolute gap between backprop and central differences, and
/// whether every element is within tolerance.
fn gradient_error(mut model: Model, unit: bool) -> (f64, bool) {
    let x = batch(31, 3, unit);
    let noise = model.draw_noise(3, &mut stream(32, 0));
    if model.chains().is_some() {
        model.advance_chains(&mut stream(33, 0)).unwrap();
    }
    let lg = model.build_loss(&x, &noise, Mode::Train).unwrap();
    let grads = lg
        .graph
        .backward(lg.total)
        .unwrap()
        .for_params(&model.store);
    let ids: Vec<ParamId> = model.store.iter().map(|(id, _, _)| id).collect();
    let (mut worst, mut all_ok) = (0.0f64, true);
    for id in ids {
        let base = model.store.get(id).clone();
        let mut probe = model.clone();
        let numeric = finite_difference_grad(
            |t| {
                *probe.store.get_mut(id) = t.clone();
                Ok(probe.loss_terms(&x, &noise, Mode::Train)?.total)
            },
            &base,
            1e-6,
        )
        .unwrap();
        let (_, ok) = grad_agreement(&grads[id.index()], &numeric, 1e-4, 1e-8);
        for (a, n) in grads[id.index()].data().iter().zip(numeric.data()) {
            worst = worst.max((a - n).abs());
        }
        all_ok &= ok;
    }
    (worst, all_ok)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = [
        (
            "gaussian",
            tiny(PriorKind::Gaussian, ReconMetric::Mse),
            false,
        ),
        (
            "bernoulli",
            tiny(PriorKind::Bernoulli, ReconMetric::Bce),
            true,
        ),
        ("rbm", tiny(PriorKind::Rbm, ReconMetric::Mse), false),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, spec, unit)) in cases.into_iter().enumerate() {
        let (err, within) = gradient_error(Model::new(spec, i as u64 + 1).unwrap(), unit);
        ok &= within;
        parts.push(format!("{name} {err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        ok && secs < 120.0,
        format!(
            "all elements within 1e-4 relative (floor 1e-8); largest gap {} in {secs:.1}s",
            parts.join(", ")
        ),
    )
}

fn kl_by_enumeration(q: &[f64]) -> f64 {
    let l = q.len();
    (0..1usize << l)
        .map(|s| {
            let qz: f64 = (0..l)
                .map(|i| if s >> i & 1 == 1 { q[i] } else { 1.0 - q[i] })
                .product();
            qz * (qz / 0.5f64.powi(l as i32)).ln()
        })
        .sum()
}

fn kl_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(300, 0);
    let mut enum_err: f64 = 0.0;
    for _ in 0..100 {
        let l = rng.random_range(1..=6);
        let la: Vec<f64> = (0..l).map(|_| rng.random_range(-4.0..4.0)).collect();
        let q: Vec<f64> = la.iter().map(|&a| sigmoid(a)).collect();
        let analytic = kl_bernoulli(&Tensor::vector(la), None, KlMode::Analytic)
            .unwrap()
            .value;
        enum_err = enum_err.max((analytic - kl_by_enumeration(&q)).abs());
    }

    let la = Tensor::vector(vec![0.7, -1.2, 2.0]);
    let analytic = kl_bernoulli(&la, None, KlMode::Analytic).unwrap().value;
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let rho = Tensor::vector((0..3).map(|_| rng.random()).collect());
            let z = sample_bernoulli_hard(&la, &rho).unwrap().z;
            kl_bernoulli(&la, Some(&z), KlMode::Mc).unwrap().value
        })
        .collect();
    let (m, se) = mean_and_se(&draws);
    let mc_sigmas = (m - analytic).abs() / se;

    let mut gauss_sigmas: f64 = 0.0;
    for l in [1usize, 4, 8] {
        let mu: Vec<f64> = (0..l).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let closed =
            kl_gaussian_closed_form(&Tensor::vector(mu.clone()), &Tensor::vector(lv.clone()))
                .unwrap();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                (0..l)
                    .map(|i| {
                        let eps = standard_normal(&mut rng);
                        let z = mu[i] + (0.5 * lv[i]).exp() * eps;
                        -0.5 * lv[i] - 0.5 * eps * eps + 0.5 * z * z
                    })
                    .sum::<f64>()
            })
            .collect();
        let (m, se) = mean_and_se(&draws);
        gauss_sigmas = gauss_sigmas.max((m - closed).abs() / se);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        enum_err <= 1e-12 && mc_sigmas <= 3.0 && gauss_sigmas <= 3.0 && secs < 60.0,
        format!(
            "enumeration gap {enum_err:.1e}, bernoulli mc {mc_sigmas:.2} se, gaussian mc {gauss_sigmas:.2} se, {secs:.1}s"
        ),
    )
}

fn beta_semantics() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, (prior, metric)) in [
        (PriorKind::Gaussian, ReconMetric::Mse),
        (PriorKind::Bernoulli, ReconMetric::Bce),
        (PriorKind::Rbm, ReconMetric::Mse),
    ]
    .into_iter()
    .enumerate()
    {
        let mut spec = tiny(prior, metric);
        spec.beta = 0.0;
        let model = Model::new(spec, 40 + i as u64).unwrap();
        let x = batch(41, 5, metric == ReconMetric::Bce);
        let noise = model.draw_noise(5, &mut stream(42, 0));
        let t = model.loss_terms(&x, &noise, Mode::Train).unwrap();
        worst = worst.max((t.total - t.recon).abs());
    }
    check(
        worst <= 1e-12,
        format!("|loss - recon| at beta 0 is at most {worst:.1e}"),
    )
}

fn elbo_bound() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = stream(seed, 500);
        let toy = LinearGaussianToy {
            w: rng.random_range(-2.0..2.0),
            b: rng.random_range(-1.0..1.0),
            s: rng.random_range(0.3..1.5),
            a: rng.random_range(-1.0..1.0),
            c: rng.random_range(-0.5..0.5),
            logvar: rng.random_range(-2.0..1.0),
        };
        let x: f64 = rng.random_range(-2.0..2.0);
        let est = toy.elbo_estimate(x, 10_000, &mut rng).unwrap();
        worst = worst.max((est.mean - toy.log_likelihood(x)) / est.std_error);
    }
    check(
        worst <= 3.0,
        format!("max (ELBO - log p) / se over 20 seeds = {worst:.2}"),
    )
}

fn quantile() -> Outcome {
    let grid = (1..=99)
        .map(|i| {
            let p = i as f64 / 100.0;
            (normal_cdf(normal_quantile(p).unwrap()) - p).abs()
        })
        .fold(0.0, f64::max);
    let z = normal_quantile(1.0 - 0.0448).unwrap();
    check(
        grid <= 1e-9 && (z - 1.6985).abs() <= 1e-3,
        format!("max |cdf(q(p)) - p| = {grid:.1e}; z(1 - 0.0448) = {z:.5}"),
    )
}

fn metric_fixtures() -> Outcome {
    let f1 = f1_score(0.563, 0.817);
    let pred: Vec<bool> = [
        vec![true; 10],
        vec![true; 5],
        vec![false; 10],
        vec![false; 7],
    ]
    .concat();
    let truth: Vec<bool> = [
        vec![true; 10],
        vec![false; 5],
        vec![true; 10],
        vec![false; 7],
    ]
    .concat();
    let m = metrics(&pred, &truth).unwrap();
    let exact = m.precision == 2.0 / 3.0 && m.recall == 0.5 && (m.f1 - 4.0 / 7.0).abs() < 1e-15;
    let same = metrics(&truth, &truth).unwrap();
    check(
        (f1 - 0.666).abs() <= 5e-3 && exact && same.f1 == 1.0,
        format!(
            "f1(0.563, 0.817) = {f1:.4}; TP10/FP5/FN10 -> {:.4}/{:.4}/{:.4}",
            m.precision, m.recall, m.f1
        ),
    )
}

fn desk_config(profile: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_text(&format!("profile = {profile}\nseed = 1\n"), None).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn benchmark(root: &Path) -> Outcome {
    let start = Instant::now();
    let mut results = Vec::new();
    for name in ["gaussian", "bernoulli", "rbm"] {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for beta in [1.0, 10.0, 25.0, 50.0] {
            let mut cfg = desk_config(
                &format!("desk-{name}"),
                &root.join(format!("{name}-tune-{beta}")),
            );
            cfg.model.beta = beta;
            cfg.eval_split = EvalSplit::Validation;
            let f1 = run(&cfg, Command::Eval, 1)
                .map_err(|e| e.to_string())?
                .reports[0]
                .f1;
            if f1 > best.0 {
                best = (f1, beta);
            }
        }
        let mut cfg = desk_config(&format!("desk-{name}"), &root.join(format!("{name}-final")));
        cfg.model.beta = best.1;
        cfg.combine_train_val = true;
        let out = run(&cfg, Command::Eval, 5).map_err(|e| e.to_string())?;
        let f1 = MeanSd::of(&out.reports.iter().map(|r| r.f1).collect::<Vec<_>>());
        results.push((name, best.1, f1));
    }
    let secs = start.elapsed().as_secs_f64();
    let f1 = |n: &str| results.iter().find(|r| r.0 == n).unwrap().2.mean;
    let ok =
        f1("gaussian") >= 0.6 && f1("rbm") >= 0.6 && f1("rbm") >= f1("bernoulli") && secs <= 1800.0;
    let parts: Vec<String> = results
        .iter()
        .map(|(n, b, s)| format!("{n} (beta {b}) F1 {:.3} ± {:.3}", s.mean, s.sd))
        .collect();
    check(ok, format!("{}; {:.0}s", parts.join(", "), secs))
}

fn small_config(out: &Path, synth_seed: u64) -> RunConfig {
    let text = format!(
        "prior = rbm\nlatent = 4\nfilters = 3\nkernels = 3,5\nchains = 20\nsweeps = 5\nentropy = relaxed_mass\n\
         epochs = 4\nminibatch = 16\nlr = 3e-3\nseed = 9\nsynth_n = 160\nsynth_channels = 4\nsynth_window = 16\n\
         synth_fraction = 0.1\nsynth_seed = {synth_seed}\nsamples = 3\n"
    );
    let mut cfg = RunConfig::from_text(&text, None).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn determinism(root: &Path) -> Outcome {
    let mut bytes = Vec::new();
    for i in 0..2 {
        let cfg = small_config(&root.join(format!("run-{i}")), 3);
        run(&cfg, Command::Eval, 2).map_err(|e| e.to_string())?;
        let files = [
            "repeat-1/eval.json",
            "repeat-1/eval.csv",
            "repeat-2/train_stats.csv",
            "summary.json",
        ];
        bytes.push(
            files
                .iter()
                .map(|f| read(&cfg.out.join(f)))
                .collect::<Vec<_>>(),
        );
    }
    let identical = bytes[0] == bytes[1] && bytes[0].iter().all(|b| !b.is_empty());

    // train, then eval from the saved checkpoint, matches the combined run
    let mut cfg = small_config(&root.join("train"), 3);
    run(&cfg, Command::Train, 1).map_err(|e| e.to_string())?;
    let inline =
        run(&small_config(&root.join("inline"), 3), Command::Eval, 1).map_err(|e| e.to_string())?;
    cfg.checkpoint = Some(root.join("train/checkpoint.txt"));
    cfg.out = root.join("from-checkpoint");
    let loaded = run(&cfg, Command::Eval, 1).map_err(|e| e.to_string())?;
    let (a, b) = (&inline.reports[0], &loaded.reports[0]);
    let resumed = a.scores == b.scores && a.threshold == b.threshold && a.predicted == b.predicted;
    check(
        identical && resumed,
        format!("byte-identical reruns: {identical}; train then eval reproduces scores: {resumed}"),
    )
}

fn transfer(root: &Path) -> Outcome {
    let source = small_config(&root.join("source"), 4);
    run(&source, Command::Eval, 1).map_err(|e| e.to_string())?;
    let target_seed = match &small_config(root, 5).data {
        DataSource::Synth(s) => s.seed,
        DataSource::Csv(_) => unreachable!(),
    };
    if target_seed == 4 {
        return Err("source and target share a generator seed".into());
    }
    let mut lines = Vec::new();
    let mut ok = true;
    for src in [
        ThresholdSource::SelfRun,
        ThresholdSource::SourceRun,
        ThresholdSource::Mixed,
    ] {
        let mut reports = Vec::new();
        for epochs in [0, 30] {
            let mut cfg = small_config(&root.join(format!("{}-{epochs}", src.as_str())), 5);
            cfg.checkpoint = Some(source.out.join("checkpoint.txt"));
            cfg.source_report = Some(source.out.join("eval.json"));
            cfg.threshold_source = src;
            cfg.post_train_epochs = epochs;
            cfg.post_train_minibatch = 32;
            cfg.validate().map_err(|e| e.to_string())?;
            reports.push(
                run(&cfg, Command::Transfer, 1)
                    .map_err(|e| e.to_string())?
                    .reports
                    .remove(0),
            );
        }
        let changed = reports[0].scores != reports[1].scores;
        ok &= changed;
        lines.push(format!(
            "{} F1 {:.3} -> {:.3}",
            src.as_str(),
            reports[0].f1,
            reports[1].f1
        ));
    }
    check(ok, format!("strong -> post-trained: {}", lines.join(", ")))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("RBM sampler matches enumeration", Box::new(rbm_sampler)),
        (
            "full-loss gradients match finite differences",
            Box::new(gradient_suite),
        ),
        ("KL oracles", Box::new(kl_oracles)),
        (
            "beta = 0 reduces to reconstruction",
            Box::new(beta_semantics),
        ),
        (
            "ELBO bound on the linear-Gaussian toy",
            Box::new(elbo_bound),
        ),
        ("normal quantile", Box::new(quantile)),
        (
            "precision, recall and F1 fixtures",
            Box::new(metric_fixtures),
        ),
        (
            "synthetic benchmark",
            Box::new(|| benchmark(&root.join("benchmark"))),
        ),
        (
            "determinism",
            Box::new(|| determinism(&root.join("determinism"))),
        ),
        (
            "transfer harness",
            Box::new(|| transfer(&root.join("transfer"))),
        ),
    ];
    let only: Option<Vec<usize>> = std::env::var("LPAD_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("criterion {n:>2} SKIP {name}");
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
