//! Acceptance criteria 1-8, one PASS/FAIL line each.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saltrust::engine::BackwardOptions;
use saltrust::harness::{repeatability_test, MapSet, TrustReport};
use saltrust::metrics::{auprc, map_auprc, pr_curve, ssim, SsimConfig};
use saltrust::models::ArchId;
use saltrust::saliency::{integrated_gradients_steps, Method};
use saltrust::Tensor;
use saltrust_cli::{cli_run, ExperimentConfig, Run};
use support::nets::{biased_classifier, random_image, random_net, upstream_for, SIDE};
use support::oracles::{brute_ap, reference_ssim};
use support::reference::{evaluate, fd_input_grad, fd_weight_grad, rel_err, RefParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (net, w) = random_net(seed);
        let x = random_image(seed, SIDE);
        let up = upstream_for(&net, seed);
        let (_, tape) = net.forward(&w, &x).unwrap();
        let gi = net.backward(&tape, &w, &up, BackwardOptions::default()).unwrap().input;
        let mut params = RefParams::from_store(&w);
        let (xf, uf) = (to_f64(x.data()), to_f64(up.data()));
        worst = worst.max(rel_err(gi.data(), &fd_input_grad(&net, &params, &xf, &uf, 1e-3)));
        let gw = net.backward_weights(&tape, &w, &up).unwrap();
        for layer in net.parametric_layers() {
            let p = gw.get(&layer.name).unwrap();
            let analytic: Vec<f32> = p.weight.data().iter().chain(p.bias.data()).copied().collect();
            let fd = fd_weight_grad(&net, &mut params, &layer.name, &xf, &uf, 1e-3);
            worst = worst.max(rel_err(&analytic, &fd));
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 nets (bound 1e-4)"))
}

fn ig_completeness() -> Outcome {
    let steps = [8usize, 32, 128, 256];
    let mut errors = vec![Vec::new(); steps.len()];
    for seed in 0..20 {
        let (net, w) = biased_classifier(seed);
        let x = random_image(seed + 100, 32);
        let params = RefParams::from_store(&w);
        let sx = evaluate(&net, &params, &to_f64(x.data()), None).0[0];
        let sb = evaluate(&net, &params, &vec![0.0; x.len()], None).0[0];
        for (k, &n) in steps.iter().enumerate() {
            let total: f64 = integrated_gradients_steps(&net, &w, &x, n).unwrap().iter().map(|&v| v as f64).sum();
            errors[k].push((total - (sx - sb)).abs() / (sx - sb).abs());
        }
    }
    let at_256 = &errors[3];
    let failing: Vec<usize> = (0..20).filter(|&i| at_256[i] > 0.01).collect();
    let worst = at_256.iter().cloned().fold(0.0, f64::max);
    let means: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let detail = format!(
        "{} of 20 pairs within 1% at 256 steps (worst {:.2}%{}); mean error {} over 8/32/128/256 steps",
        20 - failing.len(),
        worst * 100.0,
        if failing.is_empty() { String::new() } else { format!(", failing pairs {failing:?}") },
        means.iter().map(|m| format!("{:.3}%", m * 100.0)).collect::<Vec<_>>().join(" -> "),
    );
    outcome(failing.is_empty() && decreasing, detail)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pass = true;
    let mut worst_constant = 0.0f64;
    for _ in 0..20 {
        let truth: Vec<u8> = (0..256).map(|i| (i % 5 == 0 || rng.random_bool(0.1)) as u8).collect();
        let perfect: Vec<f32> = truth.iter().map(|&t| t as f32 + rng.random::<f32>() * 0.5).collect();
        pass &= map_auprc(&perfect, &truth).unwrap() == 1.0;
        let prevalence = truth.iter().filter(|&&t| t == 1).count() as f64 / 256.0;
        worst_constant = worst_constant.max((map_auprc(&[0.7; 256], &truth).unwrap() - prevalence).abs());
    }
    pass &= worst_constant <= 1e-9;

    let mut worst_brute = 0.0f64;
    for _ in 0..20 {
        let scores: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        for bits in 1u32..512 {
            let truth: Vec<u8> = (0..9).map(|i| ((bits >> i) & 1) as u8).collect();
            worst_brute = worst_brute.max((auprc(&pr_curve(&scores, &truth).unwrap()) - brute_ap(&scores, &truth)).abs());
        }
    }
    pass &= worst_brute <= 1e-12;

    let cfg = SsimConfig::default();
    let (mut worst_identity, mut worst_reference, mut symmetric) = (0.0f64, 0.0f64, true);
    for i in 0..50 {
        let (h, w) = (rng.random_range(11..24), rng.random_range(11..24));
        let a: Vec<f32> = (0..h * w).map(|_| rng.random()).collect();
        let mix = i as f32 / 49.0;
        let b: Vec<f32> = a.iter().map(|&v| mix * v + (1.0 - mix) * rng.random::<f32>()).collect();
        worst_identity = worst_identity.max((ssim(&a, &a, h, w, &cfg).unwrap() - 1.0).abs());
        let ab = ssim(&a, &b, h, w, &cfg).unwrap();
        symmetric &= ab == ssim(&b, &a, h, w, &cfg).unwrap();
        worst_reference = worst_reference.max((ab - reference_ssim(&a, &b, h, w)).abs());
    }
    pass &= worst_identity <= 1e-9 && symmetric && worst_reference <= 1e-6;
    outcome(
        pass,
        format!(
            "AUPRC constant-map error {worst_constant:.1e}, brute-force error {worst_brute:.1e}; SSIM identity error {worst_identity:.1e}, symmetric {symmetric}, reference error {worst_reference:.1e}"
        ),
    )
}

fn audit(config: &Path, out: &Path) -> Result<TrustReport, String> {
    let code = cli_run(["saltrust", "audit", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    if code != 0 {
        return Err(format!("audit exited with {code}"));
    }
    let text = fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
    TrustReport::from_json(&text).map_err(|e| e.to_string())
}

fn end_to_end(report: &TrustReport) -> Outcome {
    let classifier = report.models.iter().find(|m| m.arch == ArchId::ArchA).unwrap();
    let b = &report.utility.baselines;
    let pass = classifier.test_roc_auc >= 0.85 && b.base_mean > b.avg_mean && b.base_vs_avg.better;
    let others: Vec<String> = report
        .models
        .iter()
        .map(|m| format!("{} {:.3}", m.role, m.test_roc_auc))
        .collect();
    outcome(
        pass,
        format!(
            "ARCH_A test ROC-AUC {:.3} (>= 0.85); segmenter AUPRC {:.3} vs average mask {:.3}, CI [{:.3}, {:.3}], better {} [all models: {}]",
            classifier.test_roc_auc,
            b.base_mean,
            b.avg_mean,
            b.base_vs_avg.ci_low,
            b.base_vs_avg.ci_high,
            b.base_vs_avg.better,
            others.join(", ")
        ),
    )
}

fn randomization_sanity(report: &TrustReport) -> Outcome {
    let r = &report.randomization;
    let auc_ok = (0.45..=0.55).contains(&r.randomized_roc_auc);
    let starts: Vec<f64> = r.traces.iter().map(|t| t.points[0].mean_ssim).collect();
    let start_ok = r.traces.len() == 8 && starts.iter().all(|s| (s - 1.0).abs() <= 1e-9);
    let grad = r.traces.iter().find(|t| t.method == Method::Grad).unwrap();
    let drop = grad.points[0].mean_ssim - grad.points.last().unwrap().mean_ssim;
    outcome(
        auc_ok && start_ok && drop >= 0.3,
        format!(
            "randomized ROC-AUC {:.3} (in [0.45, 0.55]); traces start at 1 for all {} methods: {start_ok}; GRAD drop {drop:.3} (>= 0.3)",
            r.randomized_roc_auc,
            r.traces.len()
        ),
    )
}

fn repeatability(report: &TrustReport, run: &Run) -> Outcome {
    let dataset = run.load_data().unwrap();
    let models = run.load_models().unwrap();
    let images: Vec<(String, Tensor)> = report
        .consistency_image_ids
        .iter()
        .map(|id| (id.clone(), dataset.get(id).unwrap().tensor()))
        .collect();
    let same = repeatability_test(
        &models.arch_a,
        &models.arch_a,
        &Method::ALL,
        &images,
        &report.segmenter_replicate,
        &run.cfg.effective_saliency(),
        &run.cfg.ssim,
        &run.cfg.effective_harness(),
    )
    .unwrap();
    let identical = same.len() == 8 && same.iter().all(|r| r.ssim.iter().all(|&s| (s - 1.0).abs() <= 1e-9));
    let table = report.repeatability.len() == 8
        && report.grid.len() == 8
        && report.grid.iter().all(|row| row.verdicts().len() == 7)
        && report.render_text().contains("Repeatability(BASE)");
    let means: Vec<String> = report
        .repeatability
        .iter()
        .map(|r| format!("{} {:.3}", r.method, r.mean))
        .collect();
    outcome(
        identical && table,
        format!(
            "identical weights give SSIM 1 for all 8 methods: {identical}; replicate table {}x7 [{}]",
            report.grid.len(),
            means.join(", ")
        ),
    )
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let a = fs::read(first.join("report.json")).unwrap();
    let b = fs::read(second.join("report.json")).unwrap();
    outcome(a == b, format!("two audits give {} and {} byte report.json, identical: {}", a.len(), b.len(), a == b))
}

fn rank_invariance(run: &Run, report: &TrustReport) -> Outcome {
    let dataset = run.load_data().unwrap();
    let maps = MapSet::import(&run.maps_dir().join("arch_a")).unwrap();
    let flavor = dataset.flavor();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, id) in report.utility.image_ids.iter().take(20).enumerate() {
        let method = Method::ALL[k % 8];
        let idx = maps.image_ids.iter().position(|x| x == id).unwrap();
        let map = &maps.method(method).unwrap()[idx];
        let truth = dataset.get(id).unwrap().truth(flavor);
        // Rescaled to [0, 1] (itself increasing) so exp stays well conditioned.
        let lo = map.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = map.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let unit: Vec<f64> = map.iter().map(|&v| (v as f64 - lo) / (hi - lo).max(f64::MIN_POSITIVE)).collect();
        let base = auprc(&pr_curve(&unit, &truth).unwrap());
        for f in [|x: f64| x.powi(3), f64::exp] {
            let t: Vec<f64> = unit.iter().map(|&x| f(x)).collect();
            worst = worst.max((auprc(&pr_curve(&t, &truth).unwrap()) - base).abs());
        }
        count += 1;
    }
    outcome(
        count == 20 && worst <= 1e-12,
        format!("max AUPRC change {worst:.1e} under x^3 and exp on {count} saliency maps (bound 1e-12)"),
    )
}

fn main() -> ExitCode {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = root.join("configs/acceptance.json");
    let tmp = tempfile::tempdir().unwrap();
    let (first, second): (PathBuf, PathBuf) = (tmp.path().join("run1"), tmp.path().join("run2"));

    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "IG completeness", ig_completeness()),
        (3, "metric oracles", metric_oracles()),
    ];
    let audits = audit(&config, &first).and_then(|r| audit(&config, &second).map(|_| r));
    match audits {
        Ok(report) => {
            let cfg = ExperimentConfig::load(&config).unwrap();
            let run = Run::new(cfg, first.clone()).unwrap();
            results.push((4, "end-to-end audit", end_to_end(&report)));
            results.push((5, "cascading randomization sanity", randomization_sanity(&report)));
            results.push((6, "repeatability harness", repeatability(&report, &run)));
            results.push((7, "determinism", determinism(&first, &second)));
            results.push((8, "rank invariance", rank_invariance(&run, &report)));
        }
        Err(e) => {
            for (n, name) in [
                (4, "end-to-end audit"),
                (5, "cascading randomization sanity"),
                (6, "repeatability harness"),
                (7, "determinism"),
                (8, "rank invariance"),
            ] {
                results.push((n, name, outcome(false, e.clone())));
            }
        }
    }
    for (n, name, o) in &results {
        println!("criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if results.iter().all(|(_, _, o)| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
