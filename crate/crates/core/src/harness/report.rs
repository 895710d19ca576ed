use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    differences, mean_std, paired_bootstrap, BaselineComparison, Comparison, ConsistencyKind, ConsistencyResult,
    RandomizationOutcome, RandomizationTrace, ReplicateBaseline, UtilityResult, Verdict,
};
use crate::data::{ClassCounts, Flavor, Split};
use crate::error::{Error, Result};
use crate::models::ArchId;
use crate::saliency::Method;

pub const REPORT_SCHEMA: &str = "trust-report/1";

pub const GRID_COLUMNS: [&str; 7] = [
    "Utility(AVG)",
    "Utility(BASE)",
    "Randomization",
    "Repeatability(LOW)",
    "Repeatability(BASE)",
    "Reproducibility(LOW)",
    "Reproducibility(BASE)",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub method: Method,
    pub utility_avg: Verdict,
    pub utility_base: Verdict,
    pub randomization: Verdict,
    pub repeatability_low: Verdict,
    pub repeatability_base: Verdict,
    pub reproducibility_low: Verdict,
    pub reproducibility_base: Verdict,
}

impl GridRow {
    pub fn verdicts(&self) -> [Verdict; 7] {
        [
            self.utility_avg,
            self.utility_base,
            self.randomization,
            self.repeatability_low,
            self.repeatability_base,
            self.reproducibility_low,
            self.reproducibility_base,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub flavor: Flavor,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub counts: BTreeMap<Split, ClassCounts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub role: String,
    pub arch: ArchId,
    pub seed: u64,
    pub fingerprint: String,
    /// Test-split ROC-AUC of the image-level score.
    pub test_roc_auc: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySection {
    /// What the BASE column compares against.
    pub base_label: String,
    /// Positive test images scored, aligned with every AUPRC list.
    pub image_ids: Vec<String>,
    pub baselines: BaselineComparison,
    pub methods: Vec<UtilityResult>,
}

/// Everything a report is assembled from.
#[derive(Clone, Debug)]
pub struct ReportInputs {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub decisions: Vec<String>,
    pub methods: Vec<Method>,
    pub dataset: DatasetSummary,
    pub models: Vec<ModelSummary>,
    pub utility: UtilitySection,
    pub randomization: RandomizationOutcome,
    pub consistency_image_ids: Vec<String>,
    pub segmenter_replicate: ReplicateBaseline,
    pub repeatability: Vec<ConsistencyResult>,
    pub reproducibility: Vec<ConsistencyResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub schema: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub decisions: Vec<String>,
    pub dataset: DatasetSummary,
    pub models: Vec<ModelSummary>,
    pub utility: UtilitySection,
    pub randomization: RandomizationOutcome,
    /// Images behind the repeatability and reproducibility SSIM lists.
    pub consistency_image_ids: Vec<String>,
    pub segmenter_replicate: ReplicateBaseline,
    pub repeatability: Vec<ConsistencyResult>,
    pub reproducibility: Vec<ConsistencyResult>,
    pub grid: Vec<GridRow>,
}

fn find<'a, T>(items: &'a [T], method: Method, test: &str, key: impl Fn(&T) -> Method) -> Result<&'a T> {
    items
        .iter()
        .find(|t| key(t) == method)
        .ok_or_else(|| Error::precondition(format!("missing {test} results for {method}")))
}

/// PASS/FAIL grid from the stored verdict inputs, one row per method.
pub fn compute_grid(
    methods: &[Method],
    utility: &[UtilityResult],
    randomization: &[RandomizationTrace],
    repeatability: &[ConsistencyResult],
    reproducibility: &[ConsistencyResult],
) -> Result<Vec<GridRow>> {
    methods
        .iter()
        .map(|&m| {
            let u = find(utility, m, "utility", |r| r.method)?;
            let r = find(randomization, m, "randomization", |r| r.method)?;
            let rep = find(repeatability, m, "repeatability", |r| r.method)?;
            let rpr = find(reproducibility, m, "reproducibility", |r| r.method)?;
            Ok(GridRow {
                method: m,
                utility_avg: u.verdict_avg(),
                utility_base: u.verdict_base(),
                randomization: r.verdict,
                repeatability_low: rep.verdict_low(),
                repeatability_base: rep.verdict_base(),
                reproducibility_low: rpr.verdict_low(),
                reproducibility_base: rpr.verdict_base(),
            })
        })
        .collect()
}

pub fn build_report(inputs: ReportInputs) -> Result<TrustReport> {
    if inputs.methods.is_empty() {
        return Err(Error::precondition("report needs at least one method"));
    }
    for (kind, results) in [
        (ConsistencyKind::Repeatability, &inputs.repeatability),
        (ConsistencyKind::Reproducibility, &inputs.reproducibility),
    ] {
        if let Some(r) = results.iter().find(|r| r.kind != kind) {
            return Err(Error::invalid(format!("{} result filed under {kind}", r.kind)));
        }
    }
    let grid = compute_grid(
        &inputs.methods,
        &inputs.utility.methods,
        &inputs.randomization.traces,
        &inputs.repeatability,
        &inputs.reproducibility,
    )?;
    Ok(TrustReport {
        schema: REPORT_SCHEMA.to_string(),
        config_hash: inputs.config_hash,
        config: inputs.config,
        decisions: inputs.decisions,
        dataset: inputs.dataset,
        models: inputs.models,
        utility: inputs.utility,
        randomization: inputs.randomization,
        consistency_image_ids: inputs.consistency_image_ids,
        segmenter_replicate: inputs.segmenter_replicate,
        repeatability: inputs.repeatability,
        reproducibility: inputs.reproducibility,
        grid,
    })
}

fn recheck(label: &str, stored: &Comparison, a: &[f64], b: &[f64]) -> Result<()> {
    let again = paired_bootstrap(&differences(a, b)?, stored.resamples, stored.seed)?;
    if &again != stored {
        return Err(Error::invalid(format!("{label}: stored comparison does not match its per-image data")));
    }
    Ok(())
}

fn recheck_mean(label: &str, mean: f64, values: &[f64]) -> Result<()> {
    if mean_std(values).0 != mean {
        return Err(Error::invalid(format!("{label}: stored mean does not match its per-image data")));
    }
    Ok(())
}

impl TrustReport {
    /// Recomputes every verdict from the stored per-image statistics and
    /// checks it against the stored grid.
    pub fn verify(&self) -> Result<()> {
        if self.schema != REPORT_SCHEMA {
            return Err(Error::invalid(format!("unsupported report schema `{}`", self.schema)));
        }
        let b = &self.utility.baselines;
        recheck("utility baseline", &b.base_vs_avg, &b.base_auprc, &b.avg_auprc)?;
        for u in &self.utility.methods {
            let label = format!("utility {}", u.method);
            recheck_mean(&label, u.mean, &u.auprc)?;
            recheck(&label, &u.vs_avg, &u.auprc, &u.avg_auprc)?;
            recheck(&label, &u.vs_base, &u.auprc, &u.base_auprc)?;
        }
        for t in &self.randomization.traces {
            if RandomizationTrace::decide(&t.points, t.threshold) != t.verdict {
                return Err(Error::invalid(format!("randomization {}: verdict does not match trace", t.method)));
            }
        }
        for c in self.repeatability.iter().chain(&self.reproducibility) {
            let label = format!("{} {}", c.kind, c.method);
            recheck_mean(&label, c.mean, &c.ssim)?;
            recheck(&label, &c.vs_base, &c.ssim, &self.segmenter_replicate.ssim)?;
        }
        let methods: Vec<Method> = self.grid.iter().map(|r| r.method).collect();
        let grid = compute_grid(
            &methods,
            &self.utility.methods,
            &self.randomization.traces,
            &self.repeatability,
            &self.reproducibility,
        )?;
        if grid != self.grid {
            return Err(Error::invalid("stored grid differs from the grid recomputed from statistics"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let _ = writeln!(s, "Saliency trust report ({})", self.schema);
        let _ = writeln!(s, "config hash: {}", self.config_hash);
        let _ = writeln!(
            s,
            "dataset: {:?} flavor, {} samples of {}x{}, seed {}",
            d.flavor, d.samples, d.height, d.width, d.seed
        );
        for m in &self.models {
            let _ = writeln!(
                s,
                "model {}: {} seed {} fingerprint {} test ROC-AUC {:.4} (best epoch {}, stopped {})",
                m.role, m.arch, m.seed, m.fingerprint, m.test_roc_auc, m.best_epoch, m.stopped_epoch
            );
        }
        let _ = writeln!(s, "\ndesign decisions:");
        for line in &self.decisions {
            let _ = writeln!(s, "  - {line}");
        }

        let _ = writeln!(s, "\nPASS/FAIL grid (BASE = {}):", self.utility.base_label);
        let _ = write!(s, "{:<8}", "method");
        for c in GRID_COLUMNS {
            let _ = write!(s, " {c:>21}");
        }
        s.push('\n');
        for row in &self.grid {
            let _ = write!(s, "{:<8}", row.method.name());
            for v in row.verdicts() {
                let _ = write!(s, " {:>21}", v.to_string());
            }
            s.push('\n');
        }

        let b = &self.utility.baselines;
        let _ = writeln!(s, "\nutility (AUPRC on {} positive test images):", self.utility.image_ids.len());
        let _ = writeln!(s, "  {:<8} {:.4} ± {:.4}", "AVG", b.avg_mean, b.avg_std);
        let _ = writeln!(
            s,
            "  {:<8} {:.4} ± {:.4}  vs AVG: {:+.4} [{:+.4}, {:+.4}]",
            "BASE", b.base_mean, b.base_std, b.base_vs_avg.mean_diff, b.base_vs_avg.ci_low, b.base_vs_avg.ci_high
        );
        for u in &self.utility.methods {
            let _ = writeln!(
                s,
                "  {:<8} {:.4} ± {:.4}  vs AVG: {:+.4} [{:+.4}, {:+.4}]  vs BASE: {:+.4} [{:+.4}, {:+.4}]",
                u.method.name(),
                u.mean,
                u.std,
                u.vs_avg.mean_diff,
                u.vs_avg.ci_low,
                u.vs_avg.ci_high,
                u.vs_base.mean_diff,
                u.vs_base.ci_low,
                u.vs_base.ci_high
            );
        }

        let r = &self.randomization;
        let _ = writeln!(
            s,
            "\ncascading randomization of {} ({} images, blocks {}): fully randomized ROC-AUC {:.4}",
            r.arch,
            r.image_ids.len(),
            r.blocks.join(" > "),
            r.randomized_roc_auc
        );
        for t in &r.traces {
            let trace: Vec<String> = t.points.iter().map(|p| format!("{:.3}", p.mean_ssim)).collect();
            let _ = writeln!(
                s,
                "  {:<8} SSIM by depth [{}]  threshold {:.4}  {}",
                t.method.name(),
                trace.join(", "),
                t.threshold,
                t.verdict
            );
        }

        let rep = &self.segmenter_replicate;
        let _ = writeln!(
            s,
            "\nconsistency (SSIM on {} images; segmenter replicates {:.4} ± {:.4}):",
            self.consistency_image_ids.len(),
            rep.mean,
            rep.std
        );
        for (rp, rd) in self.repeatability.iter().zip(&self.reproducibility) {
            let _ = writeln!(
                s,
                "  {:<8} repeatability {:.4} ± {:.4}  reproducibility {:.4} ± {:.4}",
                rp.method.name(),
                rp.mean,
                rp.std,
                rd.mean,
                rd.std
            );
        }
        s
    }

    fn csv_header(&self) -> String {
        format!("# config_hash={}\n", self.config_hash)
    }

    pub fn utility_csv(&self) -> String {
        let mut s = self.csv_header();
        s.push_str("image_id,method,auprc,avg_auprc,base_auprc\n");
        for u in &self.utility.methods {
            for (i, id) in self.utility.image_ids.iter().enumerate() {
                let _ = writeln!(s, "{id},{},{},{},{}", u.method, u.auprc[i], u.avg_auprc[i], u.base_auprc[i]);
            }
        }
        s
    }

    pub fn consistency_csv(&self) -> String {
        let mut s = self.csv_header();
        s.push_str("image_id,test,method,ssim,segmenter_ssim\n");
        for c in self.repeatability.iter().chain(&self.reproducibility) {
            for (i, id) in self.consistency_image_ids.iter().enumerate() {
                let _ = writeln!(s, "{id},{},{},{},{}", c.kind, c.method, c.ssim[i], self.segmenter_replicate.ssim[i]);
            }
        }
        s
    }

    pub fn trace_csv(&self, trace: &RandomizationTrace) -> String {
        let mut s = self.csv_header();
        s.push_str("depth,block,mean_ssim,std_ssim,threshold\n");
        for p in &trace.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.depth,
                p.block.as_deref().unwrap_or("none"),
                p.mean_ssim,
                p.std_ssim,
                trace.threshold
            );
        }
        s
    }

    /// Line chart of mean SSIM against randomization depth, with the
    /// degradation threshold dashed.
    pub fn trace_svg(&self, trace: &RandomizationTrace) -> String {
        let (w, h, left, right, top, bottom) = (480.0, 300.0, 56.0, 16.0, 32.0, 64.0);
        let lo = trace
            .points
            .iter()
            .map(|p| p.mean_ssim)
            .chain([trace.threshold, 0.0])
            .fold(f64::INFINITY, f64::min)
            .max(-1.0);
        let hi = 1.0f64;
        let n = trace.points.len().max(2) - 1;
        let x = |i: usize| left + (w - left - right) * i as f64 / n as f64;
        let y = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, "<!-- config_hash={} -->", self.config_hash);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{} cascading randomization ({})</text>"#,
            w / 2.0,
            trace.method,
            trace.verdict
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#,
            h - bottom
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            h - bottom,
            w - right,
            h - bottom
        );
        for v in [lo, 0.0, 0.5, 1.0] {
            if v < lo {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"#,
                left - 4.0,
                y(v) + 3.0
            );
        }
        for (i, p) in trace.points.iter().enumerate() {
            let label = p.block.as_deref().unwrap_or("none");
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end" transform="rotate(-40 {:.2} {:.2})">{label}</text>"#,
                x(i),
                h - bottom + 14.0,
                x(i),
                h - bottom + 14.0
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            y(trace.threshold),
            w - right,
            y(trace.threshold)
        );
        let pts: Vec<String> = trace
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(p.mean_ssim)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
        for (i, p) in trace.points.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
                x(i),
                y(p.mean_ssim)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `report.json`, `report.txt`, `tables/*.csv` and
    /// `traces/<METHOD>.{csv,svg}` under `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files: Vec<(PathBuf, String)> = vec![
            (dir.join("report.json"), self.to_json()?),
            (dir.join("report.txt"), self.render_text()),
            (dir.join("tables").join("utility.csv"), self.utility_csv()),
            (dir.join("tables").join("consistency.csv"), self.consistency_csv()),
        ];
        for t in &self.randomization.traces {
            files.push((dir.join("traces").join(format!("{}.csv", t.method)), self.trace_csv(t)));
            files.push((dir.join("traces").join(format!("{}.svg", t.method)), self.trace_svg(t)));
        }
        for (path, text) in &files {
            fs::create_dir_all(path.parent().expect("has parent"))?;
            fs::write(path, text)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
