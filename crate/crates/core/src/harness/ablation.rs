use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{run_pipeline, RunManifest};
use super::PipelineConfig;
use crate::algo::{read_metrics_csv, Variant};
use crate::algo::train::csv_error;
use crate::env::Tier;
use crate::error::{Error, Result};

/// One (tier, variant, seed) cell; `normalized_score` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub tier: Tier,
    pub variant: Variant,
    pub seed: u64,
    pub normalized_score: Option<f64>,
    pub failure: Option<String>,
}

/// Mean and sample standard deviation per variant; `None` when no seed finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Tier name, or `Average` for the across-tier row.
    pub label: String,
    pub cells: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    /// One row per tier followed by the `Average` row of per-tier means.
    pub summary: Vec<SummaryRow>,
    pub manifests: Vec<RunManifest>,
    pub files: Vec<PathBuf>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

pub(crate) fn summarize(cells: &[AblationCell], tiers: &[Tier]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = tiers
        .iter()
        .map(|&tier| SummaryRow {
            label: tier.name().into(),
            cells: Variant::ALL
                .iter()
                .map(|&v| {
                    let xs: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.tier == tier && c.variant == v)
                        .filter_map(|c| c.normalized_score)
                        .collect();
                    mean_std(&xs)
                })
                .collect(),
        })
        .collect();
    let average = (0..Variant::ALL.len())
        .map(|i| {
            let means: Vec<f64> = rows.iter().filter_map(|r| r.cells[i].map(|(m, _)| m)).collect();
            mean_std(&means)
        })
        .collect();
    rows.push(SummaryRow {
        label: "Average".into(),
        cells: average,
    });
    rows
}

fn write_cells_csv(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["tier", "variant", "seed", "normalized_score", "failure"])
        .map_err(csv_error)?;
    for c in cells {
        w.write_record([
            c.tier.name().to_string(),
            c.variant.name().to_string(),
            c.seed.to_string(),
            c.normalized_score.map(|s| s.to_string()).unwrap_or_default(),
            c.failure.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["tier".to_string()];
    for v in Variant::ALL {
        header.push(format!("{} mean", v.label()));
        header.push(format!("{} std", v.label()));
    }
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        for c in &r.cells {
            match c {
                Some((m, s)) => rec.extend([m.to_string(), s.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table: one row per tier plus `Average`, one column per variant.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let width = 22;
    let mut out = format!("{:<16}", "Tier");
    for v in Variant::ALL {
        let _ = write!(out, "{:>width$}", v.label());
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<16}", r.label);
        for c in &r.cells {
            let cell = match c {
                Some((m, s)) => format!("{m:.1} ± {s:.1}"),
                None => "missing".into(),
            };
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    out
}

/// Runs every tier × variant × seed cell of `config`, then writes
/// `ablation/ablation.csv` (one row per cell), `ablation/summary.csv` and
/// `ablation/summary.txt`. Failed cells are kept and reported as missing.
pub fn run_ablation(config: &PipelineConfig) -> Result<AblationReport> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut manifests = Vec::new();
    for &tier in &config.tiers {
        for variant in Variant::ALL {
            for &seed in &config.seeds {
                let mut c = config.clone();
                c.tier = tier;
                c.seed = seed;
                c.variant.variant = variant;
                let m = run_pipeline(&c)?;
                cells.push(AblationCell {
                    tier,
                    variant,
                    seed,
                    normalized_score: m.final_normalized_score,
                    failure: m.failure.as_ref().map(|f| format!("{}: {}", f.stage, f.message)),
                });
                manifests.push(m);
            }
        }
    }
    let summary = summarize(&cells, &config.tiers);
    let dir = config.out_dir.join("ablation");
    fs::create_dir_all(&dir)?;
    let files = vec![dir.join("ablation.csv"), dir.join("summary.csv"), dir.join("summary.txt")];
    write_cells_csv(&files[0], &cells)?;
    write_summary_csv(&files[1], &summary)?;
    fs::write(&files[2], format_summary(&summary))?;
    Ok(AblationReport {
        cells,
        summary,
        manifests,
        files,
    })
}

/// One `epoch,normalized_score` CSV per run under `out_dir/curves`.
pub fn emit_plots_data(manifests: &[RunManifest], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let missing: Vec<String> = manifests
        .iter()
        .filter(|m| m.metrics.as_ref().is_none_or(|p| !p.is_file()))
        .map(|m| format!("{}/{}/seed{}", m.tier.name(), m.variant.name(), m.seed))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(format!("metric logs for {}", missing.join(", "))));
    }
    let dir = out_dir.join("curves");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for m in manifests {
        let rows = read_metrics_csv(m.metrics.as_ref().expect("checked above"))?;
        let path = dir.join(format!("{}-{}-seed{}.csv", m.tier.name(), m.variant.name(), m.seed));
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        w.write_record(["epoch", "normalized_score"]).map_err(csv_error)?;
        for r in rows {
            w.write_record([r.epoch.to_string(), r.normalized_score.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        files.push(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(tier: Tier, variant: Variant, seed: u64, score: Option<f64>) -> AblationCell {
        AblationCell {
            tier,
            variant,
            seed,
            normalized_score: score,
            failure: None,
        }
    }

    #[test]
    fn summary_has_tier_rows_and_average() {
        let mut cells = Vec::new();
        for (i, v) in Variant::ALL.iter().enumerate() {
            cells.push(cell(Tier::Medium, *v, 0, Some(10.0 * i as f64)));
            cells.push(cell(Tier::Medium, *v, 1, Some(10.0 * i as f64 + 2.0)));
            cells.push(cell(Tier::Expert, *v, 0, Some(50.0)));
        }
        cells.push(cell(Tier::Expert, Variant::Cocoa, 1, None));
        let rows = summarize(&cells, &[Tier::Medium, Tier::Expert]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].label, "Average");
        let (m, s) = rows[0].cells[1].unwrap();
        assert_eq!(m, 11.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        // failed seed is skipped, not counted as zero
        assert_eq!(rows[1].cells[2], Some((50.0, 0.0)));
        assert_eq!(rows[2].cells[0].unwrap().0, 25.5);
        let text = format_summary(&rows);
        assert!(text.contains("+COCOA (w/o A.S.)"));
        assert!(text.lines().last().unwrap().starts_with("Average"));
    }

    #[test]
    fn missing_cells_are_marked() {
        let rows = summarize(&[cell(Tier::Medium, Variant::Alone, 0, Some(1.0))], &[Tier::Medium]);
        assert!(format_summary(&rows).contains("missing"));
    }
}
