//! Report rendering: machine-readable JSON, aligned markdown tables and
//! contact-sheet PNGs of (clean | noisy | adversarial | purified) samples.

use std::path::Path;

use crate::data::{add_gaussian_noise, AdversarialSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::gan::PurifierState;
use crate::harness::{EvalReport, ExperimentConfig};
use crate::par::Parallelism;

/// Writes `report.json`, `report.md` and one `grid_<attack>.png` per set
/// under `config.out_dir`.
pub fn render_report(
    report: &EvalReport,
    config: &ExperimentConfig,
    test: &LabeledDataset,
    sets: &[(&AdversarialSet, String)],
    purifier: Option<&PurifierState>,
    mode: Parallelism,
) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(
        config.out_dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(config.out_dir.join("report.md"), markdown_report(report))?;
    if let Some(purifier) = purifier {
        for (set, name) in sets {
            let eps_tag = set
                .manifest
                .params
                .get("eps")
                .and_then(|v| v.as_f64())
                .map(|e| {
                    let t = format!("{e:.4}");
                    format!("_eps{}", t.trim_end_matches('0').trim_end_matches('.'))
                })
                .unwrap_or_default();
            let path = config.out_dir.join(format!("grid_{name}{eps_tag}.png"));
            contact_sheet(set, test, config, purifier, &path, mode)?;
        }
    }
    Ok(())
}

/// Markdown rendering with one row per evaluated condition.
pub fn markdown_report(report: &EvalReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "# Defense evaluation — {}\n", report.dataset);
    let _ = writeln!(out, "created: {}  ", report.created);
    let _ = writeln!(out, "tool: {}  seed: {}\n", report.tool_version, report.seed);

    let _ = writeln!(out, "## Target models (clean test error %)\n");
    let _ = writeln!(out, "| model | clean error | digest |");
    let _ = writeln!(out, "|-------|-------------|--------|");
    for (name, err) in &report.model_clean_errors {
        let digest = report
            .model_digests
            .get(name)
            .map(String::as_str)
            .unwrap_or("-");
        let _ = writeln!(out, "| {name} | {err:.2} | `{digest}` |");
    }

    let _ = writeln!(out, "\n## Error rates (%): target model vs purified\n");
    let _ = writeln!(out, "| input | params | model | n | target | purified |");
    let _ = writeln!(out, "|-------|--------|-------|---|--------|----------|");
    for row in &report.rows {
        let params = if row.params.as_object().map(|o| o.is_empty()).unwrap_or(true) {
            "-".to_string()
        } else {
            row.params.to_string()
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.1} | {:.1} |{}",
            row.input,
            params,
            row.source_model,
            row.n,
            row.target_error,
            row.purified_error,
            row.warning
                .as_ref()
                .map(|w| format!(" <!-- {w} -->"))
                .unwrap_or_default()
        );
    }

    if !report.combo.is_empty() {
        let _ = writeln!(out, "\n## Combination with adversarial training (%)\n");
        let _ = writeln!(out, "| attack | params | n | adversarial training | + purifier |");
        let _ = writeln!(out, "|--------|--------|---|----------------------|------------|");
        for row in &report.combo {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.1} | {:.1} |",
                row.attack, row.params, row.n, row.adv_trained_error, row.combined_error
            );
        }
    }

    let _ = writeln!(out, "\n## Stage durations (s)\n");
    for (stage, secs) in &report.durations {
        let _ = writeln!(out, "- {stage}: {secs:.1}");
    }
    out
}

/// Contact sheet: each row shows one sample as
/// (clean | noisy | adversarial | purified), `config.grid_rows` rows.
/// Panel dimensions are exactly `rows * H` by `4 * W` pixels.
pub fn contact_sheet(
    set: &AdversarialSet,
    test: &LabeledDataset,
    config: &ExperimentConfig,
    purifier: &PurifierState,
    path: &Path,
    mode: Parallelism,
) -> Result<()> {
    let rows = config.grid_rows.min(set.labels.len());
    if rows == 0 {
        return Err(Error::config("contact sheet needs at least one sample"));
    }
    let (h, w, c) = (
        set.images.shape()[1],
        set.images.shape()[2],
        set.images.shape()[3],
    );
    let picks: Vec<usize> = (0..rows).collect();
    let adv = set.images.gather(&picks);
    // the set's source indices recover the matching clean originals
    let clean_idx: Vec<usize> = match &set.manifest.indices {
        Some(idx) => picks.iter().map(|&i| idx[i] as usize).collect(),
        None => picks.clone(),
    };
    let clean = test.images.gather(&clean_idx);
    let noisy = add_gaussian_noise(&clean, config.noise.mean, config.noise.variance, config.seed)?;
    let purified = purifier.purify(&adv, mode)?;

    let cols = 4usize;
    let mut img = image::RgbImage::new((cols * w) as u32, (rows * h) as u32);
    let panels = [&clean, &noisy, &adv, &purified];
    for (col, panel) in panels.iter().enumerate() {
        for row in 0..rows {
            let sample = panel.sample(row);
            for y in 0..h {
                for x in 0..w {
                    let px = |ch: usize| {
                        (sample[(y * w + x) * c + ch].clamp(0.0, 1.0) * 255.0).round() as u8
                    };
                    let rgb = if c == 1 {
                        [px(0), px(0), px(0)]
                    } else {
                        [px(0), px(1), px(2)]
                    };
                    img.put_pixel((col * w + x) as u32, (row * h + y) as u32, image::Rgb(rgb));
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
