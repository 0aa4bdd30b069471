//! One function per subcommand. Each returns the JSON summary; primary
//! outputs are only written once every computation has succeeded.

use std::fmt::Write as _;

use anyhow::{anyhow, Context};
use serde::Deserialize;
use serde_json::{json, Value};
use vlpipe_core::caption::{self, CaptionStyle, ImageJudgment};
use vlpipe_core::image_layout::{build_crop_layout, build_token_layout, LayoutConfig};
use vlpipe_core::mixture::{self, AnnotationRecord, DatasetEntry, MixtureSpec, PackedRecord};
use vlpipe_core::point_eval::{self, CountStrategy, GroundTruthRecord, PredictionRecord};
use vlpipe_core::points::{self, Fragment, ParseMode, PointSet, PointSetRecord};
use vlpipe_core::ranking::{self, FitOptions, PreferenceLog, TiePolicy};

use crate::output::{self, path_str, write_atomic, CliError, CliResult};
use crate::plot;
use crate::{
    CaphintArgs, Capf1Args, CountArgs, EloArgs, EvalPointArgs, LayoutArgs, MixArgs, PackArgs, PointsAction,
    PointsArgs, TextInput, TiePolicyArg,
};

pub fn layout(a: LayoutArgs) -> CliResult<Value> {
    let mut config: LayoutConfig = match &a.config {
        Some(p) => output::read_config(p)?,
        None => LayoutConfig::default(),
    };
    if let Some(v) = a.crop_size {
        config.crop_size_px = v;
    }
    if let Some(v) = a.patch_size {
        config.patch_size_px = v;
    }
    if let Some(v) = a.overlap {
        config.overlap_margin_patches = v;
    }
    if let Some(v) = a.pool_window {
        config.pool_window = v;
    }
    if let Some(v) = a.max_crops {
        config.max_crops = v;
    }

    let crops = build_crop_layout(a.width, a.height, &config)?;
    let tokens = build_token_layout(&crops)?;
    let (lattice_rows, lattice_cols) = crops.global_patch_dims();
    let mut summary = json!({
        "width": a.width,
        "height": a.height,
        "grid": format!("{}x{}", crops.grid_cols, crops.grid_rows),
        "grid_rows": crops.grid_rows,
        "grid_cols": crops.grid_cols,
        "crops": crops.crops.len(),
        "scale": crops.scale,
        "scale_exact": format!("{}/{}", crops.scale_exact.num, crops.scale_exact.den),
        "scaled_size": [crops.scaled_w, crops.scaled_h],
        "padding": {
            "left": crops.pad_left,
            "top": crops.pad_top,
            "right": crops.pad_right,
            "bottom": crops.pad_bottom,
        },
        "patch_lattice": [lattice_rows, lattice_cols],
        "tokens": tokens.counts,
        "config": config,
    });
    if let Some(out) = &a.out {
        let doc = json!({ "crop_layout": crops, "token_layout": tokens });
        write_atomic(out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}

pub fn eval_point(a: EvalPointArgs) -> CliResult<Value> {
    let gt: Vec<GroundTruthRecord> = point_eval::read_jsonl(output::open(&a.gt)?)?;
    let preds: Vec<PredictionRecord> = point_eval::read_jsonl(output::open(&a.pred)?)?;
    let scores = point_eval::evaluate_dataset(&gt, &preds)?;
    let mut csv = Vec::new();
    let mean = point_eval::write_scores_csv(&scores, &mut csv)?;
    let no_target = gt.iter().filter(|g| g.points.is_empty()).count();
    let mut summary = json!({
        "examples": scores.len(),
        "no_target_examples": no_target,
        "precision": mean.precision,
        "recall": mean.recall,
        "f1": mean.f1,
    });
    if let Some(out) = &a.out {
        write_atomic(out, &csv)?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}

pub fn elo(a: EloArgs) -> CliResult<Value> {
    let log = PreferenceLog::read_csv(output::open(&a.log)?)?;
    let opts = FitOptions {
        anchor: a.anchor,
        tie_policy: match a.tie_policy {
            TiePolicyArg::HalfWin => TiePolicy::HalfWin,
            TiePolicyArg::Ignore => TiePolicy::Ignore,
        },
        max_iterations: a.max_iterations,
        ..FitOptions::default()
    };
    let table = ranking::fit_bradley_terry(&log, &opts)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;

    let mut summary = json!({
        "matches": log.len(),
        "models": table.ratings.len(),
        "components": table.components,
        "iterations": table.iterations,
        "gradient_norm": table.gradient_norm,
        "log_likelihood": table.log_likelihood,
        "ratings": table.ratings.iter().map(|r| json!({"model": r.model, "rating": r.rating})).collect::<Vec<_>>(),
        "warnings": table.warnings,
    });
    if a.win_rates {
        let (models, matrix) = ranking::win_rate_matrix(&log);
        summary["win_rates"] = json!({ "models": models, "matrix": matrix });
    }
    if let Some(out) = &a.out {
        write_atomic(out, &csv)?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}

pub fn pack(a: PackArgs) -> CliResult<Value> {
    let records: Vec<AnnotationRecord> = output::read_jsonl(&a.annotations)?;
    let run = mixture::pack_records(&records, a.image_tokens, a.max_len)?;
    let stats = mixture::packing_stats(&run.packed)?;
    let mut jsonl = String::new();
    for p in &run.packed {
        jsonl.push_str(&serde_json::to_string(&PackedRecord::from(p))?);
        jsonl.push('\n');
    }
    let truncated = run.packed.iter().flat_map(|p| &p.segments).filter(|s| s.truncated).count();
    let images = run.packed.iter().map(|p| p.image_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    let mut summary = json!({
        "annotations": records.len(),
        "dropped_over_count": run.dropped_over_count,
        "images": images,
        "sequences": run.packed.len(),
        "truncated_segments": truncated,
        "max_len": a.max_len,
        "stats": stats,
    });
    if let Some(out) = &a.out {
        write_atomic(out, jsonl.as_bytes())?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}

pub fn mix(a: MixArgs) -> CliResult<Value> {
    let spec: MixtureSpec = match (&a.spec, &a.sizes) {
        (Some(p), _) => output::read_config(p)?,
        (None, Some(sizes)) => MixtureSpec {
            datasets: sizes.iter().enumerate().map(|(i, &s)| DatasetEntry::new(format!("d{i}"), s)).collect(),
        },
        (None, None) => return Err(CliError::Usage("mix needs --spec or --sizes".into())),
    };
    let rates = mixture::mixture_rates(&spec)?;
    let mut summary = json!({ "rates": rates, "seed": a.seed, "samples": a.samples });
    if a.samples > 0 {
        let draws = mixture::sample_datasets(&rates, a.samples, a.seed);
        let mut counts = vec![0usize; rates.len()];
        let mut lines = String::new();
        for &d in &draws {
            counts[d] += 1;
            lines.push_str(&rates[d].name);
            lines.push('\n');
        }
        summary["counts"] = json!(rates
            .iter()
            .zip(&counts)
            .map(|(r, c)| json!({"name": r.name, "count": c}))
            .collect::<Vec<_>>());
        if let Some(out) = &a.out {
            write_atomic(out, lines.as_bytes())?;
            summary["out"] = json!(path_str(out));
        }
    }
    Ok(summary)
}

pub fn caphint(a: CaphintArgs) -> CliResult<Value> {
    let style: CaptionStyle = a.style.parse().map_err(CliError::Usage)?;
    let hint = caption::make_length_hint_seeded(a.chars, a.sigma, a.include_prob, a.seed)?;
    Ok(json!({
        "chars": a.chars,
        "hint": hint.value,
        "present": hint.present,
        "prompt": caption::format_caption_prompt(style, hint),
        "seed": a.seed,
    }))
}

pub fn capf1(a: Capf1Args) -> CliResult<Value> {
    let judgments: Vec<ImageJudgment> = output::read_jsonl(&a.judgments)?;
    if !a.sweep {
        let m = caption::cap_f1(&judgments)?;
        let csv = format!(
            "precision,recall,f1,images,recall_excluded\n{:.6},{:.6},{:.6},{},{}\n",
            m.precision, m.recall, m.f1, m.images, m.recall_excluded
        );
        let mut summary = serde_json::to_value(m)?;
        if let Some(out) = &a.out {
            write_atomic(out, csv.as_bytes())?;
            summary["out"] = json!(path_str(out));
        }
        return Ok(summary);
    }

    let groups = caption::group_by_hint(&judgments);
    let unhinted = judgments.len() - groups.values().map(Vec::len).sum::<usize>();
    if unhinted > 0 {
        log::warn!("{unhinted} judgments have no hint and are left out of the sweep");
    }
    let rows = caption::pr_sweep(&groups)?;
    if rows.is_empty() {
        return Err(anyhow!("no hint group could be aggregated").into());
    }
    let mut csv = String::from("hint,precision,recall,f1,images\n");
    for r in &rows {
        writeln!(csv, "{},{:.6},{:.6},{:.6},{}", r.hint, r.precision, r.recall, r.f1, r.images).expect("string write");
    }
    let svg = a.svg.as_ref().map(|_| plot::sweep_chart(&rows));
    let mut summary = json!({ "rows": rows, "unhinted": unhinted });
    if let Some(out) = &a.out {
        write_atomic(out, csv.as_bytes())?;
        summary["out"] = json!(path_str(out));
    }
    if let (Some(path), Some(svg)) = (&a.svg, svg) {
        write_atomic(path, svg.as_bytes())?;
        summary["svg"] = json!(path_str(path));
    }
    Ok(summary)
}

fn read_input(input: &TextInput) -> CliResult<String> {
    match (&input.text, &input.input) {
        (Some(t), _) => Ok(t.clone()),
        (None, Some(p)) => Ok(output::read_text(p)?),
        (None, None) => Err(CliError::Usage("give --text or --input".into())),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecordInput {
    Many(Vec<PointSetRecord>),
    One(PointSetRecord),
}

pub fn points(a: PointsArgs) -> CliResult<Value> {
    match a.action {
        PointsAction::Parse { input, lenient, out } => {
            let text = read_input(&input)?;
            let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
            let sets = points::parse_point_sets(&text, mode).map_err(|e| anyhow!("{e}"))?;
            let records: Vec<PointSetRecord> = sets.iter().map(PointSetRecord::from).collect();
            let total: usize = sets.iter().map(|s| s.points.len()).sum();
            let mut summary = json!({ "action": "parse", "sets": records, "points": total });
            if let Some(out) = &out {
                write_atomic(out, serde_json::to_string_pretty(&records)?.as_bytes())?;
                summary["out"] = json!(path_str(out));
            }
            Ok(summary)
        }
        PointsAction::Render { input, out } => {
            let text = read_input(&input)?;
            let records = match serde_json::from_str(&text).context("point set JSON")? {
                RecordInput::Many(v) => v,
                RecordInput::One(r) => vec![r],
            };
            let mut rendered = Vec::new();
            for r in records {
                let set = PointSet::try_from(r).map_err(|e| anyhow!(e))?;
                rendered.push(points::render(&set)?);
            }
            write_lines(out.as_deref(), "render", rendered)
        }
        PointsAction::Order { input, out } => {
            let text = read_input(&input)?;
            let fragments = points::parse(&text, ParseMode::Lenient).map_err(|e| anyhow!("{e}"))?;
            let mut canonical = String::new();
            for f in &fragments {
                match f {
                    Fragment::Text(t) => canonical.push_str(t),
                    Fragment::Points { set, .. } => canonical.push_str(&points::render(set)?),
                }
            }
            write_lines(out.as_deref(), "order", vec![canonical])
        }
    }
}

fn write_lines(out: Option<&std::path::Path>, action: &str, lines: Vec<String>) -> CliResult<Value> {
    let mut summary = json!({ "action": action, "output": lines });
    if let Some(out) = out {
        let mut body = lines.join("\n");
        body.push('\n');
        write_atomic(out, body.as_bytes())?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}

#[derive(Deserialize)]
struct CountRecord {
    id: String,
    response_text: String,
    #[serde(default)]
    count: Option<u64>,
}

pub fn count(a: CountArgs) -> CliResult<Value> {
    let strategy: CountStrategy = a.strategy.parse().map_err(CliError::Usage)?;
    let records: Vec<CountRecord> = output::read_jsonl(&a.responses)?;
    let mut csv = String::from("id,predicted,expected\n");
    let mut labelled = 0usize;
    let mut correct = 0usize;
    let mut items = Vec::with_capacity(records.len());
    for r in &records {
        let predicted = point_eval::extract_count(&r.response_text, strategy);
        let show = |v: Option<u64>| v.map(|n| n.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{}", r.id, show(predicted), show(r.count)).expect("string write");
        if let Some(expected) = r.count {
            labelled += 1;
            if predicted == Some(expected) {
                correct += 1;
            }
        }
        items.push(json!({"id": r.id, "predicted": predicted, "expected": r.count}));
    }
    let mut summary = json!({
        "strategy": a.strategy,
        "responses": records.len(),
        "labelled": labelled,
        "accuracy": if labelled > 0 { Some(correct as f64 / labelled as f64) } else { None },
        "items": items,
    });
    if let Some(out) = &a.out {
        write_atomic(out, csv.as_bytes())?;
        summary["out"] = json!(path_str(out));
    }
    Ok(summary)
}
