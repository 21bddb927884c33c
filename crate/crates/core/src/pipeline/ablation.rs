use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{with_overrides, Phase, TrainConfig};
use super::train::{finetune, pretrain, save_finetune, save_pretrain, FinetuneResult, Init};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::format_table;

/// One row of an ablation: pretraining overrides and their row labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub labels: Vec<String>,
    pub overrides: Vec<(String, Value)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub title: String,
    /// Header of each label column.
    pub columns: Vec<String>,
    pub cells: Vec<AblationCell>,
    /// Labels of the scratch-initialized row, when it is shown.
    pub baseline_row: Option<Vec<String>>,
    /// Whether rows carry a Dice delta against the scratch baseline.
    pub delta: bool,
}

impl AblationSpec {
    fn needs_baseline(&self) -> bool {
        self.delta || self.baseline_row.is_some()
    }
}

pub const ABLATION_PRESETS: [&str; 7] = ["target", "strategy", "ratio", "alpha", "pb", "samples", "decoder-loss"];

fn cell(labels: &[&str], overrides: &[(&str, Value)]) -> AblationCell {
    AblationCell {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn single_axis(title: &str, column: &str, key: &str, rows: &[(&str, Value)], baseline: bool) -> AblationSpec {
    AblationSpec {
        title: title.into(),
        columns: vec![column.into()],
        cells: rows.iter().map(|(l, v)| cell(&[l], &[(key, v.clone())])).collect(),
        baseline_row: baseline.then(|| vec!["baseline".into()]),
        delta: baseline,
    }
}

/// Row layouts of the standard ablation tables.
pub fn ablation_preset(name: &str) -> Result<AblationSpec> {
    Ok(match name {
        "target" => {
            let t = |low: &str, high: &str| {
                let key = |s: &str| match s {
                    "high-pass" => "high_pass",
                    "low-pass" => "low_pass",
                    "all frequency" => "all_pass",
                    "original image" => "raw_image",
                    _ => "none",
                };
                cell(
                    &[low, high],
                    &[("loss.low_target", json!(key(low))), ("loss.high_target", json!(key(high)))],
                )
            };
            AblationSpec {
                title: "Reconstruction target and supervision scheme".into(),
                columns: vec!["low-level target".into(), "high-level target".into()],
                cells: vec![
                    t("high-pass", "-"),
                    t("-", "low-pass"),
                    t("original image", "original image"),
                    t("all frequency", "all frequency"),
                    t("low-pass", "high-pass"),
                    t("high-pass", "low-pass"),
                ],
                baseline_row: Some(vec!["-".into(), "-".into()]),
                delta: true,
            }
        }
        "strategy" => single_axis(
            "Masking strategy",
            "Masking strategy",
            "mask.strategy",
            &[
                ("random mask", json!("random")),
                ("block wise mask", json!("blockwise")),
                ("foreground mask", json!("foreground")),
            ],
            true,
        ),
        "ratio" => single_axis(
            "Masking ratio",
            "Masking Ratio",
            "mask.ratio",
            &[
                ("0.75", json!(0.75)),
                ("0.50", json!(0.5)),
                ("0.25", json!(0.25)),
                ("0.15", json!(0.15)),
                ("0.15, 0.20, 0.25", json!([0.15, 0.2, 0.25])),
                ("0.25, 0.50, 0.75", json!([0.25, 0.5, 0.75])),
            ],
            true,
        ),
        "alpha" => single_axis(
            "Loss weight alpha",
            "alpha",
            "loss.alpha",
            &[("0.5", json!(0.5)), ("1", json!(1.0)), ("3", json!(3.0)), ("5", json!(5.0))],
            false,
        ),
        "pb" => single_axis(
            "High-/low-frequency boundary",
            "PB",
            "loss.pb",
            &[("5", json!(5.0)), ("10", json!(10.0)), ("20", json!(20.0)), ("50", json!(50.0))],
            false,
        ),
        "samples" => single_axis(
            "Number of pretraining samples",
            "Training samples",
            "sample_fraction",
            &[
                ("0.3% (i.e. 1 sample)", json!(0.003)),
                ("10%", json!(0.1)),
                ("100%", json!(1.0)),
            ],
            true,
        ),
        "decoder-loss" => AblationSpec {
            title: "Decoder and pretraining loss".into(),
            columns: vec!["Decoder".into(), "Loss".into()],
            cells: vec![
                cell(&["Single", "Focal"], &[("decoder.kind", json!("single")), ("loss.kind", json!("focal"))]),
                cell(&["BAD", "L1"], &[("decoder.kind", json!("bad")), ("loss.kind", json!("l1"))]),
                cell(&["BAD", "MSE"], &[("decoder.kind", json!("bad")), ("loss.kind", json!("mse"))]),
                cell(&["BAD", "Focal"], &[("decoder.kind", json!("bad")), ("loss.kind", json!("focal"))]),
            ],
            baseline_row: None,
            delta: true,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown ablation preset {other:?} (expected one of {})",
                ABLATION_PRESETS.join(", ")
            )))
        }
    })
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(value_label).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// Cartesian product of `axes`, one label column per key. An empty grid
/// yields only the scratch baseline.
pub fn grid_spec(axes: &[(String, Vec<Value>)]) -> AblationSpec {
    let mut cells = if axes.is_empty() {
        Vec::new()
    } else {
        vec![AblationCell {
            labels: Vec::new(),
            overrides: Vec::new(),
        }]
    };
    for (key, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.labels.push(value_label(v));
                    c.overrides.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut baseline = vec!["baseline".to_string()];
    baseline.resize(axes.len().max(1), "-".into());
    AblationSpec {
        title: "Ablation grid".into(),
        columns: if axes.is_empty() {
            vec!["run".into()]
        } else {
            axes.iter().map(|(k, _)| k.clone()).collect()
        },
        cells,
        baseline_row: Some(baseline),
        delta: true,
    }
}

/// Parses `KEY=V1,V2,...`; a bracketed value such as `[0.15,0.2]` stays one item.
pub fn parse_axis(s: &str) -> Result<(String, Vec<Value>)> {
    let (k, rest) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid axis {s:?} is not KEY=V1,V2,...")))?;
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in rest.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ => {}
        }
        if ch == ',' && depth == 0 {
            items.push(std::mem::take(&mut cur));
        } else {
            cur.push(ch);
        }
    }
    items.push(cur);
    let values = items
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| serde_json::from_str(t).unwrap_or_else(|_| Value::String(t.to_string())))
        .collect::<Vec<_>>();
    if values.is_empty() {
        return Err(Error::Config(format!("grid axis {s:?} has no values")));
    }
    Ok((k.trim().to_string(), values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub labels: Vec<String>,
    pub baseline: bool,
    /// Dice of each nested region, then their mean.
    pub region_dice: Vec<f64>,
    pub mean_dice: f64,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row_labels(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.labels.clone()).collect()
    }

    /// Aligned text table, Dice in percent.
    pub fn to_table(&self) -> String {
        let n_regions = self.rows.first().map_or(0, |r| r.region_dice.len());
        let mut headers: Vec<String> = self.columns.clone();
        headers.extend((1..=n_regions).map(|k| format!("labels>={k}")));
        headers.push("Average".into());
        let with_delta = self.rows.iter().any(|r| r.delta.is_some());
        if with_delta {
            headers.push("Delta".into());
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = r.labels.clone();
                cells.extend(r.region_dice.iter().map(|d| format!("{:.2}", 100.0 * d)));
                cells.push(format!("{:.2}", 100.0 * r.mean_dice));
                if with_delta {
                    cells.push(r.delta.map_or(String::new(), |d| format!("{:+.2}", 100.0 * d)));
                }
                cells
            })
            .collect();
        let h: Vec<&str> = headers.iter().map(String::as_str).collect();
        format!("{}\n{}", self.title, format_table(&h, &rows))
    }
}

fn row_from(labels: Vec<String>, baseline: bool, result: &FinetuneResult) -> AblationRow {
    AblationRow {
        labels,
        baseline,
        region_dice: result.mean.regions.iter().map(|r| r.dice).collect(),
        mean_dice: result.mean.mean_dice,
        delta: None,
    }
}

/// Runs pretraining then fine-tuning per cell with shared seeds, plus a
/// scratch-initialized fine-tune when the table has a baseline row or a delta column.
///
/// Every cell configuration is resolved before any training starts. Cells
/// run on up to `jobs` threads; results do not depend on `jobs`.
pub fn run_ablation(
    spec: &AblationSpec,
    pre_cfg: &TrainConfig,
    ft_cfg: &TrainConfig,
    data: &Dataset,
    jobs: usize,
    out: Option<&Path>,
) -> Result<AblationReport> {
    if pre_cfg.phase != Phase::Pretrain || ft_cfg.phase != Phase::Finetune {
        return Err(Error::Config("ablation needs a pretrain and a finetune config".into()));
    }
    ft_cfg.validate()?;
    let cfgs = spec
        .cells
        .iter()
        .map(|c| with_overrides(pre_cfg, &c.overrides))
        .collect::<Result<Vec<_>>>()?;
    let mut ft_scratch = ft_cfg.clone();
    ft_scratch.init = "scratch".into();

    // job 0 is the baseline when present, then one job per cell
    let base_jobs = usize::from(spec.needs_baseline());
    let n_jobs = base_jobs + cfgs.len();
    let results: Mutex<Vec<Option<Result<FinetuneResult>>>> = Mutex::new((0..n_jobs).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_job = |j: usize| -> Result<FinetuneResult> {
        if j < base_jobs {
            info!("ablation: scratch baseline");
            let mut r = finetune(&ft_scratch, data, &Init::Scratch)?;
            if let Some(dir) = out {
                save_finetune(&dir.join("baseline"), &ft_scratch, &mut r)?;
            }
            return Ok(r);
        }
        let k = j - base_jobs;
        info!("ablation: cell {k} {:?}", spec.cells[k].labels);
        let (mut rec, model) = pretrain(&cfgs[k], data)?;
        let mut r = finetune(&ft_scratch, data, &Init::from_model(&model))?;
        if let Some(dir) = out {
            let d = dir.join(format!("cell{k}"));
            save_pretrain(&d.join("pretrain"), &cfgs[k], &mut rec, &model)?;
            save_finetune(&d.join("finetune"), &ft_scratch, &mut r)?;
        }
        Ok(r)
    };
    let workers = jobs.clamp(1, n_jobs.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= n_jobs {
                    break;
                }
                let r = run_job(j);
                results.lock().expect("result lock")[j] = Some(r);
            });
        }
    });
    let results: Vec<FinetuneResult> = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;

    let baseline = (base_jobs == 1).then(|| &results[0]);
    let mut rows = Vec::new();
    if let (Some(labels), Some(b)) = (&spec.baseline_row, baseline) {
        rows.push(row_from(labels.clone(), true, b));
    }
    for (c, r) in spec.cells.iter().zip(&results[base_jobs..]) {
        let mut row = row_from(c.labels.clone(), false, r);
        if spec.delta {
            row.delta = baseline.map(|b| r.mean.mean_dice - b.mean.mean_dice);
        }
        rows.push(row);
    }
    let report = AblationReport {
        title: spec.title.clone(),
        columns: spec.columns.clone(),
        rows,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("ablation.json");
        let text = serde_json::to_string_pretty(&json!({"spec": spec, "report": report}))
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        let p = dir.join("ablation.txt");
        std::fs::write(&p, report.to_table()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = grid_spec(&[
            parse_axis("mask.strategy=foreground,random").unwrap(),
            parse_axis("mask.ratio=0.25,[0.15,0.2,0.25]").unwrap(),
        ]);
        assert_eq!(g.cells.len(), 4);
        assert_eq!(g.cells[1].labels, vec!["foreground", "0.15, 0.2, 0.25"]);
        assert!(grid_spec(&[]).cells.is_empty());
        assert!(parse_axis("loss.pb=").is_err());
    }

    #[test]
    fn presets_resolve_against_defaults() {
        let base = TrainConfig::preset("desk", Phase::Pretrain).unwrap();
        for name in ABLATION_PRESETS {
            let spec = ablation_preset(name).unwrap();
            for c in &spec.cells {
                with_overrides(&base, &c.overrides).unwrap();
            }
        }
    }

    #[test]
    fn results_independent_of_jobs() {
        let data = crate::data::gen_dataset(10, 16, 4, 4, 8).unwrap();
        let mut pre = TrainConfig::preset("desk", Phase::Pretrain).unwrap();
        pre.max_steps = Some(2);
        pre.batch_size = 4;
        let mut ft = TrainConfig::preset("desk", Phase::Finetune).unwrap();
        ft.max_steps = Some(2);
        ft.batch_size = 4;
        ft.folds = Some(vec![2]);
        let spec = ablation_preset("strategy").unwrap();
        let serial = run_ablation(&spec, &pre, &ft, &data, 1, None).unwrap();
        let parallel = run_ablation(&spec, &pre, &ft, &data, 3, None).unwrap();
        assert_eq!(serial, parallel);
    }
}
