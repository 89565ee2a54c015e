//! Merge evaluated runs into one table: methods by noise level, plus the
//! upper-boundary cells (noisy labels scored against clean ones).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use geoprior_core::metrics::{summarize, write_csv, ImageScores, SummaryRow};
use geoprior_train::PriorMode;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::manifest::{load_stage, require_same, Input, StageManifest};
use crate::scores::read_scores;
use crate::stages::{RunConfig, LOG, SCORES, UPPER_BOUNDARY_METHOD, UPPER_BOUNDARY_SCORES};
use crate::svg::{line_chart, Series};

pub const RESULTS: &str = "results.csv";
pub const TABLE: &str = "table.csv";
pub const CURVES: &str = "learning_curves.svg";

const NOISE: [&str; 3] = ["clean", "L1", "L2"];

fn methods() -> [&'static str; 4] {
    [PriorMode::None.method(), PriorMode::Binary.method(), PriorMode::Geodesic.method(), UPPER_BOUNDARY_METHOD]
}

fn rank(list: &[&str], v: &str, what: &str) -> Result<usize> {
    list.iter().position(|&x| x == v).ok_or_else(|| Error::Config(format!("unknown {what} {v:?}")))
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
}

struct Run {
    key: (usize, usize, u64),
    cfg: RunConfig,
    scores: Vec<ImageScores>,
    curve: Vec<(f64, f64)>,
}

#[derive(Default)]
struct Cell {
    scores: Vec<ImageScores>,
    seeds: Vec<u64>,
}

#[derive(Serialize)]
struct CellInfo<'a> {
    method: &'a str,
    noise_level: &'a str,
    seeds: &'a [u64],
    n_images: usize,
}

/// Mean validation Dice per epoch from a segmentor log.
fn val_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = (5..8).filter_map(|k| rec.get(k).and_then(|v| v.parse().ok())).collect();
        if vals.len() == 3 {
            let epoch: f64 = rec.get(1).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
            out.push((epoch, vals.iter().sum::<f64>() / 3.0));
        }
    }
    Ok(out)
}

pub fn report(a: &ReportArgs) -> Result<StageManifest> {
    if a.runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut runs = Vec::new();
    let mut inputs: Vec<(String, Input)> = Vec::new();
    let mut upper: BTreeMap<(usize, String), (Input, Vec<ImageScores>)> = BTreeMap::new();
    for dir in &a.runs {
        let m = load_stage(dir, "train-seg")?;
        let cfg: RunConfig = serde_json::from_value(m.config.clone()).map_err(|e| Error::json(dir.join("manifest.json"), e))?;
        let eval_dir = dir.join("eval");
        let em = load_stage(&eval_dir, "eval")?;
        require_same(em.input("train-seg"), &m.as_input(dir), &format!("evaluation in {}", eval_dir.display()))?;
        let noise = rank(&NOISE, &cfg.noise_level, "noise level")?;
        let method = rank(&methods(), &cfg.method, "method")?;
        if let Some(c) = m.input("corrupt") {
            let cdir = Path::new(&c.path);
            let cm = load_stage(cdir, "corrupt")?;
            require_same(Some(c), &cm.as_input(cdir), &format!("run {}", dir.display()))?;
            if !upper.contains_key(&(noise, cm.sha256.clone())) {
                let s = read_scores(&cdir.join(UPPER_BOUNDARY_SCORES))?;
                upper.insert((noise, cm.sha256.clone()), (cm.as_input(cdir), s.into_iter().map(|x| x.1).collect()));
            }
        }
        let key = (noise, method, cfg.train.seed);
        let sort_path = dir.to_string_lossy().into_owned();
        inputs.push((sort_path.clone(), m.as_input(dir)));
        inputs.push((sort_path, em.as_input(&eval_dir)));
        runs.push((
            dir.clone(),
            Run {
                key,
                scores: read_scores(&eval_dir.join(SCORES))?.into_iter().map(|x| x.1).collect(),
                curve: val_curve(&dir.join(LOG))?,
                cfg,
            },
        ));
    }
    runs.sort_by(|x, y| (x.1.key, &x.0).cmp(&(y.1.key, &y.0)));
    inputs.sort_by(|x, y| x.0.cmp(&y.0));

    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    for (_, r) in &runs {
        let cell = cells.entry((r.key.0, r.key.1)).or_default();
        cell.scores.extend_from_slice(&r.scores);
        cell.seeds.push(r.key.2);
    }
    let ub = methods().len() - 1;
    for ((noise, _), (_, scores)) in &upper {
        cells.entry((*noise, ub)).or_default().scores.extend_from_slice(scores);
    }

    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut columns: Vec<(String, Vec<SummaryRow>)> = Vec::new();
    let mut info = Vec::new();
    for (&(noise, method), cell) in &cells {
        let (m, n) = (methods()[method], NOISE[noise]);
        let r = summarize(m, n, &cell.scores)?;
        rows.extend(r.iter().cloned());
        columns.push((format!("{n}/{m}"), r));
        info.push(json!(CellInfo { method: m, noise_level: n, seeds: &cell.seeds, n_images: cell.scores.len() }));
    }

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    let path = a.out.join(RESULTS);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    let path = a.out.join(TABLE);
    fs::write(&path, wide_table(&columns)).map_err(|e| Error::io(&path, e))?;

    let series: Vec<Series> = runs
        .iter()
        .map(|(_, r)| Series {
            name: format!("{} {} s{}", r.cfg.method, r.cfg.noise_level, r.key.2),
            points: r.curve.clone(),
        })
        .collect();
    let path = a.out.join(CURVES);
    fs::write(&path, line_chart("Validation Dice per run", "epoch", "mean DI", &series)).map_err(|e| Error::io(&path, e))?;

    let mut all_inputs: Vec<Input> = inputs.into_iter().map(|x| x.1).collect();
    all_inputs.extend(upper.into_values().map(|x| x.0));
    let manifest = StageManifest::new("report", None, json!({ "cells": info }), all_inputs);
    manifest.write(&a.out, vec![RESULTS.into(), TABLE.into(), CURVES.into()])
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Classes and metrics down, `noise/method` across.
fn wide_table(columns: &[(String, Vec<SummaryRow>)]) -> String {
    let mut s = String::from("metric,class");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let classes = ["LV", "RV", "MYO", "Ave."];
    for metric in ["DI", "HD_mm"] {
        for (k, class) in classes.iter().enumerate() {
            let _ = write!(s, "{metric},{class}");
            for (_, rows) in columns {
                let r = &rows[k];
                let v = if metric == "DI" { Some(r.di_mean) } else { r.hd_mean_mm };
                let _ = write!(s, ",{}", fmt(v));
            }
            s.push('\n');
        }
    }
    s
}
