//! Per-image score files: one row per test image and class.

use std::fs::File;
use std::path::Path;

use geoprior_core::metrics::{ClassScore, ImageScores};
use geoprior_core::Class;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    index: u64,
    class: String,
    #[serde(rename = "DI")]
    dice: f64,
    #[serde(rename = "HD_mm")]
    hd_mm: Option<f64>,
}

pub fn write_scores(path: &Path, scores: &[(u64, ImageScores)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for (index, s) in scores {
        for (c, class) in Class::FOREGROUND.iter().enumerate() {
            w.serialize(Row {
                index: *index,
                class: class.name().to_string(),
                dice: s[c].dice,
                hd_mm: s[c].hd_mm,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<(u64, ImageScores)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Row> = csv::Reader::from_reader(file).deserialize().collect::<Result<_, _>>()?;
    let bad = || Error::Config(format!("{} is not a per-image score file", path.display()));
    if rows.len() % 3 != 0 {
        return Err(bad());
    }
    rows.chunks(3)
        .map(|chunk| {
            let mut s = [ClassScore { dice: 0.0, hd_mm: None }; 3];
            for (c, (r, class)) in chunk.iter().zip(Class::FOREGROUND).enumerate() {
                if r.index != chunk[0].index || r.class != class.name() {
                    return Err(bad());
                }
                s[c] = ClassScore { dice: r.dice, hd_mm: r.hd_mm };
            }
            Ok((chunk[0].index, s))
        })
        .collect()
}
