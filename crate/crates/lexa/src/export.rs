//! Figure-style exports from a run's `metrics.jsonl`: the success curve,
//! the per-goal success heatmap (CSV and PNG) and cumulative coincidental
//! successes during exploration.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{IoContext, LexaError, Result};
use crate::metrics::{self, MetricsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Curves,
    Heatmap,
    Coincidental,
}

const EVAL_PREFIX: &str = "eval/";
const SUCCESS_SUFFIX: &str = "_success";
const COINCIDENTAL_PREFIX: &str = "explore/coincidental_";
const COUNT_SUFFIX: &str = "_count";

/// Pixel edge of one heatmap cell.
const CELL: usize = 12;

fn goal_ids(records: &[MetricsRecord], prefix: &str, suffix: &str) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        for k in r.values.keys() {
            if let Some(id) = k.strip_prefix(prefix).and_then(|s| s.strip_suffix(suffix)) {
                if id != "mean" && !ids.iter().any(|x| x == id) {
                    ids.push(id.to_string());
                }
            }
        }
    }
    ids
}

fn eval_records(records: &[MetricsRecord]) -> Vec<&MetricsRecord> {
    records.iter().filter(|r| r.get("eval/mean_success").is_some()).collect()
}

/// `env_step,mean_success`, one row per evaluation.
pub fn curves_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("env_step,mean_success\n");
    for r in eval_records(records) {
        out.push_str(&format!("{},{}\n", r.env_step, r.get("eval/mean_success").unwrap_or(0.0)));
    }
    out
}

/// Goals × evaluations success matrix.
pub fn heatmap(records: &[MetricsRecord]) -> (Vec<String>, Vec<u64>, Vec<Vec<f64>>) {
    let evals = eval_records(records);
    let ids = goal_ids(records, EVAL_PREFIX, SUCCESS_SUFFIX);
    let steps = evals.iter().map(|r| r.env_step).collect();
    let matrix = ids
        .iter()
        .map(|id| {
            let key = format!("{EVAL_PREFIX}{id}{SUCCESS_SUFFIX}");
            evals.iter().map(|r| r.get(&key).unwrap_or(0.0)).collect()
        })
        .collect();
    (ids, steps, matrix)
}

pub fn heatmap_csv(ids: &[String], steps: &[u64], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("goal_id");
    for s in steps {
        out.push_str(&format!(",{s}"));
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(matrix) {
        out.push_str(id);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Row-major RGB raster of the matrix: white for 0 through dark blue for 1.
pub fn heatmap_pixels(matrix: &[Vec<f64>]) -> (usize, usize, Vec<u8>) {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    let (w, h) = ((cols * CELL).max(1), (rows * CELL).max(1));
    let mut px = vec![255u8; w * h * 3];
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let rgb = [255.0 * (1.0 - 0.9 * v), 255.0 * (1.0 - 0.7 * v), 255.0 * (1.0 - 0.3 * v)];
            for y in i * CELL..(i + 1) * CELL {
                for x in j * CELL..(j + 1) * CELL {
                    let o = (y * w + x) * 3;
                    for c in 0..3 {
                        px[o + c] = rgb[c].round() as u8;
                    }
                }
            }
        }
    }
    (w, h, px)
}

fn write_png(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(rgb)?;
    writer.finish()?;
    Ok(())
}

/// `env_step` then one cumulative count column per goal.
pub fn coincidental_csv(records: &[MetricsRecord]) -> String {
    let ids = goal_ids(records, COINCIDENTAL_PREFIX, COUNT_SUFFIX);
    let mut out = String::from("env_step");
    for id in &ids {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for r in records {
        let keys: Vec<String> = ids
            .iter()
            .map(|id| format!("{COINCIDENTAL_PREFIX}{id}{COUNT_SUFFIX}"))
            .collect();
        if keys.iter().all(|k| r.get(k).is_none()) {
            continue;
        }
        out.push_str(&r.env_step.to_string());
        for k in &keys {
            out.push_str(&format!(",{}", r.get(k).unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

/// Writes the requested export under `<run>/export/` and returns the paths.
pub fn export(run: &Path, what: ExportKind) -> Result<Vec<PathBuf>> {
    let metrics_path = run.join("metrics.jsonl");
    if !metrics_path.exists() {
        return Err(LexaError::Usage(format!("{} has no metrics.jsonl", run.display())));
    }
    let records = metrics::read(&metrics_path)?;
    let dir = run.join("export");
    fs::create_dir_all(&dir).at(&dir)?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, text).at(&path)?;
        Ok(path)
    };
    match what {
        ExportKind::Curves => Ok(vec![write("curves.csv", curves_csv(&records))?]),
        ExportKind::Heatmap => {
            let (ids, steps, matrix) = heatmap(&records);
            let csv = write("heatmap.csv", heatmap_csv(&ids, &steps, &matrix))?;
            let png = dir.join("heatmap.png");
            let (w, h, px) = heatmap_pixels(&matrix);
            write_png(&png, w, h, &px)?;
            Ok(vec![csv, png])
        }
        ExportKind::Coincidental => Ok(vec![write("coincidental.csv", coincidental_csv(&records))?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for (i, step) in [1000u64, 1100, 1200, 1300].into_iter().enumerate() {
            let mut r = MetricsRecord::new(step);
            r.set("explore/coincidental_a_count", i as f64);
            r.set("explore/coincidental_b_count", 0.0);
            if i % 2 == 1 {
                r.set("eval/a_success", 0.5);
                r.set("eval/b_success", 1.0);
                r.set("eval/mean_success", 0.75);
            }
            out.push(r);
        }
        out
    }

    #[test]
    fn curve_has_one_point_per_eval() {
        let csv = curves_csv(&records());
        assert_eq!(csv, "env_step,mean_success\n1100,0.75\n1300,0.75\n");
    }

    #[test]
    fn heatmap_is_goals_by_evals() {
        let (ids, steps, m) = heatmap(&records());
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(steps, [1100, 1300]);
        assert_eq!(m, vec![vec![0.5, 0.5], vec![1.0, 1.0]]);
        let csv = heatmap_csv(&ids, &steps, &m);
        assert_eq!(csv.lines().count(), 3);
        let (w, h, px) = heatmap_pixels(&m);
        assert_eq!((w, h, px.len()), (24, 24, 24 * 24 * 3));
    }

    #[test]
    fn coincidental_rows_follow_records() {
        let csv = coincidental_csv(&records());
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "env_step,a,b");
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[4], "1300,3,0");
    }
}
