//! Metric curve rendering: one PNG polyline per series in a run's metrics
//! file, written to `<run>/plots/<name>.png`. Charts are minimal by design
//! (no font rendering): a framed canvas with the series drawn over it; the
//! filename names the metric.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use image::{Rgb, RgbImage};

use crate::runner::METRICS_FILE;
use crate::{CliError, CliResult};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 320;
const MARGIN: f64 = 12.0;
const BACKGROUND: Rgb<u8> = Rgb([252, 252, 250]);
const FRAME: Rgb<u8> = Rgb([120, 120, 120]);
const LINE: Rgb<u8> = Rgb([32, 84, 196]);

/// Renders every metric series found in `run_dir/metrics.csv`; returns the
/// written files in series order.
pub fn render_run(run_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let csv_path = run_dir.join(METRICS_FILE);
    let text = fs::read_to_string(&csv_path)
        .map_err(|e| CliError::Validation(anyhow!("cannot read {}: {}", csv_path.display(), e)))?;
    let series = parse_series(&text)
        .map_err(|e| CliError::Validation(anyhow!("{}: {}", csv_path.display(), e)))?;
    if series.is_empty() {
        return Err(CliError::validation(format!(
            "{} holds no metric rows",
            csv_path.display()
        )));
    }

    let plots = run_dir.join("plots");
    fs::create_dir_all(&plots)
        .map_err(|e| CliError::Runtime(anyhow!("cannot create {}: {}", plots.display(), e)))?;
    let mut written = Vec::new();
    for (name, points) in &series {
        let img = render_series(points);
        let path = plots.join(format!("{}.png", sanitize(name)));
        img.save(&path)
            .map_err(|e| CliError::Runtime(anyhow!("cannot write {}: {}", path.display(), e)))?;
        written.push(path);
    }
    Ok(written)
}

/// Groups rows into per-name point lists, in file order within each name.
fn parse_series(text: &str) -> anyhow::Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty metrics file"))?;
    if header != super::runner::METRICS_HEADER {
        return Err(anyhow!("unexpected header {:?}", header));
    }
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(anyhow!(
                "row {} has {} fields, expected 4",
                i + 2,
                fields.len()
            ));
        }
        let step: f64 = fields[0]
            .parse()
            .map_err(|_| anyhow!("row {}: bad step", i + 2))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| anyhow!("row {}: bad value", i + 2))?;
        if value.is_finite() {
            series
                .entry(fields[1].to_string())
                .or_default()
                .push((step, value));
        }
    }
    Ok(series)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn render_series(points: &[(f64, f64)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    frame(&mut img);
    if points.is_empty() {
        return img;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // Flat or single-point series still render: pad the degenerate axis.
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-12);
    y0 -= pad;
    y1 += pad;

    let to_px = |(x, y): (f64, f64)| -> (f64, f64) {
        let w = f64::from(WIDTH) - 2.0 * MARGIN;
        let h = f64::from(HEIGHT) - 2.0 * MARGIN;
        let px = MARGIN + (x - x0) / (x1 - x0) * w;
        let py = MARGIN + (1.0 - (y - y0) / (y1 - y0)) * h;
        (px, py)
    };
    let mut prev: Option<(f64, f64)> = None;
    for &p in points {
        let cur = to_px(p);
        if let Some(last) = prev {
            draw_segment(&mut img, last, cur, LINE);
        } else {
            draw_segment(&mut img, cur, cur, LINE);
        }
        prev = Some(cur);
    }
    img
}

fn frame(img: &mut RgbImage) {
    let (w, h) = (WIDTH - 1, HEIGHT - 1);
    for x in 0..WIDTH {
        img.put_pixel(x, 0, FRAME);
        img.put_pixel(x, h, FRAME);
    }
    for y in 0..HEIGHT {
        img.put_pixel(0, y, FRAME);
        img.put_pixel(w, y, FRAME);
    }
}

fn draw_segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if (0..i64::from(WIDTH)).contains(&xi) && (0..i64::from(HEIGHT)).contains(&yi) {
            img.put_pixel(xi as u32, yi as u32, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::METRICS_HEADER;

    #[test]
    fn renders_one_png_per_series() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!(
            "{}\n1,d_loss,1.5,0\n2,d_loss,1.2,0\n1,g_loss,0.7,0\n2,g_loss,0.9,0\n",
            METRICS_HEADER
        );
        fs::write(dir.path().join(METRICS_FILE), csv).unwrap();
        let files = render_run(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(dir.path().join("plots/d_loss.png").exists());
        assert!(dir.path().join("plots/g_loss.png").exists());
        let img = image::open(&files[0]).unwrap();
        assert_eq!((img.width(), img.height()), (WIDTH, HEIGHT));
    }

    #[test]
    fn flat_series_and_single_points_render() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!(
            "{}\n1,flat,2.0,0\n2,flat,2.0,0\n5,lonely,1.0,0\n",
            METRICS_HEADER
        );
        fs::write(dir.path().join(METRICS_FILE), csv).unwrap();
        let files = render_run(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
    }

    #[test]
    fn missing_metrics_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_run(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("metrics.csv"), "{}", err);
    }

    #[test]
    fn malformed_rows_are_reported_with_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!("{}\n1,broken\n", METRICS_HEADER);
        fs::write(dir.path().join(METRICS_FILE), csv).unwrap();
        let err = render_run(dir.path()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{}", err);
    }
}
