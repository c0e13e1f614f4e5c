//! SVG rendering of curves, loss traces and spectrograms.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::ltas::LtasCurve;
use crate::stft::{stft_with, StftPlan};
use crate::trainer::TraceRow;

const SIZE: (u32, u32) = (960, 540);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Data(format!("plot rendering failed: {e:?}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

fn bounds(series: &[Series], log_x: bool) -> Result<((f64, f64), (f64, f64))> {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::arg("nothing to plot"));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    Ok(((x0, x1), (y0 - pad, y1 + pad)))
}

/// Line chart of one or more series written as SVG.
pub fn line_plot(path: impl AsRef<Path>, title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> Result<()> {
    let ((x0, x1), (y0, y1)) = bounds(series, log_x)?;
    let root = SVGBackend::new(path.as_ref(), SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60);
    macro_rules! finish {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .x_desc(x_label)
                .y_desc(y_label)
                .draw()
                .map_err(draw_err)?;
            for (i, s) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(
                        s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0)),
                        color.stroke_width(2),
                    ))
                    .map_err(draw_err)?
                    .label(s.label.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(draw_err)?;
        }};
    }
    if log_x {
        finish!(builder.build_cartesian_2d((x0..x1).log_scale(), y0..y1).map_err(draw_err)?);
    } else {
        finish!(builder.build_cartesian_2d(x0..x1, y0..y1).map_err(draw_err)?);
    }
    root.present().map_err(draw_err)
}

/// One line per loss name against the global step.
pub fn plot_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut by_name: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_name.entry(&r.loss).or_default().push((r.step as f64, r.value));
    }
    let series: Vec<Series> = by_name.into_iter().map(|(k, v)| Series::new(k, v)).collect();
    line_plot(path, "Training losses", "step", "loss", &series, false)
}

/// LTAS or difference curves on a logarithmic frequency axis.
pub fn plot_curves(path: impl AsRef<Path>, title: &str, curves: &[(String, LtasCurve)]) -> Result<()> {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, c)| Series::new(name.clone(), c.frequencies.iter().copied().zip(c.levels_db.iter().copied()).collect()))
        .collect();
    line_plot(path, title, "frequency (Hz)", "level (dB)", &series, true)
}

/// Frequency response table such as [`crate::filters::response_table`].
pub fn plot_response(path: impl AsRef<Path>, title: &str, rows: &[(f64, f64)]) -> Result<()> {
    line_plot(path, title, "frequency (Hz)", "magnitude (dB)", &[Series::new("response", rows.to_vec())], false)
}

fn heat(t: f64) -> RGBColor {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * t).min(1.0)) as u8;
    let g = (255.0 * (1.5 * t - 0.5).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (3.0 * t - 2.0).clamp(0.0, 1.0).max(0.4 * (1.0 - 2.0 * t).max(0.0))) as u8;
    RGBColor(r, g, b)
}

/// Log-magnitude spectrogram over an 80 dB range, max-pooled to at most
/// `max_cols x max_rows` cells.
pub fn spectrogram_plot(path: impl AsRef<Path>, title: &str, x: &AudioBuffer, max_cols: usize, max_rows: usize) -> Result<()> {
    let plan = StftPlan::model();
    let s = stft_with(&plan, x)?;
    let (bins, frames) = (s.bins(), s.frames());
    let mag = s.magnitude();
    let db: Vec<f64> = mag.iter().map(|m| 20.0 * m.max(1e-10).log10()).collect();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cols = frames.min(max_cols.max(1));
    let rows = bins.min(max_rows.max(1));
    let root = SVGBackend::new(path.as_ref(), SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let secs = x.duration_secs().max(1e-3);
    let nyq = x.sample_rate() as f64 / 2.0;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..secs, 0.0..nyq)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("time (s)")
        .y_desc("frequency (Hz)")
        .draw()
        .map_err(draw_err)?;
    let mut cells = Vec::with_capacity(cols * rows);
    for c in 0..cols {
        let (t0, t1) = (c * frames / cols, ((c + 1) * frames / cols).max(c * frames / cols + 1));
        for r in 0..rows {
            let (k0, k1) = (r * bins / rows, ((r + 1) * bins / rows).max(r * bins / rows + 1));
            let mut v = f64::NEG_INFINITY;
            for k in k0..k1 {
                for t in t0..t1 {
                    v = v.max(db[k * frames + t]);
                }
            }
            let color = heat((v - (top - 80.0)) / 80.0);
            cells.push(Rectangle::new(
                [
                    (secs * c as f64 / cols as f64, nyq * r as f64 / rows as f64),
                    (secs * (c + 1) as f64 / cols as f64, nyq * (r + 1) as f64 / rows as f64),
                ],
                color.filled(),
            ));
        }
    }
    chart.draw_series(cells).map_err(draw_err)?;
    root.present().map_err(draw_err)
}
