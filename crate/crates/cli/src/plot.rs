//! Static SVG line charts of a sweep summary: one chart per metric, one
//! line per scheme, whiskers at the bootstrap interval.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use rcms::engine::SummaryRow;

use crate::CliError;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

type Series = BTreeMap<String, Vec<(f64, f64, f64, f64)>>;

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.1;
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

pub fn charts(rows: &[SummaryRow], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut by_metric: BTreeMap<&str, Series> = BTreeMap::new();
    let mut axis = "value";
    for r in rows {
        axis = r.axis.as_str();
        by_metric
            .entry(r.metric.as_str())
            .or_default()
            .entry(r.scheme.clone())
            .or_default()
            .push((r.value, r.interval.mean, r.interval.low, r.interval.high));
    }
    let mut written = Vec::new();
    for (metric, mut series) in by_metric {
        for points in series.values_mut() {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let path = out.join(format!("{metric}.svg"));
        draw(&path, axis, metric, &series)?;
        written.push(path);
    }
    Ok(written)
}

fn draw(path: &Path, axis: &str, metric: &str, series: &Series) -> Result<(), CliError> {
    let all = series.values().flatten();
    let (xs, ys): (Vec<f64>, Vec<f64>) = all.flat_map(|p| [(p.0, p.2), (p.0, p.3)]).unzip();
    let fold = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (x0, x1) = padded(fold(&xs).0, fold(&xs).1);
    let (y0, y1) = padded(fold(&ys).0, fold(&ys).1);

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{metric} vs {axis}"), ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(axis)
        .y_desc(metric)
        .draw()
        .map_err(plot_err)?;
    for (i, (scheme, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(points.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(scheme.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(points.iter().map(|p| PathElement::new(vec![(p.0, p.2), (p.0, p.3)], color)))
            .map_err(plot_err)?;
        chart
            .draw_series(points.iter().map(|p| Circle::new((p.0, p.1), 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
