//! Static SVG figures: sample sheets, loss curves and 2-D scatters.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

fn err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

const SCATTER_COLORS: [RGBColor; 10] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
    RGBColor(188, 189, 34),
    RGBColor(23, 190, 207),
];

/// Overlay up to `max_series` series as translucent lines.
pub fn plot_series(path: &Path, title: &str, series: &[Vec<f32>], max_series: usize) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Plot("no series to plot".into()));
    }
    let shown = &series[..series.len().min(max_series)];
    let l = shown[0].len();
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for row in shown {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Plot("non-finite values in series plot".into()));
    }
    let pad = (hi - lo).max(1e-6) * 0.05;

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0usize..l.max(2) - 1, (lo - pad)..(hi + pad))
        .map_err(err)?;
    chart.configure_mesh().disable_mesh().draw().map_err(err)?;
    for row in shown {
        chart
            .draw_series(LineSeries::new(
                row.iter().enumerate().map(|(i, &v)| (i, v)),
                RGBAColor(31, 119, 180, 0.35),
            ))
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Labeled 2-D scatter, one color per class (cycled past 10).
pub fn plot_scatter(
    path: &Path,
    title: &str,
    points: &[[f64; 2]],
    labels: &[usize],
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Plot("no points to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let padx = (x1 - x0).max(1e-9) * 0.05;
    let pady = (y1 - y0).max(1e-9) * 0.05;

    let root = SVGBackend::new(path, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d((x0 - padx)..(x1 + padx), (y0 - pady)..(y1 + pady))
        .map_err(err)?;
    chart.configure_mesh().disable_mesh().draw().map_err(err)?;
    chart
        .draw_series(points.iter().zip(labels).map(|(p, &label)| {
            let color = SCATTER_COLORS[label % SCATTER_COLORS.len()];
            Circle::new((p[0], p[1]), 3, color.filled())
        }))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Multi-curve line chart over epochs (log-free y axis).
pub fn plot_curves(path: &Path, title: &str, curves: &[(String, Vec<f64>)]) -> Result<()> {
    let n = curves.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Plot("no curves to plot".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, vs) in curves {
        for &v in vs {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let pad = (hi - lo).max(1e-9) * 0.05;

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0usize..n.max(2) - 1, (lo - pad)..(hi + pad))
        .map_err(err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("epoch")
        .draw()
        .map_err(err)?;
    for (i, (name, vs)) in curves.iter().enumerate() {
        let color = SCATTER_COLORS[i % SCATTER_COLORS.len()];
        chart
            .draw_series(LineSeries::new(
                vs.iter().enumerate().map(|(e, &v)| (e, v)),
                color.stroke_width(2),
            ))
            .map_err(err)?
            .label(name.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
