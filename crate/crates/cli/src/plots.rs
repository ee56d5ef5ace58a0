use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use mlspvqa::coverage::CoverageCurve;
use mlspvqa::eval::NoiseCell;
use mlspvqa::subjective::SosFit;

const SIZE: (u32, u32) = (800, 600);

fn plot_error(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("cannot draw plot: {e}")
}

/// Cumulative coverage ratio against threshold, one line per covering set.
pub fn coverage(path: &Path, curves: &[CoverageCurve]) -> Result<()> {
    let xmax = curves
        .iter()
        .flat_map(|c| c.thresholds.last().copied())
        .fold(0.0, f64::max)
        .max(f64::EPSILON);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Coverage by each dataset of all others", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..xmax, 0.0..1.0)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("distance threshold s")
        .y_desc("covered fraction")
        .draw()
        .map_err(plot_error)?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                c.thresholds.iter().copied().zip(c.ratios.iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(plot_error)?
            .label(c.covering_name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}

/// Per-video (MOS, SOS) scatter with the fitted curve.
pub fn sos(path: &Path, points: &[(f64, f64)], fit: &SosFit) -> Result<()> {
    let ymax = points.iter().map(|p| p.1).fold(fit.sos(3.0), f64::max) * 1.05;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("SOS fit, a = {:.4}", fit.a), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1.0..5.0, 0.0..ymax.max(f64::EPSILON))
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("MOS")
        .y_desc("SOS")
        .draw()
        .map_err(plot_error)?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 2, BLUE.mix(0.4).filled())))
        .map_err(plot_error)?;
    let curve = (0..=200).map(|i| {
        let x = 1.0 + 4.0 * i as f64 / 200.0;
        (x, fit.sos(x))
    });
    chart
        .draw_series(LineSeries::new(curve, RED.stroke_width(2)))
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}

/// SRCC against the number of training votes: the label agreement line and
/// one line per validation vote count when heads were trained.
pub fn noise_grid(path: &Path, agreement: &[(usize, f64)], cells: &[NoiseCell]) -> Result<()> {
    let xmax = agreement
        .iter()
        .map(|a| a.0)
        .chain(cells.iter().map(|c| c.train_votes))
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let ymin = agreement
        .iter()
        .map(|a| a.1)
        .chain(cells.iter().map(|c| c.srcc.mean))
        .fold(1.0, f64::min)
        .min(0.0);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Agreement with the held-out MOS", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((1.0..xmax).log_scale(), ymin..1.0)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("votes per training MOS")
        .y_desc("SRCC")
        .draw()
        .map_err(plot_error)?;
    chart
        .draw_series(LineSeries::new(
            agreement.iter().map(|&(v, s)| (v as f64, s)),
            BLACK.stroke_width(2),
        ))
        .map_err(plot_error)?
        .label("training MOS")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.stroke_width(2)));

    let mut val_counts: Vec<usize> = cells.iter().map(|c| c.val_votes).collect();
    val_counts.sort_unstable();
    val_counts.dedup();
    for (i, vv) in val_counts.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let line = cells
            .iter()
            .filter(|c| c.val_votes == vv)
            .map(|c| (c.train_votes as f64, c.srcc.mean));
        chart
            .draw_series(LineSeries::new(line, color.stroke_width(2)))
            .map_err(plot_error)?
            .label(format!("head, {vv} validation votes"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}
