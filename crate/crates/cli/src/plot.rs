//! SVG rendering of `ℰ(u_k)/ℰ_min − 1` against `k` on a log scale.

use cqlqg::optimizer::IterateRecord;
use plotters::prelude::*;

use crate::failure::{Class, Failure};

/// Points `(k, ℰ_k/ℰ_min − 1)` with a positive deviation; the rest cannot be
/// drawn on a log axis.
pub fn deviations(trace: &[IterateRecord], e_min: f64) -> Vec<(f64, f64)> {
    trace
        .iter()
        .map(|r| (r.k as f64, r.cost / e_min - 1.0))
        .filter(|&(_, y)| y > 0.0 && y.is_finite())
        .collect()
}

pub fn render_svg(points: &[(f64, f64)], title: &str, size: (u32, u32)) -> Result<String, Failure> {
    if points.is_empty() {
        return Err(Failure::new(Class::Usage, "no iterate lies above the supplied minimum cost"));
    }
    let x_max = points.iter().map(|p| p.0).fold(1.0_f64, f64::max);
    let y_lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_hi = points.iter().map(|p| p.1).fold(0.0_f64, f64::max);
    let (y_lo, y_hi) = (10f64.powf(y_lo.log10().floor()), 10f64.powf(y_hi.log10().ceil().max(y_lo.log10().floor() + 1.0)));

    let draw_err = |e: String| Failure::new(Class::Io, format!("plot: {e}"));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, size).into_drawing_area();
        root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(0.0..x_max, (y_lo..y_hi).log_scale())
            .map_err(|e| draw_err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc("k")
            .y_desc("cost / min cost - 1")
            .y_label_formatter(&|y| format!("{y:.0e}"))
            .draw()
            .map_err(|e| draw_err(e.to_string()))?;
        chart
            .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
            .map_err(|e| draw_err(e.to_string()))?;
        root.present().map_err(|e| draw_err(e.to_string()))?;
    }
    Ok(svg)
}
