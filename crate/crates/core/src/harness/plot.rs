//! SVG plots of weight ingredients and report summaries.

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Model};
use crate::harness::experiment::hamiltonian_ingredients;
use crate::harness::report::McReport;
use crate::weights::{delay_ingredients, growth, SegmentChoice};

const SIZE: (u32, u32) = (900, 540);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Io(format!("plot: {e:?}"))
}

/// Line chart of named `(t, value)` series.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let pts = series.iter().flat_map(|(_, s)| s.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
        if !(x0 < x1) {
            (x0, x1) = (0.0, 1.0);
        }
        if !(y0 < y1) {
            (y0, y1) = (y0.min(0.0) - 1.0, y1.max(0.0) + 1.0);
        }
        let pad = 0.05 * (y1 - y0);
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
            .map_err(draw_err)?;
        chart.configure_mesh().light_line_style(WHITE.mix(0.0)).draw().map_err(draw_err)?;
        for (i, (name, s)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
                .map_err(draw_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

/// Weight ingredients of the configured model: `g_i(t)/g_i(T)` per active
/// mode, `(h', h̃, Θ)`, or `(Γ, D, ∫Γ)`.
pub fn ingredients_svg(cfg: &ExperimentConfig) -> Result<String> {
    let setup = cfg.build()?;
    let grid = setup.grid;
    let times = grid.times();
    let component = |f: &dyn Fn(usize) -> Vec<f64>, c: usize| -> Vec<(f64, f64)> {
        times.iter().enumerate().map(|(j, t)| (*t, f(j)[c])).collect()
    };
    let mut series = Vec::new();
    let title = match &setup.model {
        Model::Semilinear { k, .. } => {
            let modes = k.as_ref().map_or_else(|| (0..setup.op.dim()).collect(), |k| k.active_modes());
            for i in modes {
                let l = setup.op.eigenvalues()[i];
                let full = growth(-l, grid.horizon());
                series.push((
                    format!("g_{}(t)/g_{}(T)", i + 1, i + 1),
                    times.iter().map(|t| (*t, growth(-l, *t) / full)).collect(),
                ));
            }
            "semilinear weight profile"
        }
        Model::Hamiltonian { direction, .. } => {
            let dir = direction
                .as_ref()
                .ok_or_else(|| Error::Config("plot needs direction.k1 and direction.k2".into()))?;
            let ing = hamiltonian_ingredients(dir, &grid)?;
            let d = setup.op.dim();
            let p = ing.theta(0).len() - d;
            for c in 0..d {
                series.push((format!("h'_{c}"), component(&|j| ing.hprime(j).to_vec(), c)));
                series.push((
                    format!("htilde_{c}"),
                    times.iter().map(|t| (*t, ing.htilde_at(*t)[c])).collect(),
                ));
            }
            for c in 0..p + d {
                series.push((format!("Theta_{c}"), component(&|j| ing.theta(j).to_vec(), c)));
            }
            "hamiltonian shift ingredients"
        }
        Model::Delay { direction, tau, .. } => {
            let dir = direction
                .as_ref()
                .ok_or_else(|| Error::Config("plot needs direction.eta".into()))?;
            let ing = delay_ingredients(dir, &setup.op, &grid, *tau)?;
            let n = setup.op.dim();
            let lags = ing.lags();
            for c in 0..n {
                series.push((format!("Gamma_{c}"), component(&|j| ing.gamma(j).to_vec(), c)));
                series.push((
                    format!("D_{c}"),
                    component(&|j| ing.segment(j, SegmentChoice::Perturbation).node(lags).to_vec(), c),
                ));
                series.push((
                    format!("int Gamma_{c}"),
                    component(&|j| ing.segment(j, SegmentChoice::PlainIntegral).node(lags).to_vec(), c),
                ));
            }
            "delay shift ingredients"
        }
    };
    line_chart(title, &series)
}

/// `|paired mean| / threshold` per function and `value / threshold` per
/// check; everything at or below the dashed line passed.
pub fn report_svg(report: &McReport) -> Result<String> {
    let mut items: Vec<(String, f64, bool)> = report
        .functions
        .iter()
        .map(|f| (f.name.clone(), ratio(f.diff.mean.abs(), f.threshold), f.pass))
        .collect();
    items.extend(report.checks.iter().map(|c| (c.name.clone(), ratio(c.value, c.threshold), c.pass)));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (SIZE.0, SIZE.1 + 12 * items.len() as u32))
            .into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let top = items.iter().map(|i| i.1).fold(1.5f64, f64::max).min(10.0);
        let n = items.len().max(1);
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{} ({})", report.command, if report.passed { "pass" } else { "FAIL" }), ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(36)
            .y_label_area_size(260)
            .build_cartesian_2d(0.0..top * 1.05, 0.0..n as f64)
            .map_err(draw_err)?;
        let labels: Vec<String> = items.iter().map(|i| i.0.clone()).collect();
        chart
            .configure_mesh()
            .y_labels(n)
            .y_label_formatter(&|y| labels.get(y.floor() as usize).cloned().unwrap_or_default())
            .x_desc("value / threshold")
            .light_line_style(WHITE.mix(0.0))
            .draw()
            .map_err(draw_err)?;
        chart
            .draw_series(items.iter().enumerate().map(|(i, (_, r, pass))| {
                let color = if *pass { PALETTE[2] } else { PALETTE[3] };
                let y = i as f64;
                Rectangle::new([(0.0, y + 0.15), (r.min(top * 1.05), y + 0.85)], color.filled())
            }))
            .map_err(draw_err)?;
        chart
            .draw_series(DashedLineSeries::new(
                vec![(1.0, 0.0), (1.0, n as f64)],
                6,
                4,
                BLACK.stroke_width(1),
            ))
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

fn ratio(value: f64, threshold: f64) -> f64 {
    if threshold > 0.0 {
        value / threshold
    } else if value <= threshold {
        0.0
    } else {
        f64::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::reduce::Estimate;
    use crate::harness::report::FunctionReport;

    #[test]
    fn line_chart_is_svg() {
        let s = line_chart("t", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])]).unwrap();
        assert!(s.starts_with("<svg"));
        assert!(s.contains("polyline") || s.contains("path"));
    }

    #[test]
    fn report_chart_marks_failures() {
        let e = Estimate { n: 10, mean: 1.0, se: 0.1 };
        let mut r = McReport::new("x", "h", 0, 10, 1, 0.1);
        r.functions.push(FunctionReport::new("f", e, e, e, 1.0, 0.1, None, 3.0, 0.0));
        let s = report_svg(&r.finish()).unwrap();
        assert!(s.contains("FAIL"));
    }
}
