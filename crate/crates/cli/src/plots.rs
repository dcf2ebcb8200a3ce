//! SVG figures for an evaluation report.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use chargefill::evaluation::EvaluationReport;
use plotters::prelude::*;

const SIZE: (u32, u32) = (720, 480);

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plotting: {e}")
}

type Line = (String, Vec<(f64, f64)>);

fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, lines: &[Line], diagonal: bool) -> Result<()> {
    let points = lines.iter().flat_map(|l| l.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if diagonal {
        x0 = x0.min(y0);
        y0 = x0;
        x1 = x1.max(y1);
        y1 = x1;
    }
    let pad = |lo: f64, hi: f64| {
        let p = ((hi - lo) * 0.05).max(1e-6);
        (lo - p)..(hi + p)
    };
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(pad(x0, x1), pad(y0, y1))
        .map_err(err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(err)?;
    if diagonal {
        chart
            .draw_series(LineSeries::new([(x0, x0), (x1, x1)], BLACK.mix(0.4)))
            .map_err(err)?;
    }
    for (i, (name, pts)) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Writes whichever figures the report has data for; returns their paths.
pub fn write_plots(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if let Some(w) = &report.windows {
        let mut names: Vec<&String> = w.by_count.iter().flat_map(|r| r.mae.keys()).collect();
        names.sort();
        names.dedup();
        let lines: Vec<Line> = names
            .into_iter()
            .map(|n| {
                let pts = w
                    .by_count
                    .iter()
                    .filter_map(|r| r.mae.get(n).map(|&v| (r.masked_count as f64, v)))
                    .collect();
                (n.clone(), pts)
            })
            .collect();
        let path = dir.join("mae_by_count.svg");
        line_chart(&path, "MAE by masked days", "masked days per window", "MAE (kWh)", &lines, false)?;
        out.push(path);

        let path = dir.join("calibration.svg");
        let cov = vec![("model".to_string(), w.calibration.clone())];
        line_chart(&path, "Interval coverage", "nominal level", "empirical coverage", &cov, true)?;
        out.push(path);
    }
    if let Some(q) = &report.dow_qq {
        let path = dir.join("qq.svg");
        let pts = vec![("model".to_string(), q.qq.iter().map(|&(_, o, i)| (o, i)).collect())];
        line_chart(&path, "Quantiles: observed vs imputed", "observed (kWh)", "imputed (kWh)", &pts, true)?;
        out.push(path);

        let dow = |v: &[Option<f64>; 7]| v.iter().enumerate().filter_map(|(k, x)| x.map(|x| (k as f64, x))).collect();
        let lines = vec![
            ("observed".to_string(), dow(&q.observed_dow)),
            ("imputed".to_string(), dow(&q.imputed_dow)),
        ];
        let path = dir.join("dow.svg");
        line_chart(&path, "Mean demand by weekday", "weekday (0 = Monday)", "kWh", &lines, false)?;
        out.push(path);
    }
    Ok(out)
}
