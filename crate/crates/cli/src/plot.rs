//! Line plots read back from emitted CSV files, one SVG per metric.

use std::path::Path;

use plotters::prelude::*;

use crate::{CliError, CliResult};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// `(series label, points)` in first-appearance order.
pub type Series = Vec<(String, Vec<(f64, f64)>)>;

/// Groups column `y` against column `x` by the value of column `series`.
pub fn read_series(csv_path: &Path, x: &str, y: &str, series: &str) -> CliResult<Series> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no column `{name}`", csv_path.display())))
    };
    let (xi, yi, si) = (col(x)?, col(y)?, col(series)?);
    let mut out: Series = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{}: non-numeric `{}`", csv_path.display(), &record[i])))
        };
        let point = (parse(xi)?, parse(yi)?);
        let key = &record[si];
        match out.iter_mut().find(|(k, _)| k == key) {
            Some((_, pts)) => pts.push(point),
            None => out.push((key.to_string(), vec![point])),
        }
    }
    Ok(out)
}

/// Writes an SVG line chart of `y` over `x`, one line per `series` value.
pub fn plot_csv(csv_path: &Path, x: &str, y: &str, series: &str, svg: &Path) -> CliResult<()> {
    let data = read_series(csv_path, x, y, series)?;
    let all = data.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0f64, f64::NEG_INFINITY);
    for &(px, py) in all {
        x0 = x0.min(px);
        x1 = x1.max(px);
        y0 = y0.min(py);
        y1 = y1.max(py);
    }
    if !x0.is_finite() {
        return Ok(());
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let err = |e: &dyn std::fmt::Display| CliError::Model(format!("plot {}: {e}", svg.display()));
    let root = SVGBackend::new(svg, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(y, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(80)
        .build_cartesian_2d(x0..x1, y0..y1 * 1.05)
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc(x).y_desc(y).draw().map_err(|e| err(&e))?;
    for (i, (label, points)) in data.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(label.as_str())
            .legend(move |(lx, ly)| PathElement::new(vec![(lx, ly), (lx + 16, ly)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_follow_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("t.csv");
        std::fs::write(&csv, "index,arch,v\n0,b,1\n0,a,2\n1,b,3\n").unwrap();
        let s = read_series(&csv, "index", "v", "arch").unwrap();
        assert_eq!(s, vec![("b".into(), vec![(0.0, 1.0), (1.0, 3.0)]), ("a".into(), vec![(0.0, 2.0)])]);
        let svg = dir.path().join("t.svg");
        plot_csv(&csv, "index", "v", "arch", &svg).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline") || text.contains("path"));
    }
}
