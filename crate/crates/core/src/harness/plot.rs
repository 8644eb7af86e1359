//! RD curve figures as SVG.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::RDPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Psnr,
    MsSsim,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(Metric::Psnr),
            "ms_ssim" => Ok(Metric::MsSsim),
            _ => Err(Error::Config(format!("unknown plot metric {s:?} (expected psnr or ms_ssim)"))),
        }
    }
}

/// A curve point from any RD table; extra columns are ignored, so RD CSVs
/// written by `eval` and hand-made baseline CSVs both load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub rate: f64,
    pub psnr_db: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub user: Option<String>,
}

impl From<&RDPoint> for CurvePoint {
    fn from(p: &RDPoint) -> Self {
        CurvePoint {
            series: p.series.clone(),
            rate: p.rate,
            psnr_db: Some(p.psnr_db),
            ms_ssim: Some(p.ms_ssim),
            user: Some(p.user.clone()),
        }
    }
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub metric: Metric,
    /// Keeps rows of this user; rows without a user column always pass.
    pub user: String,
    pub size: (u32, u32),
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            title: "Rate-distortion".into(),
            x_label: "rate".into(),
            metric: Metric::Psnr,
            user: "avg".into(),
            size: (640, 480),
        }
    }
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Groups points by series, sorted by rate within each series.
fn series(points: &[CurvePoint], spec: &PlotSpec) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        if p.user.as_ref().is_some_and(|u| *u != spec.user) {
            continue;
        }
        let v = match spec.metric {
            Metric::Psnr => p.psnr_db,
            Metric::MsSsim => p.ms_ssim,
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            out.entry(p.series.clone()).or_default().push((p.rate, v));
        }
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

/// Renders the curves to an SVG string. Output depends only on the inputs.
pub fn render_svg(points: &[CurvePoint], spec: &PlotSpec) -> Result<String> {
    let curves = series(points, spec);
    if curves.is_empty() {
        return Err(Error::Input(format!("no plottable points for user {:?}", spec.user)));
    }
    let all: Vec<(f64, f64)> = curves.values().flatten().copied().collect();
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let y_label = match spec.metric {
        Metric::Psnr => "PSNR (dB)",
        Metric::MsSsim => "MS-SSIM",
    };
    let mut svg = String::new();
    {
        let plot_err = |e: Box<dyn std::error::Error>| Error::Input(format!("plot: {e}"));
        let root = SVGBackend::with_string(&mut svg, spec.size).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(Box::new(e)))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(&spec.title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| plot_err(Box::new(e)))?;
        chart
            .configure_mesh()
            .x_desc(spec.x_label.as_str())
            .y_desc(y_label)
            .draw()
            .map_err(|e| plot_err(Box::new(e)))?;
        for (k, (name, pts)) in curves.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(|e| plot_err(Box::new(e)))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(Box::new(e)))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(|e| plot_err(Box::new(e)))?;
        root.present().map_err(|e| plot_err(Box::new(e)))?;
    }
    Ok(svg)
}

pub fn plot_to_file(points: &[CurvePoint], spec: &PlotSpec, path: &Path) -> Result<()> {
    let svg = render_svg(points, spec)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
