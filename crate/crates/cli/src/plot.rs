//! Plain SVG charts. Output depends only on the inputs, so identical inputs
//! give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use voxrep::eval::{PoseReport, SynthesisReport, POSE_HEADER, SYNTHESIS_HEADER};
use voxrep::trainer::TrainLog;

use crate::{Failure, Outcome, PlotArgs, PlotKind};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLOR: &str = "#3b6ea5";

/// Mean, sample standard deviation and count.
fn stats(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd, n)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn with_file(path: &Path, e: voxrep::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

pub fn plot(a: &PlotArgs) -> Outcome {
    let svg = match a.kind {
        PlotKind::Curve => curve(a)?,
        PlotKind::Bars => bars(a)?,
    };
    fs::write(&a.out, svg).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn curve(a: &PlotArgs) -> Result<String, Failure> {
    let mut series = Vec::new();
    for path in &a.input {
        let log = TrainLog::from_csv(&read(path)?).map_err(|e| with_file(path, e))?;
        let s = log.series(&a.metric);
        if s.is_empty() {
            return Err(Failure::Runtime(format!("{}: no {} records", path.display(), a.metric)));
        }
        series.push(s.into_iter().collect::<BTreeMap<u64, f64>>());
    }
    let steps: Vec<u64> = series[0]
        .keys()
        .copied()
        .filter(|k| series.iter().all(|s| s.contains_key(k)))
        .collect();
    if steps.is_empty() {
        return Err(Failure::Runtime("the logs share no logged steps".into()));
    }
    let points: Vec<(f64, f64, f64)> = steps
        .iter()
        .map(|k| {
            let vals: Vec<f64> = series.iter().map(|s| s[k]).collect();
            let (mean, sd, n) = stats(&vals);
            let half = 1.96 * sd / (n as f64).sqrt();
            (*k as f64, mean, half)
        })
        .collect();

    let x_range = (0.0, points.last().unwrap().0.max(1.0));
    let lo = points.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    let y_range = if a.metric.contains("success") { (0.0, 1.0) } else { padded(lo, hi) };
    let title = a.title.clone().unwrap_or_else(|| {
        format!("{} (mean and 95% band, {} run{})", a.metric, series.len(), if series.len() == 1 { "" } else { "s" })
    });
    let mut svg = Frame::new(&title, "step", &a.metric, x_range, y_range);
    let band: Vec<String> = points
        .iter()
        .map(|p| svg.point(p.0, p.1 + p.2))
        .chain(points.iter().rev().map(|p| svg.point(p.0, p.1 - p.2)))
        .collect();
    let _ = writeln!(
        svg.body,
        r#"<polygon points="{}" fill="{COLOR}" fill-opacity="0.25" stroke="none"/>"#,
        band.join(" ")
    );
    let line: Vec<String> = points.iter().map(|p| svg.point(p.0, p.1)).collect();
    let _ = writeln!(
        svg.body,
        r#"<polyline points="{}" fill="none" stroke="{COLOR}" stroke-width="2"/>"#,
        line.join(" ")
    );
    svg.x_ticks_numeric();
    Ok(svg.finish())
}

fn bars(a: &PlotArgs) -> Result<String, Failure> {
    // Category label -> one value per input file.
    let mut cells: BTreeMap<String, (f64, Vec<f64>)> = BTreeMap::new();
    let mut metric_name = String::new();
    for path in &a.input {
        let text = read(path)?;
        let header = text.lines().next().unwrap_or("").trim();
        if header == SYNTHESIS_HEADER {
            let report = SynthesisReport::from_csv(&text).map_err(|e| with_file(path, e))?;
            let pick: fn(&voxrep::eval::SynthesisRow) -> f64 = match a.metric.as_str() {
                "ssim" | "success_rate" => |r| r.ssim_mean,
                "psnr" => |r| r.psnr_db_mean,
                m => return Err(Failure::Usage(format!("synthesis reports offer ssim or psnr, not {m}"))),
            };
            metric_name = if a.metric == "psnr" { "PSNR (dB)".into() } else { "SSIM".into() };
            for r in report.rows.iter().filter(|r| r.phi_d == a.phi_d) {
                let e = cells.entry(format!("lambda_ft={}", r.lambda_ft)).or_insert((r.lambda_ft, Vec::new()));
                e.1.push(pick(r));
            }
        } else if header == POSE_HEADER {
            if !matches!(a.metric.as_str(), "rmse" | "success_rate") {
                return Err(Failure::Usage(format!("pose reports offer rmse, not {}", a.metric)));
            }
            metric_name = "aligned RMSE".into();
            let report = PoseReport::from_csv(&text).map_err(|e| with_file(path, e))?;
            let variants: Vec<String> = report.rows.iter().map(|r| r.variant.clone()).collect();
            for (i, v) in variants.iter().enumerate() {
                if variants[..i].contains(v) {
                    continue;
                }
                let avg = report.average(v).expect("variant has rows");
                let order = cells.len() as f64;
                cells.entry(v.clone()).or_insert((order, Vec::new())).1.push(avg);
            }
        } else {
            return Err(Failure::Runtime(format!(
                "{}: line 1: expected a synthesis or pose report header",
                path.display()
            )));
        }
    }
    if cells.is_empty() {
        return Err(Failure::Runtime("no report rows to plot".into()));
    }
    let mut ordered: Vec<(String, f64, Vec<f64>)> = cells.into_iter().map(|(k, (o, v))| (k, o, v)).collect();
    ordered.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(&y.0)));
    let summary: Vec<(String, f64, f64)> = ordered
        .into_iter()
        .map(|(k, _, v)| {
            let (m, sd, _) = stats(&v);
            (k, m, sd)
        })
        .collect();

    let hi = summary.iter().map(|s| s.1 + s.2).fold(f64::NEG_INFINITY, f64::max);
    let lo = summary.iter().map(|s| s.1 - s.2).fold(f64::INFINITY, f64::min);
    let y_range = padded(lo.min(0.0), hi.max(0.0));
    let title = a.title.clone().unwrap_or_else(|| format!("{metric_name} per cell (mean and std)"));
    let n = summary.len() as f64;
    let mut svg = Frame::new(&title, "", &metric_name, (0.0, n), y_range);
    for (i, (label, mean, sd)) in summary.iter().enumerate() {
        let (x0, x1) = (i as f64 + 0.2, i as f64 + 0.8);
        let (px0, py_top) = svg.map(x0, mean.max(0.0));
        let (px1, py_base) = svg.map(x1, mean.min(0.0));
        let _ = writeln!(
            svg.body,
            r#"<rect x="{px0:.2}" y="{py_top:.2}" width="{:.2}" height="{:.2}" fill="{COLOR}"/>"#,
            px1 - px0,
            py_base - py_top
        );
        let (cx, _) = svg.map(i as f64 + 0.5, 0.0);
        let (_, ylo) = svg.map(0.0, mean - sd);
        let (_, yhi) = svg.map(0.0, mean + sd);
        let _ = writeln!(
            svg.body,
            r#"<line x1="{cx:.2}" y1="{ylo:.2}" x2="{cx:.2}" y2="{yhi:.2}" stroke="black" stroke-width="1.5"/>"#
        );
        let _ = writeln!(
            svg.body,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(label)
        );
    }
    Ok(svg.finish())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Axes, labels and a body in data coordinates.
struct Frame {
    head: String,
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut head = String::new();
        let _ = writeln!(
            head,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
        );
        let _ = writeln!(head, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            head,
            r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
        let _ = writeln!(
            head,
            r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            head,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            head,
            r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        let mut me = Self {
            head,
            body: String::new(),
            x,
            y,
        };
        for k in 0..=4 {
            let v = y.0 + (y.1 - y.0) * k as f64 / 4.0;
            let (_, py) = me.map(x.0, v);
            let _ = writeln!(
                me.head,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                py + 4.0,
                tick_label(v)
            );
        }
        me
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT);
        let py = HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM);
        (px, py)
    }

    fn point(&self, x: f64, y: f64) -> String {
        let (px, py) = self.map(x, y);
        format!("{px:.2},{py:.2}")
    }

    fn x_ticks_numeric(&mut self) {
        for k in 0..=4 {
            let v = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let (px, _) = self.map(v, self.y.0);
            let _ = writeln!(
                self.head,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                HEIGHT - BOTTOM,
                HEIGHT - BOTTOM + 5.0,
                HEIGHT - BOTTOM + 18.0,
                tick_label(v.round())
            );
        }
    }

    fn finish(self) -> String {
        format!("{}{}</svg>\n", self.head, self.body)
    }
}
