use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use camdiffuse::eval::{EvalReport, SensitivityRow};

/// Column name for a mask label: `bg` for background, `c{class}` otherwise.
fn label_name(label: usize) -> String {
    if label == 0 {
        "bg".into()
    } else {
        format!("c{}", label - 1)
    }
}

/// Four decimals; an undefined score prints as `nan`.
fn fixed4(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.4}")
    }
}

fn optional4(x: Option<f64>) -> String {
    fixed4(x.unwrap_or(f64::NAN))
}

fn open_csv(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_eval_csv(path: &Path, reports: &[EvalReport], classes: usize) -> Result<()> {
    let mut w = open_csv(path)?;
    let mut header: Vec<String> = ["threshold", "miou", "fp_rate", "fn_rate"].map(String::from).to_vec();
    header.extend((0..=classes).map(|l| format!("iou_{}", label_name(l))));
    w.write_record(&header)?;
    for r in reports {
        let s = &r.scores;
        let mut row = vec![format!("{:.2}", r.threshold), fixed4(s.miou), fixed4(s.fp_rate), fixed4(s.fn_rate)];
        row.extend(s.per_class_iou.iter().map(|&x| optional4(x)));
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_sensitivity_csv(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = open_csv(path)?;
    w.write_record(["k", "T", "best_threshold", "miou", "fp_rate", "fn_rate"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.steps.to_string(),
            format!("{:.2}", r.best_threshold),
            fixed4(r.miou),
            fixed4(r.fp_rate),
            fixed4(r.fn_rate),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
pub struct LabelIou {
    label: String,
    iou: Option<f64>,
}

#[derive(Serialize)]
pub struct BestRecord {
    threshold: f64,
    miou: f64,
    fp_rate: f64,
    fn_rate: f64,
    per_class_iou: Vec<LabelIou>,
}

pub fn best_record(best: &EvalReport) -> BestRecord {
    let s = &best.scores;
    BestRecord {
        threshold: best.threshold,
        miou: s.miou,
        fp_rate: s.fp_rate,
        fn_rate: s.fn_rate,
        per_class_iou: s
            .per_class_iou
            .iter()
            .enumerate()
            .map(|(l, &iou)| LabelIou { label: label_name(l), iou })
            .collect(),
    }
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;
const SERIES: [(&str, &str); 3] = [("mIoU", "#1f77b4"), ("FP", "#d62728"), ("FN", "#2ca02c")];

fn metric(r: &SensitivityRow, i: usize) -> f64 {
    [r.miou, r.fp_rate, r.fn_rate][i]
}

/// One panel: x positions are evenly spaced over the given tick labels.
fn panel(svg: &mut String, x0: f64, title: &str, ticks: &[usize], rows: &[&SensitivityRow]) {
    let plot_w = PANEL_W - 2.0 * MARGIN;
    let plot_h = PANEL_H - 2.0 * MARGIN;
    let x_at = |i: usize| {
        x0 + MARGIN + if ticks.len() > 1 { plot_w * i as f64 / (ticks.len() - 1) as f64 } else { plot_w / 2.0 }
    };
    let y_at = |v: f64| MARGIN + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let _ = writeln!(svg, r#"<text x="{:.1}" y="20" text-anchor="middle">{title}</text>"#, x0 + PANEL_W / 2.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{MARGIN:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#888"/>"##,
        x0 + MARGIN
    );
    for v in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            x0 + MARGIN - 6.0,
            y_at(v) + 4.0
        );
    }
    for (i, t) in ticks.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            x_at(i),
            PANEL_H - MARGIN + 16.0
        );
    }
    for (s, (name, color)) in SERIES.iter().enumerate() {
        let points: Vec<String> =
            rows.iter().enumerate().map(|(i, r)| format!("{:.1},{:.1}", x_at(i), y_at(metric(r, s)))).collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{name}</text>"#,
            x0 + PANEL_W - MARGIN + 4.0,
            MARGIN + 14.0 * (s as f64 + 1.0)
        );
    }
}

/// Two panels: scores against k at the best row's T, and against T at the
/// best row's k.
pub fn sensitivity_svg(rows: &[SensitivityRow]) -> String {
    let best = rows.iter().fold(&rows[0], |b, r| if r.miou > b.miou { r } else { b });
    let by_k: Vec<&SensitivityRow> = rows.iter().filter(|r| r.steps == best.steps).collect();
    let by_t: Vec<&SensitivityRow> = rows.iter().filter(|r| r.k == best.k).collect();
    let k_ticks: Vec<usize> = by_k.iter().map(|r| r.k).collect();
    let t_ticks: Vec<usize> = by_t.iter().map(|r| r.steps).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{PANEL_H:.0}" font-family="sans-serif" font-size="11">"#,
        2.0 * PANEL_W
    );
    panel(&mut svg, 0.0, &format!("top-k (T = {})", best.steps), &k_ticks, &by_k);
    panel(&mut svg, PANEL_W, &format!("steps T (k = {})", best.k), &t_ticks, &by_t);
    svg.push_str("</svg>\n");
    svg
}
