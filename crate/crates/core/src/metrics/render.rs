//! Delimited tables and a dependency-free SVG line plot.

use std::fmt::Write;

use super::{AuditRow, PrCurve, RocCurve, Tier1Row, Tier2Report};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Table-2 layout: one row per threshold.
pub fn tier1_csv(rows: &[Tier1Row]) -> String {
    let mut s = String::from("threshold,total_gbb,tp,fp,fn,precision,sensitivity,gbb_per_detected_roi\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{:.4},{}",
            r.threshold,
            r.total_gbbs,
            r.tp,
            r.fp,
            r.fn_,
            r.precision,
            r.sensitivity,
            opt(r.gbbs_per_detected_roi)
        );
    }
    s
}

/// Table-3 layout as a two-column key/value table.
pub fn tier2_csv(r: &Tier2Report) -> String {
    let mut s = String::from("field,value\n");
    let ints = [
        ("total_tier1_gbb", r.total_gbbs),
        ("labeled_device", r.labeled),
        ("suppressed_non_device", r.suppressed),
        ("correct_type", r.correct),
        ("incorrect_type", r.incorrect),
        ("unmatched_labeled", r.unmatched),
        ("roi_count", r.roi_count),
        ("detected_rois", r.detected_rois),
        ("correct_rois", r.correct_rois),
        ("unlabeled_rois", r.unlabeled_rois),
        ("undetected_rois", r.undetected_rois),
    ];
    for (k, v) in ints {
        let _ = writeln!(s, "{k},{v}");
    }
    let _ = writeln!(s, "detection_precision,{:.4}", r.detection_precision);
    let _ = writeln!(s, "detection_sensitivity,{:.4}", r.detection_sensitivity);
    let _ = writeln!(s, "accuracy,{:.4}", r.accuracy);
    s
}

pub fn pr_csv(c: &PrCurve) -> String {
    let mut s = String::from("recall,precision\n");
    for (r, p) in &c.points {
        let _ = writeln!(s, "{r:.6},{p:.6}");
    }
    s
}

pub fn roc_csv(curves: &[RocCurve]) -> String {
    let mut s = String::from("device_type,fpr,tpr\n");
    for c in curves {
        let name = c.device_type.map(|t| t.to_string()).unwrap_or_default();
        for (x, y) in &c.points {
            let _ = writeln!(s, "{name},{x:.6},{y:.6}");
        }
    }
    s
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut s = String::from("image_id,roi_id,true_type,predicted,grade,true_mri_safety,predicted_mri_safety,iou\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.image_id,
            r.roi_id,
            r.true_type,
            r.predicted,
            r.grade.name(),
            r.true_safety,
            r.predicted_safety.map(|m| m.to_string()).unwrap_or_default(),
            opt(r.iou)
        );
    }
    s
}

pub struct SvgSeries<'a> {
    pub name: String,
    pub points: &'a [(f64, f64)],
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Unit-square line plot with a legend, e.g. PR or ROC curves.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[SvgSeries<'_>]) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let pw = w - 2.0 * m;
    let ph = h - 2.0 * m;
    let px = |x: f64| m + x.clamp(0.0, 1.0) * pw;
    let py = |y: f64| h - m - y.clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, px(v), h - m + 15.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, m - 5.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = m + 14.0 + 14.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - m - 110.0, w - m - 95.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - m - 90.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
