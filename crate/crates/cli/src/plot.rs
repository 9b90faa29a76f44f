//! Search-curve data and a minimal SVG line chart.

use std::fmt::Write as _;
use std::path::Path;

use fusionnas::search::EpochRecord;

pub fn curve_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric,best_val_metric,net_lr\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_metric, r.best_val_metric, r.net_lr
        );
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Validation metric per epoch on a [0, 1] axis.
pub fn render_svg(log: &[EpochRecord]) -> Result<String, String> {
    if log.is_empty() {
        return Err("empty search log".into());
    }
    if log.iter().any(|r| !r.val_metric.is_finite()) {
        return Err("non-finite validation metric".into());
    }
    let n = log.len().max(2) - 1;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);
    let val: Vec<(f64, f64)> = log.iter().enumerate().map(|(i, r)| (x(i), y(r.val_metric))).collect();
    let best: Vec<(f64, f64)> = log.iter().enumerate().map(|(i, r)| (x(i), y(r.best_val_metric))).collect();
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>",
        b = H - PAD,
        r = W - PAD
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(svg, "<text x=\"4\" y=\"{:.1}\" font-size=\"11\">{tick:.1}</text>", y(tick) + 4.0);
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">epoch</text>",
        W / 2.0,
        H - 8.0
    );
    svg.push_str(&polyline(&val, "steelblue"));
    svg.push_str(&polyline(&best, "darkorange"));
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(log: &[EpochRecord], path: &Path) -> Result<(), String> {
    let svg = render_svg(log)?;
    std::fs::write(path, svg).map_err(|e| e.to_string())
}
