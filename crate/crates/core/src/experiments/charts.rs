//! Plain SVG charts. Every number drawn comes straight from a CSV row and
//! is also written as text or a `data-` attribute so tests can read it back.

use std::fmt::Write as _;

use super::aggregate::{AggregateRow, TrainerKind};
use crate::error::{Error, Result};
use crate::trainer::TelemetryRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const GROUP_COLORS: [&str; 2] = ["#1f77b4", "#ff7f0e"];

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    )
    .unwrap();
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn text(s: &mut String, x: f64, y: f64, size: u32, body: &str) {
    writeln!(
        s,
        r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" font-family="sans-serif" font-size="{size}">{}</text>"#,
        escape(body)
    )
    .unwrap();
}

fn y_of(v: f64, max: f64) -> f64 {
    HEIGHT - MARGIN - (v / max) * (HEIGHT - 2.0 * MARGIN)
}

fn legend(s: &mut String, labels: [&str; 2]) {
    for (i, label) in labels.iter().enumerate() {
        let x = WIDTH - MARGIN - 150.0 + 75.0 * i as f64;
        writeln!(
            s,
            r#"<rect x="{x}" y="34" width="10" height="10" fill="{}"/>"#,
            GROUP_COLORS[i]
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="43" font-family="sans-serif" font-size="11">{label}</text>"#,
            x + 14.0
        )
        .unwrap();
    }
}

pub fn point_label(row: &AggregateRow) -> String {
    match row.value {
        Some(v) => format!("{} {}={v}", row.trainer.name(), row.axis),
        None => row.trainer.name().to_string(),
    }
}

/// Side-by-side group frequency bars, one pair per aggregate row.
pub fn frequency_chart(title: &str, rows: &[AggregateRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Chart("frequency chart: no aggregate rows".into()));
    }
    let mut s = header(title);
    legend(&mut s, ["group 0", "group 1"]);
    let slot = (WIDTH - 2.0 * MARGIN) / rows.len() as f64;
    let bar = (slot * 0.35).min(40.0);
    for (i, row) in rows.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let label = point_label(row);
        match (row.freq0_mean, row.freq1_mean) {
            (Some(f0), Some(f1)) => {
                for (g, f) in [f0, f1].into_iter().enumerate() {
                    let x = cx - bar + bar * g as f64;
                    let y = y_of(f, 1.0);
                    writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}" data-group="{g}" data-value="{f}"/>"#,
                        HEIGHT - MARGIN - y,
                        GROUP_COLORS[g]
                    )
                    .unwrap();
                    text(&mut s, x + bar / 2.0, y - 4.0, 10, &format!("{:.1}%", 100.0 * f));
                }
                text(&mut s, cx, HEIGHT - MARGIN + 30.0, 10, &format!("sum {:.1}%", 100.0 * (f0 + f1)));
            }
            _ => text(&mut s, cx, HEIGHT - MARGIN - 10.0, 10, "all runs diverged"),
        }
        text(&mut s, cx, HEIGHT - MARGIN + 16.0, 10, &label);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One polyline per group of the mean pre-clip gradient norm over epochs.
pub fn grad_norm_chart(title: &str, rows: &[TelemetryRow]) -> Result<String> {
    let mut series: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
    for r in rows {
        let g = r.group as usize;
        if g > 1 {
            return Err(Error::Chart(format!("gradient-norm chart: group {} is not binary", r.group)));
        }
        series[g].push((r.epoch, r.grad_norm_preclip));
    }
    for (g, points) in series.iter().enumerate() {
        if points.is_empty() {
            return Err(Error::Chart(format!("gradient-norm chart: series for group {g} is empty")));
        }
    }
    let max_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(0).max(1) as f64;
    let max_norm = rows
        .iter()
        .map(|r| r.grad_norm_preclip)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let max_norm = if max_norm > 0.0 { max_norm * 1.1 } else { 1.0 };
    let mut s = header(title);
    legend(&mut s, ["group 0", "group 1"]);
    for (g, points) in series.iter().enumerate() {
        let coords: Vec<String> = points
            .iter()
            .map(|&(e, v)| {
                let x = MARGIN + (e as f64 / max_epoch) * (WIDTH - 2.0 * MARGIN);
                format!("{x:.2},{:.2}", y_of(v, max_norm))
            })
            .collect();
        let values: Vec<String> = points.iter().map(|(_, v)| v.to_string()).collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" data-group="{g}" data-values="{}" points="{}"/>"#,
            GROUP_COLORS[g],
            values.join(" "),
            coords.join(" ")
        )
        .unwrap();
    }
    text(&mut s, WIDTH / 2.0, HEIGHT - 15.0, 11, "epoch");
    text(&mut s, MARGIN, MARGIN - 8.0, 10, &format!("max {:.4}", max_norm / 1.1));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Median KL per swept C, with the vanilla median as a dashed reference.
pub fn sweep_chart(title: &str, rows: &[AggregateRow]) -> Result<String> {
    let points: Vec<&AggregateRow> = rows
        .iter()
        .filter(|r| r.trainer == TrainerKind::Repfair && r.value.is_some())
        .collect();
    if points.is_empty() {
        return Err(Error::Chart("sweep chart: no swept clipped-trainer rows".into()));
    }
    let vanilla = rows
        .iter()
        .find(|r| r.trainer == TrainerKind::Vanilla)
        .and_then(|r| r.kl_median);
    let max_kl = points
        .iter()
        .filter_map(|r| r.kl_median)
        .chain(vanilla)
        .fold(0.0, f64::max);
    let max_kl = if max_kl > 0.0 { max_kl * 1.15 } else { 1.0 };
    let mut s = header(title);
    let slot = (WIDTH - 2.0 * MARGIN) / points.len() as f64;
    let bar = (slot * 0.6).min(50.0);
    for (i, row) in points.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        if let Some(kl) = row.kl_median {
            let y = y_of(kl, max_kl);
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}" data-value="{kl}"/>"#,
                cx - bar / 2.0,
                HEIGHT - MARGIN - y,
                GROUP_COLORS[0]
            )
            .unwrap();
            text(&mut s, cx, y - 4.0, 10, &format!("{kl:.4}"));
        }
        text(&mut s, cx, HEIGHT - MARGIN + 16.0, 10, &format!("C={}", row.value.unwrap_or_default()));
        let flags = format!("div {} / deg {}", row.diverged, row.degenerate);
        text(&mut s, cx, HEIGHT - MARGIN + 30.0, 9, &flags);
    }
    if let Some(v) = vanilla {
        let y = y_of(v, max_kl);
        writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="6,4" data-value="{v}"/>"#,
            WIDTH - MARGIN
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">vanilla {v:.4}</text>"#,
            WIDTH - MARGIN,
            y - 4.0
        )
        .unwrap();
    }
    text(&mut s, MARGIN + 40.0, MARGIN - 8.0, 10, "median KL to uniform");
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trainer: TrainerKind, value: Option<f64>, f0: f64) -> AggregateRow {
        AggregateRow {
            trainer,
            axis: "c".into(),
            value,
            runs: 1,
            completed: 1,
            diverged: 0,
            degenerate: 0,
            kl_median: Some(crate::fairness::kl_to_uniform(&[f0, 1.0 - f0])),
            kl_min: None,
            kl_max: None,
            kl_mean: None,
            freq0_mean: Some(f0),
            freq1_mean: Some(1.0 - f0),
            freq_gap_median: None,
            grad_gap_mean: None,
            quality_median: None,
        }
    }

    fn telemetry(n: usize) -> Vec<TelemetryRow> {
        (0..n)
            .flat_map(|e| {
                (0..2).map(move |g| TelemetryRow {
                    epoch: e,
                    group: g,
                    grad_norm_preclip: 1.0 + e as f64 * (g as f64 + 1.0) * 0.1,
                    clip_rate: 0.0,
                    d_loss: 0.7,
                    g_loss: 0.7,
                })
            })
            .collect()
    }

    #[test]
    fn frequency_bars_sum_to_hundred() {
        let svg = frequency_chart("f", &[row(TrainerKind::Vanilla, None, 0.6)]).unwrap();
        assert!(svg.contains("sum 100.0%"));
        assert!(svg.contains("60.0%"));
        assert!(svg.contains("40.0%"));
    }

    #[test]
    fn deterministic_bytes() {
        let rows = [row(TrainerKind::Repfair, Some(2.0), 0.55), row(TrainerKind::Vanilla, None, 0.7)];
        assert_eq!(sweep_chart("s", &rows).unwrap(), sweep_chart("s", &rows).unwrap());
        assert_eq!(frequency_chart("f", &rows).unwrap(), frequency_chart("f", &rows).unwrap());
    }

    #[test]
    fn one_polyline_per_group() {
        let svg = grad_norm_chart("g", &telemetry(5)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-group="0""#));
        assert!(svg.contains(r#"data-group="1""#));
    }

    #[test]
    fn empty_series_is_named() {
        match grad_norm_chart("g", &[]) {
            Err(Error::Chart(msg)) => assert!(msg.contains("group 0")),
            other => panic!("{other:?}"),
        }
        let only_zero: Vec<TelemetryRow> = telemetry(3).into_iter().filter(|r| r.group == 0).collect();
        match grad_norm_chart("g", &only_zero) {
            Err(Error::Chart(msg)) => assert!(msg.contains("group 1")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(frequency_chart("f", &[]), Err(Error::Chart(_))));
        assert!(matches!(sweep_chart("s", &[]), Err(Error::Chart(_))));
    }

    #[test]
    fn sweep_chart_draws_vanilla_reference() {
        let rows = [
            row(TrainerKind::Vanilla, None, 0.7),
            row(TrainerKind::Repfair, Some(0.5), 0.5),
            row(TrainerKind::Repfair, Some(2.0), 0.55),
        ];
        let svg = sweep_chart("s", &rows).unwrap();
        assert!(svg.contains("vanilla "));
        assert!(svg.contains("C=0.5"));
        assert_eq!(svg.matches("<rect").count(), 1 + 2);
    }
}
