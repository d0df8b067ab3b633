//! Learning-curve output: CSV, JSON and a standalone SVG plot.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::train::{MetricsLog, MetricsRecord};

/// Header is `epoch,train_loss,test_loss,acc@<n>...`. Floats use the
/// shortest representation that parses back to the same value. Wall-clock
/// time is left out so identical runs give identical files.
pub fn write_csv<W: Write>(log: &MetricsLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch".to_string(), "train_loss".into(), "test_loss".into()];
    header.extend(log.eval_lengths.iter().map(|n| format!("acc@{n}")));
    w.write_record(&header)?;
    for r in &log.records {
        let mut row = vec![r.epoch.to_string(), r.train_loss.to_string(), r.test_loss.to_string()];
        row.extend(r.accuracy.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn csv_string(log: &MetricsLog) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(log, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Parses [`write_csv`] output. Wall-clock fields come back as zero and the
/// model name as empty.
pub fn read_csv<R: Read>(input: R) -> Result<MetricsLog> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "epoch" || &headers[1] != "train_loss" || &headers[2] != "test_loss" {
        return Err(Error::Format("unexpected metrics header".into()));
    }
    let eval_lengths = headers
        .iter()
        .skip(3)
        .map(|h| {
            h.strip_prefix("acc@")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad accuracy column {h:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        records.push(MetricsRecord {
            epoch: row[0].parse().map_err(|e| Error::Format(format!("epoch {:?}: {e}", &row[0])))?,
            train_loss: num(&row[1])?,
            test_loss: num(&row[2])?,
            accuracy: row.iter().skip(3).map(num).collect::<Result<_>>()?,
            wall_seconds: 0.0,
        });
    }
    Ok(MetricsLog {
        model: String::new(),
        eval_lengths,
        records,
    })
}

pub fn json_string(log: &MetricsLog) -> Result<String> {
    Ok(serde_json::to_string_pretty(log)?)
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const PANEL_GAP: f64 = 60.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

struct Panel {
    x0: f64,
    width: f64,
    y_min: f64,
    y_max: f64,
    epochs: usize,
}

impl Panel {
    fn point(&self, epoch: usize, y: f64) -> (f64, f64) {
        let span = (self.epochs.max(2) - 1) as f64;
        let x = self.x0 + (epoch.saturating_sub(1)) as f64 / span * self.width;
        let frac = if self.y_max > self.y_min {
            (y - self.y_min) / (self.y_max - self.y_min)
        } else {
            0.5
        };
        (x, HEIGHT - MARGIN - frac * (HEIGHT - 2.0 * MARGIN))
    }

    fn frame(&self, svg: &mut String, title: &str) {
        let (top, bottom) = (MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            self.x0,
            self.width,
            bottom - top
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{title}</text>"#,
            self.x0 + self.width / 2.0,
            top - 15.0
        );
        for (v, y) in [(self.y_max, top), (self.y_min, bottom)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{v:.3}</text>"#,
                self.x0 - 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">epoch 1..{}</text>"#,
            self.x0 + self.width / 2.0,
            bottom + 18.0,
            self.epochs
        );
    }

    fn polyline(&self, svg: &mut String, values: impl Iterator<Item = (usize, f64)>, color: &str) {
        let points: Vec<String> = values
            .filter(|(_, v)| v.is_finite())
            .map(|(e, v)| {
                let (x, y) = self.point(e, v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }
}

fn legend(svg: &mut String, x: f64, y: f64, label: &str, color: &str) {
    let _ = writeln!(
        svg,
        r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{label}</text>"#,
        x + 14.0,
        x + 18.0,
        y + 3.0
    );
}

/// Losses on the left, accuracy per evaluation length on the right.
pub fn render_svg(log: &MetricsLog) -> String {
    let epochs = log.records.last().map_or(1, |r| r.epoch);
    let panel_width = (WIDTH - 2.0 * MARGIN - PANEL_GAP) / 2.0;
    let losses = log.records.iter().flat_map(|r| [r.train_loss, r.test_loss]).filter(|v| v.is_finite());
    let loss_max = losses.fold(0.0_f64, f64::max);
    let left = Panel {
        x0: MARGIN,
        width: panel_width,
        y_min: 0.0,
        y_max: if loss_max > 0.0 { loss_max } else { 1.0 },
        epochs,
    };
    let right = Panel {
        x0: MARGIN + panel_width + PANEL_GAP,
        width: panel_width,
        y_min: 0.0,
        y_max: 1.0,
        epochs,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    left.frame(&mut svg, &format!("{} loss", escape(&log.model)));
    right.frame(&mut svg, "test accuracy");

    let rec = &log.records;
    left.polyline(&mut svg, rec.iter().map(|r| (r.epoch, r.train_loss)), COLORS[0]);
    left.polyline(&mut svg, rec.iter().map(|r| (r.epoch, r.test_loss)), COLORS[1]);
    legend(&mut svg, left.x0 + 8.0, MARGIN + 12.0, "train", COLORS[0]);
    legend(&mut svg, left.x0 + 8.0, MARGIN + 26.0, "test", COLORS[1]);

    for (k, n) in log.eval_lengths.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        right.polyline(
            &mut svg,
            rec.iter().filter_map(|r| r.accuracy.get(k).map(|&a| (r.epoch, a))),
            color,
        );
        legend(&mut svg, right.x0 + 8.0, MARGIN + 12.0 + 14.0 * k as f64, &format!("n={n}"), color);
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
