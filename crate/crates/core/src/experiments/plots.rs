//! Static chart rendering for experiment reports.
//!
//! Hand-rasterized bar charts: no plotting dependency, deterministic pixel
//! output (the reproducibility contract covers images too). Text uses a
//! built-in 5x7 uppercase bitmap font; anything it can't draw becomes a
//! hollow box rather than a panic.

use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::evaluation::metrics::CountHistogram;
use crate::imageio;

use super::ablation::AblationReport;
use super::augment::AugmentationReport;
use super::transfer::TransferReport;

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [30, 30, 30];
const GRID: [u8; 3] = [224, 224, 224];

/// Series colors, cycled.
const PALETTE: [[u8; 3]; 8] = [
    [70, 110, 180],
    [230, 140, 40],
    [60, 160, 70],
    [200, 60, 50],
    [140, 90, 170],
    [40, 160, 160],
    [150, 110, 60],
    [120, 120, 120],
];

/// 5x7 glyphs; each row is 5 bits, high bit leftmost.
const FONT: &[(char, [u8; 7])] = &[
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b11110, 0b10001, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110]),
    ('E', [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100]),
    ('%', [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011]),
    ('-', [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000]),
    ('_', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111]),
    ('+', [0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000]),
    ('/', [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000]),
    (':', [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000]),
    ('(', [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010]),
    (')', [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000]),
    (',', [0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000]),
    (' ', [0b00000; 7]),
];

const FALLBACK: [u8; 7] = [0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111];

fn glyph(c: char) -> [u8; 7] {
    let c = c.to_ascii_uppercase();
    FONT.iter()
        .find(|(g, _)| *g == c)
        .map(|(_, rows)| *rows)
        .unwrap_or(FALLBACK)
}

/// Canvas: `(3, height, width)` RGB bytes.
struct Canvas(Array3<u8>);

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        let mut a = Array3::zeros((3, height, width));
        for (ch, &v) in WHITE.iter().enumerate() {
            a.index_axis_mut(ndarray::Axis(0), ch).fill(v);
        }
        Canvas(a)
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        let (_, h, w) = self.0.dim();
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            for ch in 0..3 {
                self.0[[ch, y as usize, x as usize]] = color[ch];
            }
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.put(x, y, color);
            }
        }
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, color: [u8; 3]) {
        self.fill_rect(x0, y, x1, y + 1, color);
    }

    fn vline(&mut self, x: i64, y0: i64, y1: i64, color: [u8; 3]) {
        self.fill_rect(x, y0, x + 1, y1, color);
    }

    /// 6 px advance per character.
    fn text(&mut self, x: i64, y: i64, s: &str, color: [u8; 3]) {
        for (i, c) in s.chars().enumerate() {
            let rows = glyph(c);
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if bits & (1 << (4 - rx)) != 0 {
                        self.put(x + i as i64 * 6 + rx, y + ry as i64, color);
                    }
                }
            }
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        imageio::write_rgb_png(path, self.0.view())
    }
}

fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 6
}

/// Smallest "round" value >= max (1/2/2.5/5 times a power of ten).
fn nice_max(max: f64) -> f64 {
    if !(max > 0.0) {
        return 1.0;
    }
    let exp = max.log10().floor();
    let base = 10f64.powf(exp);
    for mult in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if mult * base >= max - 1e-12 {
            return mult * base;
        }
    }
    10.0 * base
}

fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    left: i64,
    top: i64,
    bottom: i64,
    y_max: f64,
}

impl Frame {
    /// Pixel y for a value.
    fn y(&self, v: f64) -> i64 {
        let span = (self.bottom - self.top) as f64;
        self.bottom - (v.max(0.0) / self.y_max * span).round() as i64
    }
}

/// Axes, grid lines, tick labels, and title; returns the plot frame.
fn draw_frame(canvas: &mut Canvas, title: &str, y_label: &str, width: i64, y_max: f64) -> Frame {
    let frame = Frame {
        left: 56,
        top: 34,
        bottom: canvas.0.dim().1 as i64 - 36,
        y_max,
    };
    canvas.text(8, 10, title, BLACK);
    canvas.text(8, 22, y_label, BLACK);
    for tick in 0..=4 {
        let v = y_max * tick as f64 / 4.0;
        let y = frame.y(v);
        canvas.hline(frame.left, width - 12, y, if tick == 0 { BLACK } else { GRID });
        let label = format_value(v);
        canvas.text(frame.left - 4 - text_width(&label), y - 3, &label, BLACK);
    }
    canvas.vline(frame.left, frame.top, frame.bottom + 1, BLACK);
    frame
}

/// One bar per labeled value.
pub fn bar_chart(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::InvalidConfig("bar chart needs at least one bar".into()));
    }
    let slot: i64 = bars
        .iter()
        .map(|(label, _)| text_width(label) + 14)
        .max()
        .unwrap()
        .clamp(48, 150);
    let left = 56i64;
    let width = (left + slot * bars.len() as i64 + 24).max(260);
    let mut canvas = Canvas::new(300, width as usize);
    let y_max = nice_max(bars.iter().fold(0.0f64, |m, (_, v)| m.max(*v)));
    let frame = draw_frame(&mut canvas, title, y_label, width, y_max);

    for (i, (label, value)) in bars.iter().enumerate() {
        let x0 = frame.left + slot * i as i64 + 10;
        let x1 = x0 + (slot - 20).min(60);
        let y = frame.y(*value);
        canvas.fill_rect(x0, y, x1, frame.bottom, PALETTE[0]);
        let value_text = format_value(*value);
        let mid = (x0 + x1) / 2;
        canvas.text(mid - text_width(&value_text) / 2, y - 10, &value_text, BLACK);
        let label: String = label.chars().take(22).collect();
        let lx = (x0 + (x1 - x0) / 2 - text_width(&label) / 2)
            .max(frame.left + slot * i as i64 + 1);
        canvas.text(lx, frame.bottom + 6, &label, BLACK);
    }
    canvas.write(path)
}

/// Grouped bars: one cluster per group, one colored bar per series, with a
/// legend. Series values are indexed by group.
pub fn grouped_bar_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    group_labels: &[String],
    series: &[(String, Vec<f64>)],
) -> Result<()> {
    if group_labels.is_empty() || series.is_empty() {
        return Err(Error::InvalidConfig(
            "grouped bar chart needs groups and series".into(),
        ));
    }
    for (name, values) in series {
        if values.len() != group_labels.len() {
            return Err(Error::ShapeMismatch {
                context: format!("series `{name}`"),
                expected: format!("{} values", group_labels.len()),
                got: format!("{}", values.len()),
            });
        }
    }

    let bar_w: i64 = 12;
    let cluster = bar_w * series.len() as i64 + 14;
    let left = 56i64;
    let width = (left + cluster * group_labels.len() as i64 + 150).max(320);
    let mut canvas = Canvas::new(300, width as usize);
    let y_max = nice_max(
        series
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .fold(0.0f64, f64::max),
    );
    let frame = draw_frame(&mut canvas, title, y_label, width - 130, y_max);

    for (s, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        // Legend swatch.
        let ly = frame.top + 12 * s as i64;
        let lx = width - 126;
        canvas.fill_rect(lx, ly, lx + 9, ly + 9, color);
        canvas.text(lx + 13, ly + 1, name, BLACK);
        for (gi, v) in values.iter().enumerate() {
            let x0 = frame.left + cluster * gi as i64 + 7 + bar_w * s as i64;
            canvas.fill_rect(x0, frame.y(*v), x0 + bar_w - 2, frame.bottom, color);
        }
    }
    for (gi, label) in group_labels.iter().enumerate() {
        let x0 = frame.left + cluster * gi as i64;
        let label: String = label.chars().take(12).collect();
        canvas.text(
            x0 + (cluster - text_width(&label)) / 2,
            frame.bottom + 6,
            label.as_str(),
            BLACK,
        );
    }
    canvas.write(path)
}

/// Judged-count distribution per class: one chart per class, clusters by
/// true count, one series per predicted count, heights = row fractions.
pub fn plot_histograms(dir: &Path, histograms: &[CountHistogram]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(histograms.len());
    for hist in histograms {
        let bins = hist.max_count as usize + 1;
        let sums = hist.row_sums();
        let group_labels: Vec<String> = (0..bins).map(|t| format!("true {t}")).collect();
        let series: Vec<(String, Vec<f64>)> = (0..bins)
            .map(|p| {
                let values = (0..bins)
                    .map(|t| {
                        if sums[t] == 0 {
                            0.0
                        } else {
                            hist.rows[t][p] as f64 / sums[t] as f64
                        }
                    })
                    .collect();
                (format!("pred {p}"), values)
            })
            .collect();
        let safe_name: String = hist
            .class_name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let path = dir.join(format!("hist_{safe_name}.png"));
        grouped_bar_chart(
            &path,
            &format!("judged counts: {}", hist.class_name),
            "fraction",
            &group_labels,
            &series,
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Seen / interpolation / extrapolation MSE bars.
pub fn plot_transfer(path: &Path, report: &TransferReport) -> Result<()> {
    let mut bars = vec![("seen".to_string(), report.mse_seen)];
    if let Some(v) = report.mse_interpolation {
        bars.push(("interpolation".to_string(), v));
    }
    if let Some(v) = report.mse_extrapolation {
        bars.push(("extrapolation".to_string(), v));
    }
    bar_chart(path, "count transfer", "judged mse", &bars)
}

/// Mean judged MSE and feature distance per variant, two charts.
pub fn plot_ablation(dir: &Path, report: &AblationReport) -> Result<Vec<PathBuf>> {
    let means = report.variant_means();
    let mse: Vec<(String, f64)> = means.iter().map(|(n, m, _)| (n.clone(), *m)).collect();
    let fid: Vec<(String, f64)> = means.iter().map(|(n, _, f)| (n.clone(), *f)).collect();
    let mse_path = dir.join("ablation_mse.png");
    let fid_path = dir.join("ablation_fid.png");
    bar_chart(&mse_path, "ablation", "judged mse", &mse)?;
    bar_chart(&fid_path, "ablation", "feature distance", &fid)?;
    Ok(vec![mse_path, fid_path])
}

/// Accuracy per training-mixture cell.
pub fn plot_augmentation(path: &Path, report: &AugmentationReport) -> Result<()> {
    let bars: Vec<(String, f64)> = report
        .rows
        .iter()
        .map(|r| (r.label.clone(), r.average_accuracy))
        .collect();
    bar_chart(path, "data mixtures", "count accuracy", &bars)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::fsio;

    #[test]
    fn bar_charts_render_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let bars = vec![
            ("seen".to_string(), 0.031),
            ("interpolation".to_string(), 0.082),
            ("extrapolation".to_string(), 0.173),
        ];
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        bar_chart(&a, "count transfer", "judged mse", &bars).unwrap();
        bar_chart(&b, "count transfer", "judged mse", &bars).unwrap();
        let bytes_a = fsio::read_bytes(&a).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, fsio::read_bytes(&b).unwrap());
    }

    #[test]
    fn unsupported_characters_fall_back_instead_of_panicking() {
        let dir = tempfile::tempdir().unwrap();
        let bars = vec![("weird \u{3bb} label!?".to_string(), 1.0)];
        bar_chart(&dir.path().join("weird.png"), "t\u{00ee}tle", "y", &bars).unwrap();
    }

    #[test]
    fn grouped_chart_validates_series_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let groups = vec!["true 0".to_string(), "true 1".to_string()];
        let bad = vec![("pred 0".to_string(), vec![1.0])];
        assert!(grouped_bar_chart(&dir.path().join("x.png"), "t", "y", &groups, &bad).is_err());
        let good = vec![
            ("pred 0".to_string(), vec![0.8, 0.1]),
            ("pred 1".to_string(), vec![0.2, 0.9]),
        ];
        grouped_bar_chart(&dir.path().join("ok.png"), "t", "y", &groups, &good).unwrap();
    }

    #[test]
    fn histogram_plots_write_one_file_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let hists = vec![
            CountHistogram {
                class_name: "zero".to_string(),
                max_count: 2,
                rows: vec![vec![5, 1, 0], vec![0, 6, 0], vec![0, 1, 5]],
            },
            CountHistogram {
                class_name: "one".to_string(),
                max_count: 2,
                rows: vec![vec![6, 0, 0], vec![1, 5, 0], vec![0, 0, 6]],
            },
        ];
        let written = plot_histograms(dir.path(), &hists).unwrap();
        assert_eq!(written.len(), 2);
        assert!(written[0].ends_with("hist_zero.png"));
        for path in written {
            assert!(path.is_file());
        }
    }

    #[test]
    fn nice_max_rounds_up_to_clean_ticks() {
        assert_eq!(nice_max(0.0), 1.0);
        assert_eq!(nice_max(0.9), 1.0);
        assert_eq!(nice_max(1.0), 1.0);
        assert_eq!(nice_max(1.7), 2.0);
        assert_eq!(nice_max(2.3), 2.5);
        assert_eq!(nice_max(4.0), 5.0);
        assert_eq!(nice_max(70.0), 100.0);
        assert_eq!(nice_max(0.031), 0.05);
    }
}
