//! Minimal SVG line charts.
//!
//! A chart is `WIDTH x HEIGHT` pixels. Data point `(x, y)` maps linearly
//! from the axis ranges onto the plot rectangle; see
//! [`ChartLayout::to_pixel`]. The plot group carries the ranges as
//! `data-x-range` / `data-y-range` attributes and every polyline names its
//! series in `data-series`, so charts can be read back exactly (to the
//! three printed decimals).

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            points,
        }
    }
}

/// Margins around the plot rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartLayout {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Default for ChartLayout {
    fn default() -> Self {
        Self {
            left: 70.0,
            right: 170.0,
            top: 40.0,
            bottom: 60.0,
        }
    }
}

impl ChartLayout {
    pub fn plot_width(&self) -> f64 {
        WIDTH - self.left - self.right
    }

    pub fn plot_height(&self) -> f64 {
        HEIGHT - self.top - self.bottom
    }

    pub fn to_pixel(&self, (x, y): (f64, f64), xr: (f64, f64), yr: (f64, f64)) -> (f64, f64) {
        (
            self.left + (x - xr.0) / (xr.1 - xr.0) * self.plot_width(),
            HEIGHT - self.bottom - (y - yr.0) / (yr.1 - yr.0) * self.plot_height(),
        )
    }

    pub fn from_pixel(&self, (px, py): (f64, f64), xr: (f64, f64), yr: (f64, f64)) -> (f64, f64) {
        (
            xr.0 + (px - self.left) / self.plot_width() * (xr.1 - xr.0),
            yr.0 + (HEIGHT - self.bottom - py) / self.plot_height() * (yr.1 - yr.0),
        )
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one polyline per series with axes, ticks and a legend.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> String {
    let lay = ChartLayout::default();
    let (x0, y0) = (lay.left, HEIGHT - lay.bottom);
    let (x1, y1) = (WIDTH - lay.right, lay.top);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for i in 0..=5 {
        let v = y_range.0 + (y_range.1 - y_range.0) * i as f64 / 5.0;
        let (_, py) = lay.to_pixel((x_range.0, v), x_range, y_range);
        let _ = writeln!(
            s,
            r##"<g class="ytick"><line x1="{x0}" y1="{py:.3}" x2="{x1}" y2="{py:.3}" stroke="#ddd"/><text x="{}" y="{:.3}" text-anchor="end">{}</text></g>"##,
            x0 - 6.0,
            py + 4.0,
            fmt_tick(v)
        );
    }
    let (xa, xb) = (x_range.0.ceil() as i64, x_range.1.floor() as i64);
    let stride = ((xb - xa) / 10).max(1);
    for xi in (xa..=xb).step_by(stride as usize) {
        let (px, _) = lay.to_pixel((xi as f64, y_range.0), x_range, y_range);
        let _ = writeln!(
            s,
            r#"<text class="xtick" x="{px:.3}" y="{}" text-anchor="middle">{xi}</text>"#,
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 18.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
    let _ = writeln!(
        s,
        r#"<g class="plot" data-x-range="{} {}" data-y-range="{} {}">"#,
        x_range.0, x_range.1, y_range.0, y_range.1
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&p| {
                let (px, py) = lay.to_pixel(p, x_range, y_range);
                format!("{px:.3},{py:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            esc(&ser.name),
            pts.join(" ")
        );
        let ly = lay.top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            x1 + 12.0,
            x1 + 32.0,
            x1 + 38.0,
            ly + 4.0,
            esc(&ser.name)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 10.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
