//! Self-contained SVG line charts of iteration traces.

use std::fmt::Write as _;

use crate::diagnostics::TraceSeries;
use crate::smc::IterationTrace;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Linear,
    Log,
}

impl Axis {
    fn map(self, v: f64) -> Option<f64> {
        match self {
            Axis::Linear => v.is_finite().then_some(v),
            Axis::Log => (v > 0.0 && v.is_finite()).then(|| v.log10()),
        }
    }
}

/// The four trace figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    EpsilonVsTime,
    EpsilonVsIteration,
    TimeVsIteration,
    AcceptanceVsTime,
}

impl Figure {
    pub const ALL: [Figure; 4] =
        [Figure::EpsilonVsTime, Figure::EpsilonVsIteration, Figure::TimeVsIteration, Figure::AcceptanceVsTime];

    pub fn file_name(self) -> &'static str {
        match self {
            Figure::EpsilonVsTime => "epsilon_vs_time.svg",
            Figure::EpsilonVsIteration => "epsilon_vs_iteration.svg",
            Figure::TimeVsIteration => "time_vs_iteration.svg",
            Figure::AcceptanceVsTime => "acceptance_vs_time.svg",
        }
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            Figure::EpsilonVsTime => ("wall-clock time (s)", "epsilon (log scale)"),
            Figure::EpsilonVsIteration => ("iteration", "epsilon (log scale)"),
            Figure::TimeVsIteration => ("iteration", "wall-clock time (s, log scale)"),
            Figure::AcceptanceVsTime => ("wall-clock time (s)", "acceptance rate"),
        }
    }

    fn axes(self) -> (Axis, Axis) {
        match self {
            Figure::EpsilonVsTime | Figure::EpsilonVsIteration | Figure::TimeVsIteration => (Axis::Linear, Axis::Log),
            Figure::AcceptanceVsTime => (Axis::Linear, Axis::Linear),
        }
    }

    fn point(self, t: &IterationTrace) -> (f64, f64) {
        match self {
            Figure::EpsilonVsTime => (t.wall_clock_s, t.epsilon),
            Figure::EpsilonVsIteration => (t.t as f64, t.epsilon),
            Figure::TimeVsIteration => (t.t as f64, t.wall_clock_s),
            Figure::AcceptanceVsTime => (t.wall_clock_s, t.accept_rate),
        }
    }
}

/// Series colour from a stable FNV-1a hash of the label.
pub fn series_colour(label: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("hsl({}, 65%, 42%)", h % 360)
}

/// Data coordinates after the axis transform, one polyline per run.
pub fn transformed(series: &[TraceSeries], fig: Figure) -> Vec<(String, Vec<Vec<(f64, f64)>>)> {
    let (ax, ay) = fig.axes();
    series
        .iter()
        .map(|s| {
            let lines = s
                .runs
                .iter()
                .map(|run| {
                    run.iter()
                        .filter_map(|t| {
                            let (x, y) = fig.point(t);
                            Some((ax.map(x)?, ay.map(y)?))
                        })
                        .collect()
                })
                .collect();
            (s.label.clone(), lines)
        })
        .collect()
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one figure. Log axes label ticks with powers of ten.
pub fn render(series: &[TraceSeries], fig: Figure) -> String {
    let data = transformed(series, fig);
    let pts = || data.iter().flat_map(|(_, ls)| ls.iter().flatten().copied());
    let (x0, x1) = extent(pts().map(|p| p.0));
    let (y0, y1) = extent(pts().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
    let (ax, ay) = fig.axes();
    let (xl, yl) = fig.labels();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let tick = |v: f64, a: Axis| match a {
            Axis::Linear => format!("{v:.3}"),
            Axis::Log => format!("1e{v:.1}"),
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(fx),
            TOP + ph + 18.0,
            tick(fx, ax)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(fy) + 4.0,
            tick(fy, ay)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(xl)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(yl)
    );
    for (k, (label, lines)) in data.iter().enumerate() {
        let colour = series_colour(label);
        for line in lines {
            let coords: Vec<String> = line.iter().map(|(x, y)| format!("{:.3},{:.3}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}
