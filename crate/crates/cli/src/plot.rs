//! Minimal SVG line charts for the mission figures.

use std::fmt::Write as _;

use spinsim::sim::{MissionEvents, TelemetryRecord};

const WIDTH: f64 = 760.0;
const PANEL_HEIGHT: f64 = 250.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const GAP: f64 = 55.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

pub struct Panel {
    pub ylabel: String,
    pub series: Vec<Series>,
}

pub struct Figure {
    pub title: String,
    pub time: Vec<f64>,
    pub panels: Vec<Panel>,
    /// Vertical markers, `(label, t)`.
    pub markers: Vec<(String, f64)>,
}

/// Tick spacing of 1, 2 or 5 times a power of ten.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let n = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    n * mag
}

/// Axis limits snapped outward to the tick grid, and the ticks themselves.
pub fn axis_range(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (mut lo, mut hi) = if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1e-300) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        lo -= pad;
        hi += pad;
    }
    let step = nice_step(hi - lo, 5);
    let lo = (lo / step).floor() * step;
    let hi = (hi / step).ceil() * step;
    let n = ((hi - lo) / step).round() as usize;
    let ticks = (0..=n).map(|i| lo + i as f64 * step).collect();
    (lo, hi, ticks)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let plot_w = WIDTH - LEFT - RIGHT;
        let height = TOP + self.panels.len() as f64 * (PANEL_HEIGHT + GAP);
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(&self.title))
            .unwrap();

        let t0 = self.time.first().copied().unwrap_or(0.0);
        let t1 = self.time.last().copied().unwrap_or(1.0);
        let (tx0, tx1, tticks) = axis_range(t0, t1);
        let sx = |t: f64| LEFT + (t - tx0) / (tx1 - tx0) * plot_w;

        for (k, panel) in self.panels.iter().enumerate() {
            let y_top = TOP + k as f64 * (PANEL_HEIGHT + GAP);
            let y_bot = y_top + PANEL_HEIGHT;
            let (lo, hi) = panel
                .series
                .iter()
                .flat_map(|se| se.values.iter().copied())
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let (y0, y1, yticks) = axis_range(lo, hi);
            let sy = |v: f64| y_bot - (v - y0) / (y1 - y0) * PANEL_HEIGHT;

            for &t in &tticks {
                let x = sx(t);
                writeln!(s, r##"<line x1="{x:.2}" y1="{y_top:.2}" x2="{x:.2}" y2="{y_bot:.2}" stroke="#e6e6e6"/>"##).unwrap();
                writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y_bot + 16.0, fmt_tick(t)).unwrap();
            }
            for &v in &yticks {
                let y = sy(v);
                writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/>"##, LEFT + plot_w).unwrap();
                writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(v)).unwrap();
            }
            for (label, t) in &self.markers {
                let x = sx(*t);
                writeln!(
                    s,
                    r##"<line x1="{x:.2}" y1="{y_top:.2}" x2="{x:.2}" y2="{y_bot:.2}" stroke="#777" stroke-dasharray="4 3"/>"##
                )
                .unwrap();
                writeln!(s, r##"<text x="{:.2}" y="{:.2}" fill="#555" font-size="10">{}</text>"##, x + 3.0, y_top + 11.0, escape(label))
                    .unwrap();
            }
            writeln!(
                s,
                r#"<rect x="{LEFT}" y="{y_top:.2}" width="{plot_w:.2}" height="{PANEL_HEIGHT}" fill="none" stroke="black"/>"#
            )
            .unwrap();
            writeln!(
                s,
                r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
                LEFT - 58.0,
                y_top + PANEL_HEIGHT / 2.0,
                escape(&panel.ylabel)
            )
            .unwrap();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#, LEFT + plot_w / 2.0, y_bot + 34.0).unwrap();

            for (i, se) in panel.series.iter().enumerate() {
                let color = COLORS[i % COLORS.len()];
                let mut points = String::new();
                for (t, v) in self.time.iter().zip(&se.values) {
                    if v.is_finite() {
                        write!(points, "{:.2},{:.2} ", sx(*t), sy(*v)).unwrap();
                    }
                }
                writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{}"/>"#, points.trim_end()).unwrap();
                let ly = y_top + 14.0 + 16.0 * i as f64;
                let lx = LEFT + plot_w + 12.0;
                writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0)
                    .unwrap();
                writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&se.label)).unwrap();
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn series(label: &str, records: &[TelemetryRecord], f: impl Fn(&TelemetryRecord) -> f64) -> Series {
    Series { label: label.to_string(), values: records.iter().map(f).collect() }
}

fn xyz(prefix: &str, records: &[TelemetryRecord], f: impl Fn(&TelemetryRecord) -> nalgebra::Vector3<f64>) -> Vec<Series> {
    ["x", "y", "z"]
        .iter()
        .enumerate()
        .map(|(i, axis)| series(&format!("{prefix}{axis}"), records, |r| f(r)[i]))
        .collect()
}

fn quat(prefix: &str, records: &[TelemetryRecord], f: impl Fn(&TelemetryRecord) -> spinsim::Quaternion) -> Vec<Series> {
    let mut out: Vec<Series> = (0..3).map(|i| series(&format!("{prefix}{}", i + 1), records, |r| f(r).v[i])).collect();
    out.push(series(&format!("{prefix}0"), records, |r| f(r).w));
    out
}

/// The five mission figures as `(file name, svg)`.
pub fn figures(records: &[TelemetryRecord], events: &MissionEvents) -> Vec<(&'static str, String)> {
    let time: Vec<f64> = records.iter().map(|r| r.t).collect();
    let markers: Vec<(String, f64)> = MissionEvents::NAMES
        .iter()
        .zip(events.as_array())
        .skip(1)
        .filter_map(|((id, _), t)| t.map(|t| (id.to_string(), t)))
        .collect();
    let figure = |title: &str, panels: Vec<Panel>| {
        Figure { title: title.to_string(), time: time.clone(), panels, markers: markers.clone() }.to_svg()
    };
    vec![
        (
            "fig2_relative_spin.svg",
            figure(
                "Relative angular velocity and attitude of the target w.r.t. the base",
                vec![
                    Panel { ylabel: "omega_rel (rad/s)".into(), series: xyz("w", records, |r| r.omega_rel) },
                    Panel { ylabel: "q_rel".into(), series: quat("q", records, |r| r.q_rel) },
                ],
            ),
        ),
        (
            "fig3_grapple_pose.svg",
            figure(
                "Pose of the grapple fixture w.r.t. the end-effector",
                vec![
                    Panel { ylabel: "position (m)".into(), series: xyz("r", records, |r| r.r_rel) },
                    Panel { ylabel: "orientation quaternion".into(), series: quat("eta", records, |r| r.eta_rel) },
                ],
            ),
        ),
        (
            "fig4_grapple_velocity.svg",
            figure(
                "Velocity of the grapple fixture w.r.t. the end-effector",
                vec![
                    Panel { ylabel: "linear (m/s)".into(), series: xyz("v", records, |r| r.v_rel) },
                    Panel { ylabel: "angular (rad/s)".into(), series: xyz("w", records, |r| r.w_rel_ee) },
                ],
            ),
        ),
        (
            "fig5_torques.svg",
            figure(
                "Reaction-wheel torque and end-effector torque",
                vec![
                    Panel { ylabel: "tau_r (N m)".into(), series: xyz("tau_r ", records, |r| r.tau_r) },
                    Panel { ylabel: "tau_e (N m)".into(), series: xyz("tau_e ", records, |r| r.tau_e) },
                ],
            ),
        ),
        (
            "fig6_momentum.svg",
            figure(
                "Angular momentum magnitudes",
                vec![Panel {
                    ylabel: "|h| (N m s)".into(),
                    series: vec![
                        series("target", records, |r| r.h_target),
                        series("servicer", records, |r| r.h_servicer),
                        series("wheels", records, |r| r.h_wheels),
                    ],
                }],
            ),
        ),
    ]
}
