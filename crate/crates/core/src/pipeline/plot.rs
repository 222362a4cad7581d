use std::fmt::Write as _;

use crate::airsim::AirspaceSpec;
use crate::error::{Error, Result};
use crate::trajdata::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    /// Width and height in pixels.
    pub size: f64,
    pub title: String,
    pub track_color: String,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            size: 640.0,
            title: "top view".into(),
            track_color: "#1f77b4".into(),
        }
    }
}

/// North-up SVG of the tracks in the airspace's local frame. Entry points are
/// drawn as triangles, the airport as a square and the FAF as a plus sign;
/// every marker carries the `marker` class.
pub fn render_top_view(trajs: &[Trajectory], spec: &AirspaceSpec, style: &PlotStyle) -> Result<String> {
    if trajs.is_empty() {
        return Err(Error::invalid("nothing to plot: no trajectories"));
    }
    let frame = spec.frame();
    let size = style.size;
    let half = 0.5 * size;
    let scale = 0.45 * size / spec.radius_nm;
    let px = |lat: f64, lon: f64| {
        let (e, n) = frame.to_nm(lat, lon);
        (half + e * scale, half - n * scale)
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, "<title>{}</title>", escape(&style.title)).unwrap();
    writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r##"<circle cx="{half:.2}" cy="{half:.2}" r="{:.2}" fill="none" stroke="#999999" stroke-dasharray="4 4"/>"##,
        spec.radius_nm * scale
    )
    .unwrap();

    writeln!(
        s,
        r#"<g fill="none" stroke="{}" stroke-opacity="0.4" stroke-width="1">"#,
        escape(&style.track_color)
    )
    .unwrap();
    for t in trajs {
        s.push_str("<polyline points=\"");
        for (i, p) in t.points().iter().enumerate() {
            let (x, y) = px(p.lat, p.lon);
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{x:.2},{y:.2}").unwrap();
        }
        s.push_str("\"/>\n");
    }
    s.push_str("</g>\n");

    s.push_str("<g stroke=\"black\" stroke-width=\"1.5\">\n");
    let m = 7.0;
    for e in &spec.entry_points {
        let (x, y) = px(e[0], e[1]);
        writeln!(
            s,
            r##"<polygon class="marker entry" fill="#d62728" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"##,
            x,
            y - m,
            x - m,
            y + m,
            x + m,
            y + m
        )
        .unwrap();
    }
    let (ax, ay) = px(spec.center[0], spec.center[1]);
    writeln!(
        s,
        r##"<rect class="marker airport" fill="#2ca02c" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"##,
        ax - m,
        ay - m,
        2.0 * m,
        2.0 * m
    )
    .unwrap();
    let (fx, fy) = px(spec.faf[0], spec.faf[1]);
    writeln!(
        s,
        r#"<path class="marker faf" stroke-width="2.5" d="M{:.2},{fy:.2} h{:.2} M{fx:.2},{:.2} v{:.2}"/>"#,
        fx - m,
        2.0 * m,
        fy - m,
        2.0 * m
    )
    .unwrap();
    s.push_str("</g>\n");

    writeln!(
        s,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="12">{} ({} tracks; triangle entry, square airport, + FAF)</text>"#,
        escape(&style.title),
        trajs.len()
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
