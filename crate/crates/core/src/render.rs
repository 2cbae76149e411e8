//! SVG rendering of sketches and SLI trajectories.
//!
//! The viewport is fixed to the normalized canvas `[-1, 1]²`. Strokes that
//! leave the canvas keep their true coordinates in the document and are only
//! clipped visually, so a rendered frame is a faithful record of the state.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sketch::Sketch;
use crate::sli::Trajectory;

/// Output format for [`render_trajectory`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFormat {
    SvgFrames,
    #[cfg(feature = "gif")]
    Gif,
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svg" | "svg_frames" => Ok(FrameFormat::SvgFrames),
            #[cfg(feature = "gif")]
            "gif" => Ok(FrameFormat::Gif),
            #[cfg(not(feature = "gif"))]
            "gif" => Err(Error::invalid("format", "built without GIF support")),
            other => Err(Error::invalid("format", format!("unknown format `{other}`"))),
        }
    }
}

/// Visual parameters. `caption` is drawn in the top-left corner.
#[derive(Clone, Debug)]
pub struct Style {
    pub size_px: u32,
    pub stroke_width: f64,
    pub caption: Option<String>,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            size_px: 256,
            stroke_width: 0.02,
            caption: None,
        }
    }
}

/// Colour of the `i`-th of `n` strokes: a blue-to-red ramp over drawing
/// order, so early and late strokes are easy to tell apart.
pub fn stroke_colour(i: usize, n: usize) -> [u8; 3] {
    let t = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(30.0, 220.0), lerp(80.0, 50.0), lerp(200.0, 40.0)]
}

pub fn render_svg(sketch: &Sketch) -> String {
    render_svg_with(sketch, &Style::default())
}

pub fn render_svg_with(sketch: &Sketch, style: &Style) -> String {
    let mut s = String::new();
    let px = style.size_px;
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" viewBox="-1 -1 2 2">"#
    );
    s.push_str(r#"<defs><clipPath id="canvas"><rect x="-1" y="-1" width="2" height="2"/></clipPath></defs>"#);
    s.push_str(r##"<rect x="-1" y="-1" width="2" height="2" fill="#ffffff"/>"##);
    let _ = write!(
        s,
        r#"<g clip-path="url(#canvas)" fill="none" stroke-linecap="round" stroke-linejoin="round" stroke-width="{}">"#,
        style.stroke_width
    );
    let n = sketch.strokes.len();
    for (i, stroke) in sketch.strokes.iter().enumerate() {
        let [r, g, b] = stroke_colour(i, n);
        let _ = write!(s, r##"<polyline data-order="{i}" stroke="#{r:02x}{g:02x}{b:02x}" points=""##);
        for (j, p) in stroke.points.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.4},{:.4}", p.x, p.y);
        }
        s.push_str(r#""/>"#);
    }
    s.push_str("</g>");
    if let Some(text) = &style.caption {
        let _ = write!(
            s,
            r##"<text x="-0.96" y="-0.88" font-family="monospace" font-size="0.08" fill="#333333">{}</text>"##,
            escape(text)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Indices of the frames kept at `stride`: every `stride`-th frame plus the
/// last one.
pub fn frame_indices(frames: usize, stride: usize) -> Vec<usize> {
    if frames == 0 {
        return Vec::new();
    }
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..frames).step_by(stride).collect();
    if *idx.last().unwrap() != frames - 1 {
        idx.push(frames - 1);
    }
    idx
}

fn caption(traj: &Trajectory, t: usize) -> String {
    let f = &traj.frames[t];
    let h = &traj.header;
    let name = |i: usize| h.categories.get(i).map(String::as_str).unwrap_or("?");
    if h.original_label == h.target_label {
        format!("t={} p({})={:.3}", f.t, name(h.original_label), f.p_target)
    } else {
        format!(
            "t={} p({})={:.3} p({})={:.3}",
            f.t,
            name(h.original_label),
            f.p_orig,
            name(h.target_label),
            f.p_target
        )
    }
}

/// SVG documents for the subsampled frames, each captioned with confidence.
pub fn trajectory_svgs(traj: &Trajectory, stride: usize) -> Vec<(usize, String)> {
    frame_indices(traj.frames.len(), stride)
        .into_iter()
        .map(|t| {
            let style = Style {
                caption: Some(caption(traj, t)),
                ..Style::default()
            };
            (t, render_svg_with(&traj.sketch_at(t), &style))
        })
        .collect()
}

/// Writes the trajectory into `dir` and returns the created files:
/// `frame_0000.svg`, … for SVG frames, or one `trajectory.gif`.
pub fn render_trajectory(traj: &Trajectory, format: FrameFormat, stride: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    match format {
        FrameFormat::SvgFrames => trajectory_svgs(traj, stride)
            .into_iter()
            .map(|(t, svg)| {
                let path = dir.join(format!("frame_{t:04}.svg"));
                std::fs::write(&path, svg)?;
                Ok(path)
            })
            .collect(),
        #[cfg(feature = "gif")]
        FrameFormat::Gif => {
            let path = dir.join("trajectory.gif");
            let file = std::fs::File::create(&path)?;
            raster::write_gif(traj, stride, 256, file)?;
            Ok(vec![path])
        }
    }
}

#[cfg(feature = "gif")]
mod raster {
    use super::*;

    fn plot_line(buf: &mut [u8], size: usize, a: (f64, f64), b: (f64, f64), colour: u8) {
        let to_px = |v: f64| (v + 1.0) * 0.5 * (size - 1) as f64;
        let (x0, y0, x1, y1) = (to_px(a.0), to_px(a.1), to_px(b.0), to_px(b.1));
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (x, y) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
                if px >= 0 && py >= 0 && (px as usize) < size && (py as usize) < size {
                    buf[py as usize * size + px as usize] = colour;
                }
            }
        }
    }

    pub(super) fn write_gif(traj: &Trajectory, stride: usize, size: u16, out: impl std::io::Write) -> Result<()> {
        let n = traj.header.strokes.len();
        // palette: white background plus one colour per stroke (max 255)
        let mut palette = vec![255u8, 255, 255];
        for i in 0..n.min(255) {
            palette.extend(stroke_colour(i, n));
        }
        let mut enc = gif::Encoder::new(out, size, size, &palette).map_err(|e| Error::Format(e.to_string()))?;
        enc.set_repeat(gif::Repeat::Infinite)
            .map_err(|e| Error::Format(e.to_string()))?;
        let side = size as usize;
        for t in frame_indices(traj.frames.len(), stride) {
            let mut buf = vec![0u8; side * side];
            for (i, stroke) in traj.sketch_at(t).strokes.iter().enumerate() {
                let colour = (i.min(254) + 1) as u8;
                for w in stroke.points.windows(2) {
                    plot_line(&mut buf, side, (w[0].x, w[0].y), (w[1].x, w[1].y), colour);
                }
            }
            let mut frame = gif::Frame::from_indexed_pixels(size, size, buf, None);
            frame.delay = 5;
            enc.write_frame(&frame).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point, Stroke};

    fn polylines(svg: &str) -> usize {
        svg.matches("<polyline").count()
    }

    #[test]
    fn empty_sketch_is_valid_svg() {
        let svg = render_svg(&Sketch::new(vec![], None));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(polylines(&svg), 0);
    }

    #[test]
    fn one_polyline_per_stroke_and_no_clamping() {
        let sk = Sketch::new(
            vec![
                Stroke::new(vec![Point::new(0.0, 0.0), Point::new(0.5, 0.5)]),
                Stroke::new(vec![Point::new(1.75, -2.5), Point::new(2.0, -2.25)]),
            ],
            None,
        );
        let svg = render_svg(&sk);
        assert_eq!(polylines(&svg), 2);
        assert!(svg.contains("1.7500,-2.5000"));
        assert!(svg.contains(r#"viewBox="-1 -1 2 2""#));
    }

    #[test]
    fn caption_is_escaped() {
        let style = Style {
            caption: Some("a<b".into()),
            ..Style::default()
        };
        let svg = render_svg_with(&Sketch::new(vec![], None), &style);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn frame_index_subsampling() {
        assert_eq!(frame_indices(101, 100), vec![0, 100]);
        assert_eq!(frame_indices(101, 1).len(), 101);
        assert_eq!(frame_indices(10, 4), vec![0, 4, 8, 9]);
        assert_eq!(frame_indices(1, 5), vec![0]);
        assert!(frame_indices(0, 5).is_empty());
    }

    #[test]
    fn colour_ramp_endpoints() {
        assert_eq!(stroke_colour(0, 5), [30, 80, 200]);
        assert_eq!(stroke_colour(4, 5), [220, 50, 40]);
        assert_eq!(stroke_colour(0, 1), stroke_colour(0, 1));
    }
}
