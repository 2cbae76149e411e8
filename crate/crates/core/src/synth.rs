//! Procedural QuickDraw-style sketches.
//!
//! Produces raw drawings in the simplified QuickDraw convention: aligned
//! to the top-left corner, uniformly scaled so the longer side spans 255,
//! integer coordinates, RDP at two pixels. Used when the public dump is
//! not available and for tests.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quickdraw::write_ndjson;
use crate::rdp::rdp_keep;
use crate::sketch::{Point, Sketch, Stroke};

/// Categories the generator knows how to draw.
///
/// They come in groups that isolate one cue each: star/cloud/flower and
/// clock/eye share a stroke layout and differ only in stroke shape;
/// face/smiley_face differ only in drawing order; table/bed/chair use the
/// same strokes and differ only in where they are placed.
pub const SYNTH_CATEGORIES: [&str; 10] = [
    "bed",
    "chair",
    "clock",
    "cloud",
    "eye",
    "face",
    "flower",
    "smiley_face",
    "star",
    "table",
];

type Poly = Vec<Point>;

struct Pen<'a> {
    rng: &'a mut ChaCha8Rng,
    noise: Normal<f64>,
}

impl Pen<'_> {
    fn jitter(&mut self, p: Point) -> Point {
        Point::new(p.x + self.noise.sample(self.rng), p.y + self.noise.sample(self.rng))
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn line(&mut self, a: Point, b: Point) -> Poly {
        let n = 6;
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let p = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                if i == 0 || i == n {
                    p
                } else {
                    self.jitter(p)
                }
            })
            .collect()
    }

    /// Elliptic arc from angle `a0` to `a1` (radians, y axis pointing down).
    fn arc(&mut self, c: Point, rx: f64, ry: f64, a0: f64, a1: f64) -> Poly {
        let n = ((a1 - a0).abs() / (PI / 12.0)).ceil().max(3.0) as usize;
        (0..=n)
            .map(|i| {
                let a = a0 + (a1 - a0) * i as f64 / n as f64;
                self.jitter(Point::new(c.x + rx * a.cos(), c.y + ry * a.sin()))
            })
            .collect()
    }

    fn circle(&mut self, c: Point, r: f64) -> Poly {
        let start = self.range(0.0, TAU);
        let overshoot = self.range(0.0, 0.4);
        let dir = if self.chance(0.8) { -1.0 } else { 1.0 };
        let r2 = r * self.range(0.9, 1.1);
        self.arc(c, r, r2, start, start + dir * (TAU + overshoot))
    }
}

fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

fn polar(r: f64, a: f64) -> Point {
    Point::new(r * a.cos(), r * a.sin())
}

/// Closed curve `f(θ)` traced once from angle `start`, centred on its
/// bounding box and scaled so the longer side spans 2.
fn outline(pen: &mut Pen, n: usize, start: f64, f: impl Fn(f64) -> Point) -> Poly {
    let dir = if pen.chance(0.8) { 1.0 } else { -1.0 };
    let raw: Poly = (0..n).map(|i| f(start + dir * TAU * i as f64 / n as f64)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &raw {
        (x0, y0, x1, y1) = (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y));
    }
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let k = 2.0 / (x1 - x0).max(y1 - y0);
    let mut pts: Poly = raw
        .into_iter()
        .map(|p| pen.jitter(Point::new((p.x - cx) * k, (p.y - cy) * k)))
        .collect();
    pts.push(pts[0]);
    pts
}

/// Spiral drawn outwards from the centre.
fn spiral(pen: &mut Pen, radius: f64, turns: f64) -> Poly {
    let phase = pen.range(0.0, TAU);
    let n = (turns * 16.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            pen.jitter(polar(radius * t, phase + TAU * turns * t))
        })
        .collect()
}

fn draw(category: &str, pen: &mut Pen) -> Option<Vec<Poly>> {
    let o = Point::new(0.0, 0.0);
    let strokes = match category {
        // one closed outline with a peak at the top, started there
        "star" => {
            let inner = pen.range(0.38, 0.5);
            let tips = move |a: f64| {
                // distance to the nearest tip direction, in fifths of a turn
                let k = ((a + PI / 2.0) / (TAU / 5.0)).rem_euclid(1.0);
                inner + (1.0 - inner) * (k - 0.5).abs() * 2.0
            };
            vec![outline(pen, 40, -PI / 2.0, |a| polar(tips(a), a))]
        }
        "cloud" => {
            let bumps = pen.rng.random_range(5..=7) as f64;
            vec![outline(pen, 48, -PI / 2.0, |a| {
                polar(0.78 + 0.22 * (bumps * (a + PI / 2.0) / 2.0).cos().abs(), a)
            })]
        }
        "flower" => {
            let petals = pen.rng.random_range(5..=6) as f64;
            vec![outline(pen, 60, -PI / 2.0, |a| {
                polar(0.45 + 0.55 * (petals * (a + PI / 2.0) / 2.0).cos().abs().powf(0.7), a)
            })]
        }
        // outline started at its leftmost point, then a stroke from the
        // centre
        "clock" => {
            let rim = outline(pen, 32, PI, |a| polar(1.0, a));
            let a = pen.range(0.0, TAU);
            let b = a + pen.range(0.8, 5.4);
            let (short, long) = (pen.range(0.4, 0.55), pen.range(0.65, 0.8));
            let mut hands = pen.line(o, polar(short, a));
            hands.extend(pen.line(o, polar(long, b)));
            vec![rim, hands]
        }
        "eye" => {
            let h = pen.range(0.75, 0.95);
            let lid = outline(pen, 32, PI, |a| Point::new(a.cos(), h * a.sin() * (0.35 + 0.65 * a.sin().abs())));
            vec![lid, spiral(pen, 0.3, 1.5)]
        }
        "face" | "smiley_face" => {
            let head = pen.circle(o, 1.0);
            let er = pen.range(0.1, 0.2);
            let ey = pen.range(-0.4, -0.2);
            let ex = pen.range(0.3, 0.45);
            let le = pen.circle(Point::new(-ex, ey), er);
            let re = pen.circle(Point::new(ex, ey), er);
            let mr = pen.range(0.4, 0.6);
            let my = pen.range(0.0, 0.15);
            let mouth = pen.arc(Point::new(0.0, my), mr, mr * 0.8, PI * 0.15, PI * 0.85);
            // a tendency only: most faces start with the head, most
            // smileys end with it
            let head_first = pen.chance(0.85) == (category == "face");
            if head_first {
                vec![head, le, re, mouth]
            } else {
                vec![le, re, mouth, head]
            }
        }
        "table" | "bed" | "chair" => {
            let w = pen.range(0.9, 1.2);
            let h = pen.range(0.8, 1.2);
            let inset = pen.range(0.0, 0.1);
            let top = pen.line(Point::new(-w, 0.0), Point::new(w, 0.0));
            // identical vertical strokes drawn top to bottom; tables hang
            // both below the line, beds raise both above it, chairs raise
            // the left one as a backrest
            let (left_up, right_up) = match category {
                "table" => (false, false),
                "bed" => (true, true),
                _ => (true, false),
            };
            let mut leg = |x: f64, up: bool| {
                let y0 = if up { -h } else { 0.0 };
                pen.line(Point::new(x, y0), Point::new(x, y0 + h))
            };
            let l = leg(-w + inset, left_up);
            let r = leg(w - inset, right_up);
            vec![top, l, r]
        }
        _ => return None,
    };
    Some(strokes)
}

/// Draws one raw sketch of `category`.
pub fn generate(category: &str, rng: &mut ChaCha8Rng) -> Result<Sketch> {
    let mut pen = Pen {
        rng,
        noise: Normal::new(0.0, 0.015).expect("valid sigma"),
    };
    let strokes = draw(category, &mut pen).ok_or_else(|| Error::UnknownCategory(category.to_owned()))?;
    let angle = pen.range(-0.15, 0.15);
    let (sx, sy) = (pen.range(0.8, 1.2), pen.range(0.8, 1.2));
    let strokes: Vec<Poly> = strokes
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|p| rotate(Point::new(p.x * sx, p.y * sy), angle))
                .collect()
        })
        .collect();
    Ok(Sketch::new(to_raw_canvas(&strokes), None))
}

/// Top-left alignment, uniform scale to 255, integer rounding, RDP(2px).
fn to_raw_canvas(strokes: &[Poly]) -> Vec<Stroke> {
    let all = strokes.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in all {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let scale = 255.0 / (x1 - x0).max(y1 - y0).max(1e-9);
    strokes
        .iter()
        .map(|s| {
            let pts: Vec<Point> = s
                .iter()
                .map(|p| Point::new(((p.x - x0) * scale).round(), ((p.y - y0) * scale).round()))
                .collect();
            let keep = rdp_keep(&pts, 2.0);
            Stroke::new(keep.into_iter().map(|i| pts[i]).collect())
        })
        .collect()
}

/// Writes `<dir>/<category>.ndjson` with `per_class` sketches each.
pub fn write_corpus(dir: &Path, categories: &[&str], per_class: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, cat) in categories.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_003 * i as u64));
        let sketches = (0..per_class)
            .map(|_| generate(cat, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        write_ndjson(&dir.join(format!("{cat}.ndjson")), cat, &sketches)?;
    }
    Ok(())
}

/// Shuffled convenience list of the generator's categories.
pub fn shuffled_categories(seed: u64) -> Vec<&'static str> {
    let mut c = SYNTH_CATEGORIES.to_vec();
    c.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    c
}
