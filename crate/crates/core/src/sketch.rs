use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A canvas point. Normalized sketches live in `[-1, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// One pen-down polyline in absolute coordinates.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stroke {
    pub points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Stroke { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Option<Point> {
        self.points.first().copied()
    }

    pub fn translate(&self, by: Point) -> Stroke {
        Stroke::new(self.points.iter().map(|p| p.add(by)).collect())
    }
}

/// An ordered collection of strokes with an optional category id.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Sketch {
    pub strokes: Vec<Stroke>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Sketch {
    pub fn new(strokes: Vec<Stroke>, label: Option<usize>) -> Self {
        Sketch { strokes, label }
    }

    pub fn stroke_count(&self) -> usize {
        self.strokes.len()
    }

    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn translate(&self, by: Point) -> Sketch {
        Sketch {
            strokes: self.strokes.iter().map(|s| s.translate(by)).collect(),
            label: self.label,
        }
    }

    /// Checks the structural invariants of a sketch handed in from outside.
    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::invalid("strokes", "sketch has no strokes"));
        }
        for (i, s) in self.strokes.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::invalid(format!("strokes[{i}]"), "stroke has no points"));
            }
            if let Some(j) = s.points.iter().position(|p| !p.is_finite()) {
                return Err(Error::invalid(
                    format!("strokes[{i}][{j}]"),
                    "coordinate is not finite",
                ));
            }
        }
        if let (Some(label), Some(vocab)) = (self.label, vocab_size) {
            if label >= vocab {
                return Err(Error::invalid(
                    "label",
                    format!("label {label} outside vocabulary of {vocab}"),
                ));
            }
        }
        Ok(())
    }
}

/// Maps raw QuickDraw coordinates in `[0, 255]` onto `[-1, 1]`.
pub fn normalize(raw: &Sketch) -> Result<Sketch> {
    let mut strokes = Vec::with_capacity(raw.strokes.len());
    for (i, s) in raw.strokes.iter().enumerate() {
        let mut pts = Vec::with_capacity(s.len());
        for (j, p) in s.points.iter().enumerate() {
            for v in [p.x, p.y] {
                if !(0.0..=255.0).contains(&v) {
                    return Err(Error::invalid(
                        format!("strokes[{i}][{j}]"),
                        format!("raw coordinate {v} outside [0, 255]"),
                    ));
                }
            }
            pts.push(Point::new(to_canvas(p.x), to_canvas(p.y)));
        }
        strokes.push(Stroke::new(pts));
    }
    Ok(Sketch::new(strokes, raw.label))
}

/// Inverse of [`normalize`], up to float rounding.
pub fn denormalize(sketch: &Sketch) -> Sketch {
    let strokes = sketch
        .strokes
        .iter()
        .map(|s| {
            Stroke::new(
                s.points
                    .iter()
                    .map(|p| Point::new((p.x + 1.0) * 127.5, (p.y + 1.0) * 127.5))
                    .collect(),
            )
        })
        .collect();
    Sketch::new(strokes, sketch.label)
}

fn to_canvas(v: f64) -> f64 {
    2.0 * v / 255.0 - 1.0
}
