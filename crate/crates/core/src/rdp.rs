//! Ramer–Douglas–Peucker polyline simplification.

use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch, Stroke};

/// Two pixels of the 256-pixel QuickDraw canvas, in normalized units.
pub const DEFAULT_EPSILON: f64 = 0.0157;

/// Distance from `p` to the closed segment `a`–`b`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = ap.x - t * ab.x;
    let dy = ap.y - t * ab.y;
    (dx * dx + dy * dy).sqrt()
}

/// Indices of the points retained by RDP, in ascending order.
pub fn rdp_keep(points: &[Point], epsilon: f64) -> Vec<usize> {
    let n = points.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (points[lo], points[hi]);
        let mut best = (lo, -1.0);
        for (i, &p) in points.iter().enumerate().take(hi).skip(lo + 1) {
            let d = segment_distance(p, a, b);
            if d > best.1 {
                best = (i, d);
            }
        }
        if best.1 > epsilon {
            keep[best.0] = true;
            stack.push((best.0, hi));
            stack.push((lo, best.0));
        }
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

pub fn rdp_simplify(stroke: &Stroke, epsilon: f64) -> Result<Stroke> {
    if stroke.len() < 2 {
        return Err(Error::invalid(
            "stroke",
            format!("RDP needs at least 2 points, got {}", stroke.len()),
        ));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon", "must be non-negative"));
    }
    let keep = rdp_keep(&stroke.points, epsilon);
    Ok(Stroke::new(keep.into_iter().map(|i| stroke.points[i]).collect()))
}

/// Simplifies every stroke. One-point strokes are first doubled into a
/// zero-length segment so that every stroke has at least two points.
pub fn simplify_sketch(sketch: &Sketch, epsilon: f64) -> Result<Sketch> {
    let strokes = sketch
        .strokes
        .iter()
        .map(|s| match s.points.as_slice() {
            [] => Err(Error::invalid("stroke", "empty stroke")),
            [p] => Ok(Stroke::new(vec![*p, *p])),
            _ => rdp_simplify(s, epsilon),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sketch::new(strokes, sketch.label))
}
