//! Order / shape / location decomposition of strokes and the fixed-size
//! tensor form consumed by the classifier.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::sketch::{Point, Sketch, Stroke};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenState {
    /// `(1, 0)`: pen on paper, stroke continues.
    Drawing,
    /// `(0, 1)`: last point of the stroke.
    End,
    /// `(0, 0)`: filler after the stroke.
    Padding,
}

impl PenState {
    pub fn bits(self) -> [f64; 2] {
        match self {
            PenState::Drawing => [1.0, 0.0],
            PenState::End => [0.0, 1.0],
            PenState::Padding => [0.0, 0.0],
        }
    }

    pub fn from_bits(p1: f64, p2: f64) -> Option<Self> {
        match (p1, p2) {
            (a, b) if a == 1.0 && b == 0.0 => Some(PenState::Drawing),
            (a, b) if a == 0.0 && b == 1.0 => Some(PenState::End),
            (a, b) if a == 0.0 && b == 0.0 => Some(PenState::Padding),
            _ => None,
        }
    }
}

/// One `(δx, δy, p₁, p₂)` entry of a shape sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    pub dx: f64,
    pub dy: f64,
    pub pen: PenState,
}

impl ShapePoint {
    pub fn to_vec4(self) -> [f64; 4] {
        let [p1, p2] = self.pen.bits();
        [self.dx, self.dy, p1, p2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposedStroke {
    pub order: usize,
    pub location: Point,
    pub shape: Vec<ShapePoint>,
}

impl DecomposedStroke {
    /// Number of non-padding entries.
    pub fn real_len(&self) -> usize {
        self.shape
            .iter()
            .take_while(|p| p.pen != PenState::Padding)
            .count()
    }

    /// True when the pen states match `(1,0)* (0,1) (0,0)*` and the
    /// first offset is zero.
    pub fn is_well_formed(&self) -> bool {
        let mut it = self.shape.iter().peekable();
        match it.peek() {
            Some(p) if p.dx == 0.0 && p.dy == 0.0 => {}
            _ => return false,
        }
        while it.next_if(|p| p.pen == PenState::Drawing).is_some() {}
        if it.next().map(|p| p.pen) != Some(PenState::End) {
            return false;
        }
        it.all(|p| p.pen == PenState::Padding && p.dx == 0.0 && p.dy == 0.0)
    }
}

/// Splits each stroke into its first absolute point and the offsets
/// between consecutive points, with the first offset reset to zero.
pub fn decompose(sketch: &Sketch) -> Vec<DecomposedStroke> {
    sketch
        .strokes
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(order, s)| decompose_stroke(order, s))
        .collect()
}

fn decompose_stroke(order: usize, stroke: &Stroke) -> DecomposedStroke {
    let pts = &stroke.points;
    let last = pts.len() - 1;
    let shape = pts
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let d = if j == 0 { Point::default() } else { p.sub(pts[j - 1]) };
            ShapePoint {
                dx: d.x,
                dy: d.y,
                pen: if j == last { PenState::End } else { PenState::Drawing },
            }
        })
        .collect();
    DecomposedStroke {
        order,
        location: pts[0],
        shape,
    }
}

/// Rebuilds absolute polylines; padding entries are dropped.
pub fn recompose(strokes: &[DecomposedStroke], label: Option<usize>) -> Sketch {
    let strokes = strokes
        .iter()
        .map(|d| {
            let mut cur = d.location;
            let mut pts = Vec::with_capacity(d.shape.len());
            for (j, sp) in d.shape.iter().enumerate() {
                if sp.pen == PenState::Padding {
                    break;
                }
                if j > 0 {
                    cur = Point::new(cur.x + sp.dx, cur.y + sp.dy);
                }
                pts.push(cur);
            }
            Stroke::new(pts)
        })
        .collect();
    Sketch::new(strokes, label)
}

/// Replaces stroke locations, keeping shapes and orders.
pub fn with_locations(strokes: &[DecomposedStroke], locations: &[Point]) -> Vec<DecomposedStroke> {
    strokes
        .iter()
        .zip(locations)
        .map(|(d, &l)| DecomposedStroke {
            location: l,
            ..d.clone()
        })
        .collect()
}

/// Fixed-size, masked tensor form of a decomposed sketch.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedSketch {
    /// `[max_strokes, max_points, 4]`
    pub shape_tensor: Array3<f64>,
    /// `[max_strokes, 2]`
    pub location_tensor: Array2<f64>,
    pub order_ids: Array1<usize>,
    pub stroke_mask: Vec<bool>,
    pub point_counts: Vec<usize>,
}

impl TokenizedSketch {
    pub fn max_strokes(&self) -> usize {
        self.stroke_mask.len()
    }

    pub fn max_points(&self) -> usize {
        self.shape_tensor.dim().1
    }

    pub fn real_stroke_count(&self) -> usize {
        self.stroke_mask.iter().filter(|&&m| m).count()
    }
}

/// Pads or truncates to the configured maximum stroke and point counts.
/// Truncated strokes keep their earliest points and end with `(0, 1)`.
pub fn tokenize(strokes: &[DecomposedStroke], config: &ModelConfig) -> TokenizedSketch {
    let (ms, mp) = (config.max_strokes, config.max_points);
    let mut shape_tensor = Array3::zeros((ms, mp, 4));
    let mut location_tensor = Array2::zeros((ms, 2));
    let mut order_ids = Array1::zeros(ms);
    let mut stroke_mask = vec![false; ms];
    let mut point_counts = vec![0; ms];
    for (slot, d) in strokes.iter().take(ms).enumerate() {
        let n = d.real_len().min(mp);
        for (j, sp) in d.shape.iter().take(n).enumerate() {
            let mut v = sp.to_vec4();
            if j + 1 == n {
                v[2] = 0.0;
                v[3] = 1.0;
            }
            for (k, x) in v.into_iter().enumerate() {
                shape_tensor[[slot, j, k]] = x;
            }
        }
        location_tensor[[slot, 0]] = d.location.x;
        location_tensor[[slot, 1]] = d.location.y;
        order_ids[slot] = d.order;
        stroke_mask[slot] = n > 0;
        point_counts[slot] = n;
    }
    TokenizedSketch {
        shape_tensor,
        location_tensor,
        order_ids,
        stroke_mask,
        point_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sketch_of(strokes: &[&[(f64, f64)]]) -> Sketch {
        Sketch::new(
            strokes
                .iter()
                .map(|s| Stroke::new(s.iter().map(|&(x, y)| Point::new(x, y)).collect()))
                .collect(),
            None,
        )
    }

    #[test]
    fn decompose_three_point_stroke() {
        let sk = sketch_of(&[&[(0.2, 0.3), (0.4, 0.3), (0.4, 0.5)]]);
        let d = decompose(&sk);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].location, Point::new(0.2, 0.3));
        let v: Vec<[f64; 4]> = d[0].shape.iter().map(|p| p.to_vec4()).collect();
        let expect = [[0.0, 0.0, 1.0, 0.0], [0.2, 0.0, 1.0, 0.0], [0.0, 0.2, 0.0, 1.0]];
        for (a, b) in v.iter().zip(expect.iter()) {
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() < 1e-12, "{v:?}");
            }
        }
        assert!(d[0].is_well_formed());
    }

    #[test]
    fn origin_location_and_orders() {
        let sk = sketch_of(&[&[(0.0, 0.0), (0.1, 0.1)], &[(0.5, 0.5), (0.6, 0.6)], &[(0.1, 0.9), (0.2, 0.9)]]);
        let d = decompose(&sk);
        assert_eq!(d[0].location, Point::new(0.0, 0.0));
        assert_eq!(d.iter().map(|s| s.order).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn recompose_drops_padding() {
        let sk = sketch_of(&[&[(0.1, 0.1), (0.3, 0.2)]]);
        let mut d = decompose(&sk);
        d[0].shape.push(ShapePoint {
            dx: 0.0,
            dy: 0.0,
            pen: PenState::Padding,
        });
        assert!(d[0].is_well_formed());
        let back = recompose(&d, None);
        assert_eq!(back.strokes[0].len(), 2);
    }

    #[test]
    fn shifted_location_shifts_every_point() {
        let sk = sketch_of(&[&[(0.1, 0.1), (0.3, 0.2), (0.0, -0.4)]]);
        let mut d = decompose(&sk);
        d[0].location = d[0].location.add(Point::new(0.25, 0.25));
        let back = recompose(&d, None);
        for (a, b) in back.strokes[0].points.iter().zip(&sk.strokes[0].points) {
            assert!((a.x - b.x - 0.25).abs() < 1e-12 && (a.y - b.y - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_pen_grammar_detected() {
        let mut d = decompose(&sketch_of(&[&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)]])).remove(0);
        assert!(d.is_well_formed());
        d.shape[1].pen = PenState::End;
        assert!(!d.is_well_formed());
    }

    fn line(n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| (i as f64 * 0.01, 0.0)).collect()
    }

    #[test]
    fn tokenize_mask_counts() {
        let cfg = ModelConfig::micro(10);
        let pts = line(3);
        let five: Vec<&[(f64, f64)]> = (0..5).map(|_| pts.as_slice()).collect();
        let t = tokenize(&decompose(&sketch_of(&five)), &cfg);
        assert_eq!(t.real_stroke_count(), 5);
        assert_eq!(t.stroke_mask.iter().filter(|m| !**m).count(), 27);

        let forty: Vec<&[(f64, f64)]> = (0..40).map(|_| pts.as_slice()).collect();
        let t = tokenize(&decompose(&sketch_of(&forty)), &cfg);
        assert_eq!(t.real_stroke_count(), 32);
        assert_eq!(t.order_ids.to_vec(), (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn tokenize_forces_end_state_on_truncation() {
        let cfg = ModelConfig::micro(10);
        let pts = line(70);
        let t = tokenize(&decompose(&sketch_of(&[&pts])), &cfg);
        assert_eq!(t.point_counts[0], 64);
        assert_eq!(t.shape_tensor[[0, 63, 2]], 0.0);
        assert_eq!(t.shape_tensor[[0, 63, 3]], 1.0);
        assert_eq!(t.shape_tensor[[0, 62, 2]], 1.0);
    }
}
