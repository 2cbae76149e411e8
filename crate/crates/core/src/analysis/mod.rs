//! Post-hoc studies of a trained classifier.
//!
//! * shape-embedding collection and k-means primitive codebooks,
//! * primitive replacement accuracy and shape inversion,
//! * SLI transfer maps between categories,
//! * order-embedding similarity and attention export.

pub mod kmeans;
pub mod primitives;
pub mod transfer;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{cosine, Float, SketchClassifier};
use crate::sketch::Sketch;

pub use kmeans::{kmeans, KMeans};
pub use primitives::{
    primitive_replace_accuracy, shape_inversion, PrimitiveCodebook, Representative, ShapeInversion,
    ShapeInversionConfig,
};
pub use transfer::{transfer_map, TransferMap};

/// Which stroke an embedding row came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeRef {
    pub sketch_id: usize,
    pub stroke: usize,
    pub category: Option<usize>,
}

/// One shape-embedding row per encoded stroke.
#[derive(Clone, Debug)]
pub struct ShapeEmbeddings {
    pub matrix: Array2<f64>,
    pub index: Vec<StrokeRef>,
    /// Shape sequences of the rows, kept for drawing representatives.
    pub shapes: Vec<Vec<[f64; 4]>>,
}

const BATCH: usize = 256;

/// Shape-encodes every stroke of `samples`. Strokes beyond the model's
/// stroke budget are not encoded and therefore have no row.
pub fn collect_shape_embeddings<F: Float>(
    model: &SketchClassifier<F>,
    samples: &[Sample],
) -> Result<ShapeEmbeddings> {
    let mut rows: Vec<f64> = Vec::new();
    let mut index = Vec::new();
    let mut shapes = Vec::new();
    let d = model.config.embed_dim;
    for chunk in samples.chunks(BATCH) {
        let inputs: Vec<_> = chunk.iter().map(|s| model.input(&s.sketch)).collect();
        let shape_seqs: Vec<&[[F; 4]]> = inputs
            .iter()
            .flat_map(|i| i.strokes.iter().map(|s| s.shape.as_slice()))
            .collect();
        if shape_seqs.is_empty() {
            continue;
        }
        let emb = model.encode_shapes(&shape_seqs)?;
        rows.extend(emb.iter().map(|v| v.to_f64().unwrap()));
        for (sample, input) in chunk.iter().zip(&inputs) {
            for (k, s) in input.strokes.iter().enumerate() {
                index.push(StrokeRef {
                    sketch_id: sample.id,
                    stroke: k,
                    category: sample.sketch.label,
                });
                shapes.push(s.shape.iter().map(|p| p.map(|v| v.to_f64().unwrap())).collect());
            }
        }
    }
    let matrix = Array2::from_shape_vec((index.len(), d), rows).expect("row per stroke");
    Ok(ShapeEmbeddings { matrix, index, shapes })
}

/// Cosine similarity between the first `m` order-embedding rows.
pub fn order_similarity<F: Float>(model: &SketchClassifier<F>, m: usize) -> Result<Array2<f64>> {
    if m == 0 || m > model.config.max_strokes {
        return Err(Error::invalid(
            "m",
            format!("must be in 1..={}, got {m}", model.config.max_strokes),
        ));
    }
    let table = model
        .params
        .m(model.params.layout.order_table)
        .mapv(|v| v.to_f64().unwrap());
    Ok(Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            1.0
        } else {
            cosine(table.row(i), table.row(j))
        }
    }))
}

/// Attention maps of one sketch, token 0 being the classification token.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionExport {
    pub tokens: Vec<String>,
    pub probabilities: Vec<f64>,
    /// `layers[l][query][key]`, averaged over heads.
    pub layers: Vec<Vec<Vec<f64>>>,
    /// `heads[l][h][query][key]`, present only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

fn nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn attention_export<F: Float>(
    model: &SketchClassifier<F>,
    sketch: &Sketch,
    per_head: bool,
) -> Result<AttentionExport> {
    let input = model.input(sketch);
    let (scores, per) = model.forward_with_head_attention(&input)?;
    let layers = per
        .iter()
        .map(|heads| {
            let mut mean = heads[0].clone();
            for h in &heads[1..] {
                mean += h;
            }
            nested(&(mean / heads.len() as f64))
        })
        .collect();
    let mut tokens = vec!["cls".to_owned()];
    tokens.extend(input.strokes.iter().map(|s| format!("stroke{}", s.order)));
    Ok(AttentionExport {
        tokens,
        probabilities: scores.probabilities,
        layers,
        heads: per_head.then(|| per.iter().map(|l| l.iter().map(nested).collect()).collect()),
    })
}

/// Square matrix as CSV with a header row and a label column.
pub fn write_matrix_csv(
    mut out: impl Write,
    corner: &str,
    rows: &[String],
    cols: &[String],
    m: &Array2<f64>,
) -> Result<()> {
    write!(out, "{corner}")?;
    for c in cols {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for (name, row) in rows.iter().zip(m.rows()) {
        write!(out, "{name}")?;
        for v in row {
            write!(out, ",{v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_matrix_csv(path: &Path, corner: &str, rows: &[String], cols: &[String], m: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_csv(&mut f, corner, rows, cols, m)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::sketch::{Point, Stroke};

    fn model() -> SketchClassifier<f64> {
        SketchClassifier::new(ModelConfig::micro(3), vec!["a".into(), "b".into(), "c".into()], 1).unwrap()
    }

    fn sample(id: usize, strokes: &[&[(f64, f64)]]) -> Sample {
        Sample {
            id,
            sketch: Sketch::new(
                strokes
                    .iter()
                    .map(|s| Stroke::new(s.iter().map(|&(x, y)| Point::new(x, y)).collect()))
                    .collect(),
                Some(id % 3),
            ),
        }
    }

    #[test]
    fn one_row_per_stroke_and_duplicates_match() {
        let m = model();
        let a: &[(f64, f64)] = &[(0.0, 0.0), (0.2, 0.1), (0.3, 0.4)];
        let moved: &[(f64, f64)] = &[(-0.5, 0.5), (-0.3, 0.6), (-0.2, 0.9)];
        let samples = vec![sample(0, &[a, &[(0.1, 0.1), (0.5, 0.5)]]), sample(1, &[moved])];
        let e = collect_shape_embeddings(&m, &samples).unwrap();
        assert_eq!(e.matrix.nrows(), 3);
        assert_eq!(e.index[2], StrokeRef { sketch_id: 1, stroke: 0, category: Some(1) });
        for (x, y) in e.matrix.row(0).iter().zip(e.matrix.row(2)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn order_similarity_shape_and_symmetry() {
        let m = model();
        let s = order_similarity(&m, 16).unwrap();
        assert_eq!(s.dim(), (16, 16));
        for i in 0..16 {
            assert!((s[[i, i]] - 1.0).abs() < 1e-6);
            for j in 0..16 {
                assert!((s[[i, j]] - s[[j, i]]).abs() < 1e-6);
            }
        }
        assert!(order_similarity(&m, 33).is_err());
    }

    #[test]
    fn attention_for_five_strokes_has_six_tokens() {
        let m = model();
        let strokes: Vec<Vec<(f64, f64)>> = (0..5).map(|i| vec![(0.1 * i as f64, 0.0), (0.0, 0.2)]).collect();
        let refs: Vec<&[(f64, f64)]> = strokes.iter().map(|s| s.as_slice()).collect();
        let e = attention_export(&m, &sample(0, &refs).sketch, true).unwrap();
        assert_eq!(e.tokens.len(), 6);
        assert_eq!(e.layers.len(), m.config.depth);
        for l in &e.layers {
            for row in l {
                assert_eq!(row.len(), 6);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }
        assert_eq!(e.heads.as_ref().unwrap()[0].len(), m.config.heads);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let names = vec!["x".to_owned(), "y".to_owned()];
        write_matrix_csv(&mut buf, "t\\s", &names, &names, &ndarray::array![[1.0, 0.5], [0.25, 0.0]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t\\s,x,y\nx,1.000000,0.500000\ny,0.250000,0.000000\n");
    }
}
