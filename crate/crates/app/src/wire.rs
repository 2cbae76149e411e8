//! JSON shapes shared by the CLI and the HTTP API.

use serde::{Deserialize, Serialize};
use sketchxai_core::{Error, Sketch, Stroke};

/// A class given either by index or by category name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

impl ClassRef {
    pub fn resolve(&self, categories: &[String], path: &str) -> Result<usize, Error> {
        match self {
            ClassRef::Index(i) if *i < categories.len() => Ok(*i),
            ClassRef::Index(i) => Err(Error::invalid(path, format!("class {i} out of range"))),
            ClassRef::Name(n) => categories
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::UnknownCategory(n.clone())),
        }
    }
}

impl std::str::FromStr for ClassRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse() {
            Ok(i) => ClassRef::Index(i),
            Err(_) => ClassRef::Name(s.to_owned()),
        })
    }
}

/// `{"strokes": [[[x, y], ...], ...], "label": 3 | "cat" | null}` in
/// normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireSketch {
    pub strokes: Vec<Stroke>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassRef>,
}

impl WireSketch {
    /// Resolves the label and validates coordinates; error paths are
    /// prefixed with `prefix`.
    pub fn to_sketch(&self, categories: &[String], prefix: &str) -> Result<Sketch, Error> {
        let label = match &self.label {
            Some(l) => Some(l.resolve(categories, &format!("{prefix}.label"))?),
            None => None,
        };
        let sketch = Sketch::new(self.strokes.clone(), label);
        sketch.validate(Some(categories.len())).map_err(|e| match e {
            Error::Invalid { path, reason } => Error::invalid(format!("{prefix}.{path}"), reason),
            other => other,
        })?;
        Ok(sketch)
    }

    pub fn from_sketch(sketch: &Sketch) -> Self {
        WireSketch {
            strokes: sketch.strokes.clone(),
            label: sketch.label.map(ClassRef::Index),
        }
    }
}

/// One-line machine-readable error record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl ErrorBody {
    pub fn from_core(e: &Error) -> Self {
        let (kind, path) = match e {
            Error::MissingCategory(..) | Error::UnknownCategory(_) => ("not_found", None),
            Error::Invalid { path, .. } => ("invalid", Some(path.clone())),
            Error::EmptyCategory(_) | Error::InsufficientSamples { .. } => ("insufficient_data", None),
            Error::ConfigMismatch(_) => ("config_mismatch", None),
            Error::NonFinite(_) => ("non_finite", None),
            Error::Format(_) | Error::Json(_) => ("format", None),
            Error::Io(_) => ("io", None),
        };
        ErrorBody {
            kind: kind.to_owned(),
            message: e.to_string(),
            path,
        }
    }
}

#[derive(Serialize)]
pub struct ErrorEnvelope<'a> {
    pub error: &'a ErrorBody,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> Vec<String> {
        vec!["cat".into(), "dog".into()]
    }

    #[test]
    fn labels_by_name_or_index() {
        let w: WireSketch = serde_json::from_str(r#"{"strokes":[[[0,0],[0.5,0.5]]],"label":"dog"}"#).unwrap();
        assert_eq!(w.to_sketch(&cats(), "sketch").unwrap().label, Some(1));
        let w: WireSketch = serde_json::from_str(r#"{"strokes":[[[0,0]]],"label":0}"#).unwrap();
        assert_eq!(w.to_sketch(&cats(), "sketch").unwrap().label, Some(0));
        let w: WireSketch = serde_json::from_str(r#"{"strokes":[[[0,0]]],"label":"cow"}"#).unwrap();
        assert!(matches!(w.to_sketch(&cats(), "sketch"), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn invalid_points_report_prefixed_paths() {
        let w: WireSketch = serde_json::from_str(r#"{"strokes":[[[0,0]],[[1e400,0]]]}"#).unwrap_or(WireSketch {
            strokes: vec![
                Stroke::new(vec![sketchxai_core::Point::new(0.0, 0.0)]),
                Stroke::new(vec![sketchxai_core::Point::new(f64::NAN, 0.0)]),
            ],
            label: None,
        });
        match w.to_sketch(&cats(), "sketch") {
            Err(Error::Invalid { path, .. }) => assert!(path.starts_with("sketch.strokes[1]"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn class_ref_parse() {
        assert_eq!("3".parse::<ClassRef>().unwrap(), ClassRef::Index(3));
        assert_eq!("sun".parse::<ClassRef>().unwrap(), ClassRef::Name("sun".into()));
    }
}
