//! Operator surface for the sketch explainability toolkit: the
//! `sketchxai` command line and the JSON service used by the workbench.

pub mod cli;
pub mod data;
pub mod service;
pub mod wire;

use wire::ErrorBody;

/// Machine-readable form of any error reaching the top level.
pub fn error_body(e: &anyhow::Error) -> ErrorBody {
    if let Some(core) = e.chain().find_map(|c| c.downcast_ref::<sketchxai_core::Error>()) {
        let mut body = ErrorBody::from_core(core);
        body.message = format!("{e:#}");
        return body;
    }
    ErrorBody {
        kind: if e.chain().any(|c| c.is::<std::io::Error>()) {
            "io"
        } else {
            "error"
        }
        .into(),
        message: format!("{e:#}"),
        path: None,
    }
}
