//! Browser demo. A checkpoint is loaded into the page and three operations
//! run client-side: classify a sketch, draw a generated sample, and run
//! stroke location inversion with per-frame SVG renders for playback.
//!
//! Values cross the JS boundary as JSON strings; the sketch shape is the
//! same `{"strokes": [[[x, y], ...]], "label": ...}` used by the service.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchxai_core::model::ModelConfig;
use sketchxai_core::rdp::{simplify_sketch, DEFAULT_EPSILON};
use sketchxai_core::render::{render_svg_with, Style};
use sketchxai_core::sketch::normalize;
use sketchxai_core::{synth, Checkpoint, Sketch, SliConfig, Stroke};
use wasm_bindgen::prelude::*;

#[derive(Serialize, Deserialize)]
struct JsSketch {
    strokes: Vec<Stroke>,
    #[serde(default)]
    label: Option<usize>,
}

#[derive(Serialize)]
struct Classified<'a> {
    probabilities: Vec<f64>,
    predicted: usize,
    category: &'a str,
}

#[derive(Serialize)]
struct PlaybackFrame {
    t: usize,
    p_orig: f64,
    p_target: f64,
    svg: String,
}

#[derive(Serialize)]
struct Playback {
    original: usize,
    target: usize,
    frames: Vec<PlaybackFrame>,
}

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Model plus the operations exposed to the page.
#[wasm_bindgen]
pub struct Workbench {
    model: Checkpoint,
}

impl Workbench {
    fn parse_sketch(&self, json: &str) -> Res<Sketch> {
        let js: JsSketch = serde_json::from_str(json).map_err(err)?;
        let sketch = Sketch::new(js.strokes, js.label);
        sketch.validate(Some(self.model.categories.len())).map_err(err)?;
        Ok(sketch)
    }

    pub fn classify_json(&self, sketch: &str) -> Res<String> {
        let sketch = self.parse_sketch(sketch)?;
        let s = self.model.classify_sketch(&sketch).map_err(err)?;
        let predicted = s.predicted();
        serde_json::to_string(&Classified {
            category: &self.model.categories[predicted],
            predicted,
            probabilities: s.probabilities,
        })
        .map_err(err)
    }

    pub fn sample_json(&self, category: &str, seed: u32) -> Res<String> {
        let label = self.model.category_index(category).ok();
        let raw = synth::generate(category, &mut ChaCha8Rng::seed_from_u64(seed.into())).map_err(err)?;
        let sketch = simplify_sketch(&normalize(&raw).map_err(err)?, DEFAULT_EPSILON).map_err(err)?;
        serde_json::to_string(&JsSketch {
            strokes: sketch.strokes,
            label,
        })
        .map_err(err)
    }

    pub fn run_sli_json(&self, sketch: &str, config: &str) -> Res<String> {
        let sketch = self.parse_sketch(sketch)?;
        let config: SliConfig = serde_json::from_str(config).map_err(err)?;
        let traj = sketchxai_core::run_sli(&self.model, &sketch, &config).map_err(err)?;
        let frames = traj
            .frames
            .iter()
            .map(|f| {
                let style = Style {
                    caption: Some(format!("t={} p={:.3}", f.t, f.p_target)),
                    ..Style::default()
                };
                PlaybackFrame {
                    t: f.t,
                    p_orig: f.p_orig,
                    p_target: f.p_target,
                    svg: render_svg_with(&traj.sketch_at(f.t), &style),
                }
            })
            .collect();
        serde_json::to_string(&Playback {
            original: traj.header.original_label,
            target: traj.header.target_label,
            frames,
        })
        .map_err(err)
    }

    pub fn render_json(&self, sketch: &str) -> Res<String> {
        let js: JsSketch = serde_json::from_str(sketch).map_err(err)?;
        Ok(render_svg_with(&Sketch::new(js.strokes, None), &Style::default()))
    }
}

fn js(r: Res<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
impl Workbench {
    /// Loads a checkpoint file's bytes.
    #[wasm_bindgen(constructor)]
    pub fn new(checkpoint: &[u8]) -> Result<Workbench, JsError> {
        let model = Checkpoint::from_bytes(checkpoint).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(Workbench { model })
    }

    /// Untrained micro model over the generator's categories, so the page
    /// works before a checkpoint is chosen. Its predictions are noise.
    pub fn untrained(seed: u32) -> Workbench {
        let cats: Vec<String> = synth::SYNTH_CATEGORIES.iter().map(|s| s.to_string()).collect();
        let model = Checkpoint::new(ModelConfig::micro(cats.len()), cats, seed.into()).expect("micro config is valid");
        Workbench { model }
    }

    pub fn categories(&self) -> String {
        serde_json::to_string(&self.model.categories).expect("strings serialize")
    }

    /// `{probabilities, predicted, category}` for a sketch.
    pub fn classify(&self, sketch: &str) -> Result<String, JsError> {
        js(self.classify_json(sketch))
    }

    /// A generated sketch of `category`, labelled if the model knows it.
    pub fn sample(&self, category: &str, seed: u32) -> Result<String, JsError> {
        js(self.sample_json(category, seed))
    }

    /// Runs SLI with a JSON config (missing fields take defaults) and
    /// returns every frame with its SVG.
    #[wasm_bindgen(js_name = runSli)]
    pub fn run_sli(&self, sketch: &str, config: &str) -> Result<String, JsError> {
        js(self.run_sli_json(sketch, config))
    }

    pub fn render(&self, sketch: &str) -> Result<String, JsError> {
        js(self.render_json(sketch))
    }
}
