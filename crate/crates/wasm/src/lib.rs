//! Browser bindings for three small explorations: neighbor pools of pasted
//! sequences, similarity histograms of a synthetic corpus, and the clamped
//! weak-pair loss on 2-D representations.
//!
//! Every export returns a JSON string so the page can stay framework-free.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Strong pool and top-alpha weak pool of every pasted sequence. Each line
/// holds item ids; the last one is the target.
#[wasm_bindgen]
pub fn neighbors(corpus: &str, metric: &str, alpha: f64) -> Result<String, JsError> {
    js(demo::neighbors(corpus, metric, alpha))
}

/// Histogram of different-target test pairs of a generated corpus.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn synth_histogram(
    users: usize,
    items: usize,
    intents: usize,
    noise: f64,
    overlap: f64,
    seed: u64,
    metric: &str,
    bins: usize,
    threshold: f64,
) -> Result<String, JsError> {
    js(demo::synth_histogram(users, items, intents, noise, overlap, seed, metric, bins, threshold))
}

/// Pair losses, relative terms and per-row gradients for one 2-D center.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn relative_loss(
    strong_deg: f64,
    weak_deg: f64,
    negatives: usize,
    radius: f64,
    tau: f64,
    variant: &str,
    weak_score: f64,
    negative_score: f64,
) -> Result<String, JsError> {
    js(demo::relative_loss(strong_deg, weak_deg, negatives, radius, tau, variant, weak_score, negative_score))
}
