use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{iou, match_tuples, recall_at_k};
use super::report::{Counts, EvalReport, Linking};
use crate::decoder::{decode, ideal_outputs, DecodeConfig, PredictedGraph};
use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::graphmodel::{GraphModel, ModelConfig, ModelOutputs};
use crate::scenegen::{predicate_name, prior_input, BBox, Sample, SceneGraph};

pub const IOU_THRESHOLD: f64 = 0.5;

/// Describes the vertex override applied in the box-given settings; stored
/// in every report.
pub const OVERRIDE_RULE: &str = "sgcls/predcls: each detected vertex overlapping a given box takes the \
     box of highest IoU (and, in predcls, its class); vertices overlapping no given box are kept";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSetting {
    /// Nothing given.
    SgGen,
    /// Ground-truth boxes given.
    SgCls,
    /// Ground-truth boxes and classes given.
    PredCls,
}

impl TaskSetting {
    pub const ALL: [TaskSetting; 3] = [TaskSetting::SgGen, TaskSetting::SgCls, TaskSetting::PredCls];

    pub fn gives_boxes(self) -> bool {
        self != TaskSetting::SgGen
    }

    pub fn gives_classes(self) -> bool {
        self == TaskSetting::PredCls
    }

    /// Prior input for a sample: boxes grouped by anchor for SGCls, by
    /// class for PredCls.
    pub fn prior(self, graph: &SceneGraph, model: &ModelConfig) -> Option<Tensor<f32>> {
        if !self.gives_boxes() {
            return None;
        }
        let boxes: Vec<(BBox, Option<usize>)> = graph
            .vertices
            .iter()
            .map(|v| (v.bbox, self.gives_classes().then_some(v.category)))
            .collect();
        Some(prior_input(&boxes, &model.prior_layout()))
    }
}

impl fmt::Display for TaskSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskSetting::SgGen => "sggen",
            TaskSetting::SgCls => "sgcls",
            TaskSetting::PredCls => "predcls",
        })
    }
}

impl FromStr for TaskSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sggen" => Ok(TaskSetting::SgGen),
            "sgcls" => Ok(TaskSetting::SgCls),
            "predcls" => Ok(TaskSetting::PredCls),
            _ => Err(Error::Config(format!("unknown setting `{s}` (sggen, sgcls, predcls)"))),
        }
    }
}

/// Anything that produces model outputs for a sample.
pub trait Predictor: Sync {
    type Real: Real;

    fn model_config(&self) -> &ModelConfig;

    fn predict(&self, sample: &Sample, prior: Option<&Tensor<f32>>) -> Result<ModelOutputs<Self::Real>>;
}

impl Predictor for GraphModel<f32> {
    type Real = f32;

    fn model_config(&self) -> &ModelConfig {
        self.config()
    }

    fn predict(&self, sample: &Sample, prior: Option<&Tensor<f32>>) -> Result<ModelOutputs<f32>> {
        self.forward(&sample.image.to_tensor(), prior)
    }
}

/// Emits the outputs a perfect model would produce; the prior is ignored.
#[derive(Clone, Debug)]
pub struct IdealPredictor {
    pub config: ModelConfig,
}

impl Predictor for IdealPredictor {
    type Real = f64;

    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, sample: &Sample, _prior: Option<&Tensor<f32>>) -> Result<ModelOutputs<f64>> {
        ideal_outputs(&sample.graph, &self.config, 0)
    }
}

fn best_iou(bbox: &BBox, graph: &SceneGraph) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in graph.vertices.iter().enumerate() {
        let v = iou(bbox, &g.bbox);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

/// Replaces detected vertices by the given ground truth (see [`OVERRIDE_RULE`]).
pub fn override_vertices(pred: &mut PredictedGraph, graph: &SceneGraph, setting: TaskSetting) {
    if !setting.gives_boxes() {
        return;
    }
    for v in &mut pred.vertices {
        if let Some((j, score)) = best_iou(&v.bbox, graph) {
            if score > 0.0 {
                v.bbox = graph.vertices[j].bbox;
                if setting.gives_classes() {
                    v.category = graph.vertices[j].category;
                }
            }
        }
    }
}

/// Evaluation record of one image, sufficient to recompute every recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub name: String,
    /// Predicate of each ground-truth tuple, in ground-truth order.
    pub gt_predicates: Vec<usize>,
    pub proposals: usize,
    /// `(rank, ground-truth index)` of every match within the largest k.
    pub matches: Vec<(usize, usize)>,
    /// `(predicate, slot)` of every decoded edge.
    pub relation_slots: Vec<(usize, usize)>,
    pub vertex_detections: usize,
    pub dropped_edges: usize,
    pub degenerate_iou: usize,
    /// Decoded edges agreeing with some ground-truth edge in pixel and
    /// predicate, and how many of those link both endpoints correctly.
    pub link_candidates: usize,
    pub link_correct: usize,
}

impl ImageResult {
    pub fn matched_within(&self, k: usize) -> usize {
        self.matches.iter().filter(|m| m.0 < k).count()
    }
}

/// The ground-truth vertex a detection stands for: best IoU, at least 0.5.
fn identity(bbox: &BBox, graph: &SceneGraph) -> Option<usize> {
    best_iou(bbox, graph).and_then(|(j, v)| (v >= IOU_THRESHOLD).then_some(j))
}

fn link_stats(pred: &PredictedGraph, graph: &SceneGraph) -> (usize, usize) {
    let (mut candidates, mut correct) = (0, 0);
    for e in &pred.edges {
        let same: Vec<_> = graph
            .edges
            .iter()
            .filter(|g| g.grounding == e.pixel && g.predicate == e.predicate)
            .collect();
        if same.is_empty() {
            continue;
        }
        candidates += 1;
        let s = identity(&pred.vertices[e.resolved_source].bbox, graph);
        let t = identity(&pred.vertices[e.resolved_target].bbox, graph);
        if same.iter().any(|g| s == Some(g.source) && t == Some(g.target)) {
            correct += 1;
        }
    }
    (candidates, correct)
}

/// Decodes one sample under a setting, without evaluation.
pub fn predict_graph<P: Predictor>(
    predictor: &P,
    sample: &Sample,
    setting: TaskSetting,
    decode_cfg: &DecodeConfig,
) -> Result<PredictedGraph> {
    let cfg = predictor.model_config();
    let prior = setting.prior(&sample.graph, cfg);
    let outputs = predictor.predict(sample, prior.as_ref())?;
    let mut graph = decode(&outputs, cfg, decode_cfg)?;
    override_vertices(&mut graph, &sample.graph, setting);
    Ok(graph)
}

pub fn evaluate_image<P: Predictor>(
    predictor: &P,
    sample: &Sample,
    setting: TaskSetting,
    max_k: usize,
    decode_cfg: &DecodeConfig,
) -> Result<ImageResult> {
    let pred = predict_graph(predictor, sample, setting, decode_cfg)?;
    let proposals: Vec<_> = pred.ranking.iter().map(|r| pred.triplet(r.edge)).collect();
    let gt = sample.graph.triplets();
    let m = match_tuples(&proposals, &gt, IOU_THRESHOLD, max_k)?;
    let (link_candidates, link_correct) = link_stats(&pred, &sample.graph);
    Ok(ImageResult {
        name: sample.name.clone(),
        gt_predicates: gt.iter().map(|t| t.predicate).collect(),
        proposals: proposals.len(),
        matches: m.pairs.clone(),
        relation_slots: pred.edges.iter().map(|e| (e.predicate, e.slot)).collect(),
        vertex_detections: pred.vertices.len(),
        dropped_edges: pred.dropped_edges,
        degenerate_iou: m.degenerate,
        link_candidates,
        link_correct,
    })
}

/// Evaluates every sample, fanning out over up to `threads` workers.
/// Results are in sample order regardless of the thread count.
pub fn evaluate_images<P: Predictor>(
    predictor: &P,
    samples: &[Sample],
    setting: TaskSetting,
    max_k: usize,
    decode_cfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<ImageResult>> {
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        return samples
            .iter()
            .map(|s| evaluate_image(predictor, s, setting, max_k, decode_cfg))
            .collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<ImageResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| evaluate_image(predictor, s, setting, max_k, decode_cfg))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Aggregates per-image results into a report.
pub fn build_report(
    results: &[ImageResult],
    setting: TaskSetting,
    ks: &[usize],
    decode_cfg: &DecodeConfig,
    model: &ModelConfig,
) -> Result<EvalReport> {
    let mut recall = BTreeMap::new();
    let mut per_predicate: BTreeMap<String, BTreeMap<usize, Option<f64>>> = BTreeMap::new();
    for &k in ks {
        let pairs: Vec<(usize, usize)> = results
            .iter()
            .map(|r| (r.matched_within(k), r.gt_predicates.len()))
            .collect();
        recall.insert(k, recall_at_k(&pairs));
        for p in 0..model.predicates {
            let pairs: Vec<(usize, usize)> = results
                .iter()
                .map(|r| {
                    let matched = r
                        .matches
                        .iter()
                        .filter(|m| m.0 < k && r.gt_predicates[m.1] == p)
                        .count();
                    (matched, r.gt_predicates.iter().filter(|&&q| q == p).count())
                })
                .collect();
            per_predicate
                .entry(predicate_name(p).to_string())
                .or_default()
                .insert(k, recall_at_k(&pairs));
        }
    }
    let mut histogram = vec![vec![0usize; model.relation_slots]; model.predicates];
    for r in results {
        for &(p, s) in &r.relation_slots {
            if p >= model.predicates || s >= model.relation_slots {
                return Err(Error::Invalid(format!("relation detection ({p}, {s}) out of range")));
            }
            histogram[p][s] += 1;
        }
    }
    let sum = |f: fn(&ImageResult) -> usize| results.iter().map(f).sum::<usize>();
    let counts = Counts {
        images: results.len(),
        gt_tuples: sum(|r| r.gt_predicates.len()),
        proposals: sum(|r| r.proposals),
        vertex_detections: sum(|r| r.vertex_detections),
        relation_detections: sum(|r| r.relation_slots.len()),
        dropped_edges: sum(|r| r.dropped_edges),
        degenerate_iou: sum(|r| r.degenerate_iou),
    };
    let candidates = sum(|r| r.link_candidates);
    let correct = sum(|r| r.link_correct);
    Ok(EvalReport {
        setting,
        vertex_override: OVERRIDE_RULE.to_string(),
        iou_threshold: IOU_THRESHOLD,
        ks: ks.to_vec(),
        decode: decode_cfg.clone(),
        recall_at_k: recall,
        per_predicate,
        slot_histogram: histogram,
        counts,
        linking: Linking {
            candidates,
            correct,
            rate: (candidates > 0).then(|| correct as f64 / candidates as f64),
        },
    })
}

/// Full evaluation of one setting.
pub fn run_setting<P: Predictor>(
    predictor: &P,
    samples: &[Sample],
    setting: TaskSetting,
    ks: &[usize],
    decode_cfg: &DecodeConfig,
    threads: usize,
) -> Result<(EvalReport, Vec<ImageResult>)> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let cfg = predictor.model_config();
    if setting.gives_boxes() && cfg.prior_input_channels == 0 {
        return Err(Error::Config(format!("{setting} needs a model with a prior input")));
    }
    let max_k = *ks.iter().max().expect("non-empty");
    let results = evaluate_images(predictor, samples, setting, max_k, decode_cfg, threads)?;
    let report = build_report(&results, setting, ks, decode_cfg, cfg)?;
    Ok((report, results))
}
