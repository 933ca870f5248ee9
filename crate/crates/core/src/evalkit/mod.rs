//! Recall@k over subject-predicate-object tuples for the three task
//! settings, per-predicate recall and slot-usage histograms.

mod metrics;
mod report;
mod setting;

pub use metrics::{check_single_consumption, iou, match_tuples, recall_at_k, tuple_agrees, TupleMatches};
pub use report::{Counts, EvalReport, Linking};
pub use setting::{
    build_report, evaluate_image, evaluate_images, override_vertices, predict_graph, run_setting,
    IdealPredictor, ImageResult, Predictor, TaskSetting, IOU_THRESHOLD, OVERRIDE_RULE,
};
