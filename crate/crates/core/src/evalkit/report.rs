use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::setting::TaskSetting;
use crate::decoder::DecodeConfig;
use crate::error::Result;
use crate::scenegen::predicate_name;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub gt_tuples: usize,
    pub proposals: usize,
    pub vertex_detections: usize,
    pub relation_detections: usize,
    pub dropped_edges: usize,
    pub degenerate_iou: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Linking {
    pub candidates: usize,
    pub correct: usize,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: TaskSetting,
    pub vertex_override: String,
    pub iou_threshold: f64,
    pub ks: Vec<usize>,
    pub decode: DecodeConfig,
    /// Absent (`null`) when there is no ground truth.
    pub recall_at_k: BTreeMap<usize, Option<f64>>,
    pub per_predicate: BTreeMap<String, BTreeMap<usize, Option<f64>>>,
    /// `[predicate][slot]` counts of decoded edges.
    pub slot_histogram: Vec<Vec<usize>>,
    pub counts: Counts,
    pub linking: Linking,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"))
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at_k.get(&k).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting      {}", self.setting);
        let _ = writeln!(
            s,
            "images       {}  gt tuples {}  proposals {}",
            self.counts.images, self.counts.gt_tuples, self.counts.proposals
        );
        let _ = write!(s, "\n{:<16}", "");
        for k in &self.ks {
            let _ = write!(s, "{:>10}", format!("R@{k}"));
        }
        let _ = write!(s, "\n{:<16}", "all");
        for k in &self.ks {
            let _ = write!(s, "{:>10}", cell(self.recall(*k)));
        }
        s.push('\n');
        for (name, row) in &self.per_predicate {
            let _ = write!(s, "{name:<16}");
            for k in &self.ks {
                let _ = write!(s, "{:>10}", cell(row.get(k).copied().flatten()));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nslot usage (relation detections per slot)");
        for (p, row) in self.slot_histogram.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(s, "{:<16}{}", predicate_name(p), cells.join(""));
        }
        let _ = writeln!(
            s,
            "\nedge linking {}/{} ({})",
            self.linking.correct,
            self.linking.candidates,
            cell(self.linking.rate)
        );
        let _ = writeln!(s, "override     {}", self.vertex_override);
        s
    }

    /// `predicate,slot,count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("predicate,slot,count\n");
        for (p, row) in self.slot_histogram.iter().enumerate() {
            for (slot, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{slot},{c}", predicate_name(p));
            }
        }
        s
    }
}
