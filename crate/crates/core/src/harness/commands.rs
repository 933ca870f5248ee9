use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::load_checkpoint_for;
use super::config::RunConfig;
use super::train::{train, LogLine, TrainOutcome};
use crate::decoder::{decode, PredictedGraph};
use crate::error::{Error, Result};
use crate::evalkit::{run_setting, EvalReport, TaskSetting};
use crate::graphmodel::GraphModel;
use crate::scenegen::{generate_dataset, load_dataset, RasterImage};

pub const THREADS_ENV: &str = "PX2GRAPH_THREADS";

/// Worker threads from `PX2GRAPH_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Writes the training and held-out scene sets.
pub fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    generate_dataset(&cfg.paths.train_dir, cfg.data.train_scenes, cfg.seeds.data, &cfg.world)?;
    generate_dataset(&cfg.paths.eval_dir, cfg.data.eval_scenes, cfg.seeds.eval_data, &cfg.world)
}

pub fn cmd_train(cfg: &RunConfig, on_log: impl FnMut(&LogLine)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dataset(&cfg.paths.train_dir, cfg.model.stride)?;
    train(cfg, &data, &cfg.paths.out_dir, on_log)
}

/// Files written by one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFiles {
    pub json: PathBuf,
    pub text: PathBuf,
    pub histogram: PathBuf,
    pub matches: PathBuf,
}

fn write_eval(report: &EvalReport, log: &[crate::evalkit::ImageResult], out_dir: &Path) -> Result<EvalFiles> {
    fs::create_dir_all(out_dir)?;
    let s = report.setting;
    let files = EvalFiles {
        json: out_dir.join(format!("eval_{s}.json")),
        text: out_dir.join(format!("eval_{s}.txt")),
        histogram: out_dir.join(format!("slots_{s}.csv")),
        matches: out_dir.join(format!("matches_{s}.jsonl")),
    };
    fs::write(&files.json, report.to_json()?)?;
    fs::write(&files.text, report.render_text())?;
    fs::write(&files.histogram, report.histogram_csv())?;
    let mut m = BufWriter::new(File::create(&files.matches)?);
    for r in log {
        serde_json::to_writer(&mut m, r)?;
        m.write_all(b"\n")?;
    }
    m.flush()?;
    Ok(files)
}

/// Evaluates `checkpoint` on the held-out set in one setting.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    setting: TaskSetting,
    ks: &[usize],
    out_dir: &Path,
) -> Result<(EvalReport, EvalFiles)> {
    cfg.validate()?;
    let model = load_checkpoint_for(checkpoint, &cfg.model)?;
    let data = load_dataset(&cfg.paths.eval_dir, cfg.model.stride)?;
    let (report, log) = run_setting(&model, &data, setting, ks, &cfg.decode, threads_from_env()?)?;
    let files = write_eval(&report, &log, out_dir)?;
    Ok((report, files))
}

/// Evaluates all three settings and writes a combined summary.
pub fn cmd_report(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let model = load_checkpoint_for(checkpoint, &cfg.model)?;
    let data = load_dataset(&cfg.paths.eval_dir, cfg.model.stride)?;
    let threads = threads_from_env()?;
    let mut reports = Vec::new();
    for setting in TaskSetting::ALL {
        let (report, log) = run_setting(&model, &data, setting, &cfg.ks, &cfg.decode, threads)?;
        write_eval(&report, &log, out_dir)?;
        reports.push(report);
    }
    fs::write(out_dir.join("summary.txt"), render_summary(&reports))?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    Ok(reports)
}

pub fn render_summary(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<10}", "setting");
    let ks = reports.first().map(|r| r.ks.clone()).unwrap_or_default();
    for k in &ks {
        s += &format!("{:>10}", format!("R@{k}"));
    }
    s += &format!("{:>10}\n", "linking");
    for r in reports {
        s += &format!("{:<10}", r.setting.to_string());
        for k in &ks {
            s += &format!("{:>10}", r.recall(*k).map_or("-".into(), |v| format!("{v:.4}")));
        }
        s += &format!("{:>10}\n", r.linking.rate.map_or("-".into(), |v| format!("{v:.4}")));
    }
    s
}

/// Decodes one image with no prior input; writes `<stem>.graph.json` and an
/// annotated `<stem>.decoded.ppm` (boxes, plus a marker at the midpoint of
/// each edge's resolved endpoints).
pub fn cmd_decode(cfg: &RunConfig, checkpoint: &Path, image_path: &Path, out_dir: &Path) -> Result<PredictedGraph> {
    cfg.validate()?;
    let model: GraphModel<f32> = load_checkpoint_for(checkpoint, &cfg.model)?;
    let image = RasterImage::read_ppm(BufReader::new(File::open(image_path)?))?;
    if (image.width, image.height) != (cfg.model.input_size, cfg.model.input_size) {
        return Err(Error::shape(format!(
            "image is {}x{}, model expects {}x{}",
            image.width, image.height, cfg.model.input_size, cfg.model.input_size
        )));
    }
    let outputs = model.forward(&image.to_tensor(), None)?;
    let graph = decode(&outputs, &cfg.model, &cfg.decode)?;

    fs::create_dir_all(out_dir)?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    fs::write(out_dir.join(format!("{stem}.graph.json")), graph.to_json()?)?;
    let canvas = annotate(&image, &graph);
    canvas.write_ppm(BufWriter::new(File::create(out_dir.join(format!("{stem}.decoded.ppm")))?))?;
    Ok(graph)
}

pub fn annotate(image: &RasterImage, graph: &PredictedGraph) -> RasterImage {
    let mut canvas = image.clone();
    for v in &graph.vertices {
        canvas.draw_box(&v.bbox, [1.0, 1.0, 0.0]);
    }
    for e in &graph.edges {
        let (sx, sy) = graph.vertices[e.resolved_source].bbox.center();
        let (tx, ty) = graph.vertices[e.resolved_target].bbox.center();
        canvas.draw_marker((sx + tx) / 2.0, (sy + ty) / 2.0, 1, [1.0, 0.0, 1.0]);
    }
    canvas
}
