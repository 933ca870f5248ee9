//! Scene JSON documents and dataset directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{ground_vertex, BBox, EdgeGT, SceneGraph, VertexGT};
use super::render::RasterImage;
use super::world::{generate_scene, WorldConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub tgt: usize,
    pub predicate: usize,
}

/// On-disk scene document. Groundings are derived on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl SceneRecord {
    pub fn from_graph(graph: &SceneGraph, image: impl Into<String>) -> Self {
        SceneRecord {
            image: image.into(),
            width: graph.image_size.0,
            height: graph.image_size.1,
            vertices: graph
                .vertices
                .iter()
                .map(|v| VertexRecord {
                    category: v.category,
                    bbox: v.bbox,
                })
                .collect(),
            edges: graph
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    src: e.source,
                    tgt: e.target,
                    predicate: e.predicate,
                })
                .collect(),
        }
    }

    pub fn to_graph(&self, stride: usize) -> Result<SceneGraph> {
        if stride == 0 || self.width % stride != 0 || self.height % stride != 0 {
            return Err(Error::format("scene", "canvas is not a multiple of the stride"));
        }
        let output = (self.width / stride, self.height / stride);
        let vertices: Vec<VertexGT> = self
            .vertices
            .iter()
            .map(|v| VertexGT {
                category: v.category,
                bbox: v.bbox,
                grounding: ground_vertex(&v.bbox, stride, output),
            })
            .collect();
        if let Some(e) = self
            .edges
            .iter()
            .find(|e| e.src >= vertices.len() || e.tgt >= vertices.len())
        {
            return Err(Error::format(
                "scene",
                format!("edge {}->{} references a missing vertex", e.src, e.tgt),
            ));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeGT::between(&vertices, e.src, e.tgt, e.predicate))
            .collect();
        let graph = SceneGraph {
            vertices,
            edges,
            image_size: (self.width, self.height),
        };
        graph.validate()?;
        Ok(graph)
    }
}

/// A loaded image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: RasterImage,
    pub graph: SceneGraph,
}

/// Seed of the `index`-th scene of a dataset drawn with `base` seed
/// (splitmix64 finalizer, so neighbouring base seeds do not share scenes).
pub fn scene_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n` scenes in memory.
pub fn generate_samples(n: usize, base_seed: u64, cfg: &WorldConfig) -> Result<Vec<Sample>> {
    (0..n)
        .map(|i| {
            let (image, graph) = generate_scene(scene_seed(base_seed, i as u64), cfg)?;
            Ok(Sample {
                name: format!("scene_{i:05}"),
                image,
                graph,
            })
        })
        .collect()
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let image_file = format!("{}.ppm", sample.name);
    sample
        .image
        .write_ppm(BufWriter::new(File::create(dir.join(&image_file))?))?;
    let record = SceneRecord::from_graph(&sample.graph, image_file);
    let json = serde_json::to_string_pretty(&record)?;
    fs::write(dir.join(format!("{}.json", sample.name)), json + "\n")?;
    Ok(())
}

/// Writes `n` generated scenes as `scene_NNNNN.{json,ppm}` under `dir`.
pub fn generate_dataset(dir: &Path, n: usize, base_seed: u64, cfg: &WorldConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    for i in 0..n {
        let (image, graph) = generate_scene(scene_seed(base_seed, i as u64), cfg)?;
        write_sample(
            dir,
            &Sample {
                name: format!("scene_{i:05}"),
                image,
                graph,
            },
        )?;
    }
    Ok(())
}

pub fn load_sample(json_path: &Path, stride: usize) -> Result<Sample> {
    let record: SceneRecord = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let image = RasterImage::read_ppm(BufReader::new(File::open(dir.join(&record.image))?))?;
    if (image.width, image.height) != (record.width, record.height) {
        return Err(Error::format(
            "scene",
            format!("{} does not match its declared size", record.image),
        ));
    }
    let name = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample {
        name,
        image,
        graph: record.to_graph(stride)?,
    })
}

/// Loads every `*.json` scene in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path, stride: usize) -> Result<Vec<Sample>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no scenes found in {}", dir.display())));
    }
    paths.iter().map(|p| load_sample(p, stride)).collect()
}
