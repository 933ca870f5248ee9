use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::outputs::{ModelOutputs, ObjectSlotMaps, RelationSlotMaps};
use crate::diffcore::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Whether parameters are recorded for differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
}

/// Per-pixel fully connected head with one hidden layer, applied as two
/// pointwise convolutions.
#[derive(Clone, Copy, Debug)]
struct Mlp {
    hidden: Conv,
    out: Conv,
}

#[derive(Clone, Copy, Debug)]
struct Level {
    skip: Conv,
    down: Conv,
    inner: Option<Conv>,
    up: Conv,
}

#[derive(Clone, Copy, Debug)]
struct ObjectHeads {
    class: Mlp,
    anchor: Mlp,
    offsets: Mlp,
    embedding: Mlp,
    score: Mlp,
}

#[derive(Clone, Copy, Debug)]
struct RelationHeads {
    predicate: Mlp,
    source: Mlp,
    target: Mlp,
    score: Mlp,
}

/// Slot outputs at `n` pixels, one row per pixel.
#[derive(Clone, Copy, Debug)]
pub struct ObjectSlotVars {
    /// `[n, C]`
    pub class_logits: Var,
    /// `[n, A]`
    pub anchor_logits: Var,
    /// `[n, 4]`
    pub box_offsets: Var,
    /// `[n, d]`
    pub embedding: Var,
    /// `[n]`, in (0, 1)
    pub score: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct RelationSlotVars {
    /// `[n, P]`
    pub predicate_logits: Var,
    /// `[n, d]`
    pub source_embedding: Var,
    /// `[n, d]`
    pub target_embedding: Var,
    /// `[n]`, in (0, 1)
    pub score: Var,
}

fn row<T: Real>(tape: &Tape<T>, x: Var, i: usize) -> Result<Var> {
    let s = tape.shape(x);
    let k: usize = s[1..].iter().product();
    let indices: Vec<usize> = (i * k..(i + 1) * k).collect();
    tape.select(x, &indices, &[k])
}

impl ObjectSlotVars {
    /// The predictions at the `i`-th pixel, as flat vectors.
    pub fn row<T: Real>(&self, tape: &Tape<T>, i: usize) -> Result<ObjectSlotVars> {
        Ok(ObjectSlotVars {
            class_logits: row(tape, self.class_logits, i)?,
            anchor_logits: row(tape, self.anchor_logits, i)?,
            box_offsets: row(tape, self.box_offsets, i)?,
            embedding: row(tape, self.embedding, i)?,
            score: row(tape, self.score, i)?,
        })
    }
}

impl RelationSlotVars {
    pub fn row<T: Real>(&self, tape: &Tape<T>, i: usize) -> Result<RelationSlotVars> {
        Ok(RelationSlotVars {
            predicate_logits: row(tape, self.predicate_logits, i)?,
            source_embedding: row(tape, self.source_embedding, i)?,
            target_embedding: row(tape, self.target_embedding, i)?,
            score: row(tape, self.score, i)?,
        })
    }
}

/// Output of the convolutional trunk.
#[derive(Clone, Copy, Debug)]
pub struct Trunk {
    /// `[f, h, w]`
    pub features: Var,
    /// `[1, h, w]`
    pub vertex_heatmap: Var,
    /// `[1, h, w]`
    pub edge_heatmap: Var,
}

/// Hourglass encoder-decoder with heatmap and per-slot property heads.
#[derive(Clone, Debug)]
pub struct GraphModel<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    stem: Vec<Conv>,
    prior: Vec<Conv>,
    levels: Vec<Level>,
    feature: Conv,
    vertex_heat: Conv,
    edge_heat: Conv,
    objects: Vec<ObjectHeads>,
    relations: Vec<RelationHeads>,
}

const HEATMAP_BIAS: f64 = -2.0;
const SCORE_BIAS: f64 = -2.0;

#[derive(Clone, Copy)]
enum Init {
    /// He-normal, for layers followed by relu.
    Relu,
    /// LeCun-normal, for linear outputs.
    Linear,
    Zero,
}

struct Builder<'a, T: Real> {
    params: ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: Option<f64>,
        init: Init,
    ) -> Result<Conv> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let shape = [c_out, c_in, kernel, kernel];
        let w = match init {
            Init::Relu => Tensor::randn(&shape, (2.0 / fan_in).sqrt(), self.rng),
            Init::Linear => Tensor::randn(&shape, (1.0 / fan_in).sqrt(), self.rng),
            Init::Zero => Tensor::zeros(&shape),
        };
        let weight = self.params.insert(format!("{name}.weight"), w)?;
        let bias = match bias {
            Some(b) => Some(
                self.params
                    .insert(format!("{name}.bias"), Tensor::full(&[c_out], T::from_f64_lossy(b)))?,
            ),
            None => None,
        };
        Ok(Conv {
            weight,
            bias,
            stride,
        })
    }

    fn mlp(&mut self, name: &str, f: usize, out: usize, out_bias: f64) -> Result<Mlp> {
        Ok(Mlp {
            hidden: self.conv(&format!("{name}.hidden"), f, f, 1, 1, Some(0.0), Init::Relu)?,
            out: self.conv(&format!("{name}.out"), f, out, 1, 1, Some(out_bias), Init::Linear)?,
        })
    }
}

impl<T: Real> GraphModel<T> {
    /// Builds a freshly initialized model; deterministic in `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::new(),
            rng: &mut rng,
        };
        let f = config.features;
        let c1 = config.stem_channels();
        let stem = vec![
            b.conv("stem.0", 3, c1, 3, 2, Some(0.0), Init::Relu)?,
            b.conv("stem.1", c1, f, 3, 2, Some(0.0), Init::Relu)?,
            b.conv("stem.2", f, f, 3, 1, Some(0.0), Init::Relu)?,
        ];
        // Bias-free so that an all-zero prior contributes exactly nothing;
        // the zero-initialized last layer makes the path a no-op at build.
        let prior = if config.prior_input_channels > 0 {
            vec![
                b.conv("prior.0", config.prior_input_channels, f, 1, 1, None, Init::Relu)?,
                b.conv("prior.1", f, f, 1, 1, None, Init::Zero)?,
            ]
        } else {
            Vec::new()
        };
        let mut levels = Vec::with_capacity(config.hourglass_depth);
        for l in 0..config.hourglass_depth {
            let innermost = l + 1 == config.hourglass_depth;
            levels.push(Level {
                skip: b.conv(&format!("hourglass.{l}.skip"), f, f, 3, 1, Some(0.0), Init::Relu)?,
                down: b.conv(&format!("hourglass.{l}.down"), f, f, 3, 1, Some(0.0), Init::Relu)?,
                inner: if innermost {
                    Some(b.conv(&format!("hourglass.{l}.inner"), f, f, 3, 1, Some(0.0), Init::Relu)?)
                } else {
                    None
                },
                up: b.conv(&format!("hourglass.{l}.up"), f, f, 3, 1, Some(0.0), Init::Relu)?,
            });
        }
        let feature = b.conv("feature", f, f, 1, 1, Some(0.0), Init::Relu)?;
        let vertex_heat = b.conv("heatmap.vertex", f, 1, 1, 1, Some(HEATMAP_BIAS), Init::Linear)?;
        let edge_heat = b.conv("heatmap.edge", f, 1, 1, 1, Some(HEATMAP_BIAS), Init::Linear)?;
        let mut objects = Vec::with_capacity(config.object_slots);
        for j in 0..config.object_slots {
            let p = format!("object.{j}");
            objects.push(ObjectHeads {
                class: b.mlp(&format!("{p}.class"), f, config.categories, 0.0)?,
                anchor: b.mlp(&format!("{p}.anchor"), f, config.anchor_count(), 0.0)?,
                offsets: b.mlp(&format!("{p}.offsets"), f, 4, 0.0)?,
                embedding: b.mlp(&format!("{p}.embedding"), f, config.embedding_dim, 0.0)?,
                score: b.mlp(&format!("{p}.score"), f, 1, SCORE_BIAS)?,
            });
        }
        let mut relations = Vec::with_capacity(config.relation_slots);
        for k in 0..config.relation_slots {
            let p = format!("relation.{k}");
            relations.push(RelationHeads {
                predicate: b.mlp(&format!("{p}.predicate"), f, config.predicates, 0.0)?,
                source: b.mlp(&format!("{p}.source"), f, config.embedding_dim, 0.0)?,
                target: b.mlp(&format!("{p}.target"), f, config.embedding_dim, 0.0)?,
                score: b.mlp(&format!("{p}.score"), f, 1, SCORE_BIAS)?,
            });
        }
        Ok(GraphModel {
            config: config.clone(),
            params: b.params,
            stem,
            prior,
            levels,
            feature,
            vertex_heat,
            edge_heat,
            objects,
            relations,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn bind(&self, tape: &Tape<T>, id: ParamId, mode: Mode) -> Var {
        match mode {
            Mode::Train => tape.param(&self.params, id),
            Mode::Infer => tape.frozen_param(&self.params, id),
        }
    }

    fn conv(&self, tape: &Tape<T>, conv: &Conv, x: Var, mode: Mode) -> Result<Var> {
        let w = self.bind(tape, conv.weight, mode);
        let b = conv.bias.map(|b| self.bind(tape, b, mode));
        tape.conv2d(x, w, b, conv.stride)
    }

    fn conv_relu(&self, tape: &Tape<T>, conv: &Conv, x: Var, mode: Mode) -> Result<Var> {
        Ok(tape.relu(self.conv(tape, conv, x, mode)?))
    }

    /// Applies a head to `[f, a, b]` features, returning `[a * b, out]`.
    fn mlp(&self, tape: &Tape<T>, mlp: &Mlp, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv_relu(tape, &mlp.hidden, x, mode)?;
        let o = self.conv(tape, &mlp.out, h, mode)?;
        let s = tape.shape(o);
        let flat = tape.reshape(o, &[s[0], s[1] * s[2]])?;
        tape.transpose(flat)
    }

    fn hourglass(&self, tape: &Tape<T>, level: usize, x: Var, mode: Mode) -> Result<Var> {
        let l = &self.levels[level];
        let skip = self.conv_relu(tape, &l.skip, x, mode)?;
        let low = tape.maxpool2(x)?;
        let low = self.conv_relu(tape, &l.down, low, mode)?;
        let low = match &l.inner {
            Some(inner) => self.conv_relu(tape, inner, low, mode)?,
            None => self.hourglass(tape, level + 1, low, mode)?,
        };
        let low = self.conv_relu(tape, &l.up, low, mode)?;
        let up = tape.upsample2(low)?;
        tape.add(skip, up)
    }

    /// Runs the convolutional trunk on a `[3, H, W]` image and an optional
    /// `[prior_input_channels, h, w]` prior.
    pub fn trunk(&self, tape: &Tape<T>, image: Var, prior: Option<Var>, mode: Mode) -> Result<Trunk> {
        let cfg = &self.config;
        let s = tape.shape(image);
        if s != [3, cfg.input_size, cfg.input_size] {
            return Err(Error::shape(format!(
                "image {s:?}, expected [3, {0}, {0}]",
                cfg.input_size
            )));
        }
        let mut x = image;
        for conv in &self.stem {
            x = self.conv_relu(tape, conv, x, mode)?;
        }
        if let Some(prior) = prior {
            let ps = tape.shape(prior);
            let expected = [cfg.prior_input_channels, cfg.output_size, cfg.output_size];
            if self.prior.is_empty() || ps != expected {
                return Err(Error::shape(format!("prior {ps:?}, expected {expected:?}")));
            }
            let p = self.conv_relu(tape, &self.prior[0], prior, mode)?;
            let p = self.conv(tape, &self.prior[1], p, mode)?;
            x = tape.add(x, p)?;
        }
        let x = self.hourglass(tape, 0, x, mode)?;
        let features = self.conv_relu(tape, &self.feature, x, mode)?;
        let vertex_heatmap = tape.sigmoid(self.conv(tape, &self.vertex_heat, features, mode)?);
        let edge_heatmap = tape.sigmoid(self.conv(tape, &self.edge_heat, features, mode)?);
        Ok(Trunk {
            features,
            vertex_heatmap,
            edge_heatmap,
        })
    }

    /// Object-slot predictions for `[f, a, b]` features (`a * b` pixels).
    pub fn object_slots(&self, tape: &Tape<T>, features: Var, mode: Mode) -> Result<Vec<ObjectSlotVars>> {
        self.objects
            .iter()
            .map(|h| {
                let score = self.mlp(tape, &h.score, features, mode)?;
                let n = tape.shape(score)[0];
                Ok(ObjectSlotVars {
                    class_logits: self.mlp(tape, &h.class, features, mode)?,
                    anchor_logits: self.mlp(tape, &h.anchor, features, mode)?,
                    box_offsets: self.mlp(tape, &h.offsets, features, mode)?,
                    embedding: self.mlp(tape, &h.embedding, features, mode)?,
                    score: tape.reshape(tape.sigmoid(score), &[n])?,
                })
            })
            .collect()
    }

    /// Relation-slot predictions for `[f, a, b]` features.
    pub fn relation_slots(&self, tape: &Tape<T>, features: Var, mode: Mode) -> Result<Vec<RelationSlotVars>> {
        self.relations
            .iter()
            .map(|h| {
                let score = self.mlp(tape, &h.score, features, mode)?;
                let n = tape.shape(score)[0];
                Ok(RelationSlotVars {
                    predicate_logits: self.mlp(tape, &h.predicate, features, mode)?,
                    source_embedding: self.mlp(tape, &h.source, features, mode)?,
                    target_embedding: self.mlp(tape, &h.target, features, mode)?,
                    score: tape.reshape(tape.sigmoid(score), &[n])?,
                })
            })
            .collect()
    }

    /// Full-resolution inference.
    pub fn forward(&self, image: &Tensor<T>, prior: Option<&Tensor<T>>) -> Result<ModelOutputs<T>> {
        let tape = Tape::new();
        let img = tape.constant(image.clone());
        let prior = prior.map(|p| tape.constant(p.clone()));
        let trunk = self.trunk(&tape, img, prior, Mode::Infer)?;
        let (h, w) = (self.config.output_size, self.config.output_size);
        let map = |v: Var, last: Option<usize>| -> Result<Tensor<T>> {
            let t = tape.value(v);
            match last {
                Some(c) => t.reshape(&[h, w, c]),
                None => t.reshape(&[h, w]),
            }
        };
        let objects = self
            .object_slots(&tape, trunk.features, Mode::Infer)?
            .into_iter()
            .map(|s| {
                Ok(ObjectSlotMaps {
                    class_logits: map(s.class_logits, Some(self.config.categories))?,
                    anchor_logits: map(s.anchor_logits, Some(self.config.anchor_count()))?,
                    box_offsets: map(s.box_offsets, Some(4))?,
                    embedding: map(s.embedding, Some(self.config.embedding_dim))?,
                    score: map(s.score, None)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let relations = self
            .relation_slots(&tape, trunk.features, Mode::Infer)?
            .into_iter()
            .map(|s| {
                Ok(RelationSlotMaps {
                    predicate_logits: map(s.predicate_logits, Some(self.config.predicates))?,
                    source_embedding: map(s.source_embedding, Some(self.config.embedding_dim))?,
                    target_embedding: map(s.target_embedding, Some(self.config.embedding_dim))?,
                    score: map(s.score, None)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelOutputs {
            vertex_heatmap: map(trunk.vertex_heatmap, None)?,
            edge_heatmap: map(trunk.edge_heatmap, None)?,
            objects,
            relations,
        })
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, value) in values {
            let id = self
                .params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            self.params
                .set_value(id, value)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
