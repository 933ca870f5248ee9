use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{Tape, Tensor, Var};

fn small() -> ModelConfig {
    ModelConfig {
        input_size: 32,
        output_size: 8,
        features: 8,
        hourglass_depth: 2,
        ..ModelConfig::default()
    }
}

fn random_image(cfg: &ModelConfig, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(&[3, cfg.input_size, cfg.input_size], 0.0, 1.0, &mut rng)
}

/// Parameter count derived by hand from the architecture.
fn closed_form_count(c: &ModelConfig) -> usize {
    let f = c.features;
    let c1 = c.stem_channels();
    let conv3 = |i: usize, o: usize| 9 * i * o + o;
    let conv1 = |i: usize, o: usize| i * o + o;
    let mlp = |o: usize| conv1(f, f) + conv1(f, o);
    let stem = conv3(3, c1) + conv3(c1, f) + conv3(f, f);
    let prior = if c.prior_input_channels > 0 {
        c.prior_input_channels * f + f * f
    } else {
        0
    };
    let hourglass = 3 * c.hourglass_depth * conv3(f, f) + conv3(f, f);
    let trunk_heads = conv1(f, f) + 2 * conv1(f, 1);
    let (d, a) = (c.embedding_dim, c.anchor_count());
    let object = mlp(c.categories) + mlp(a) + mlp(4) + mlp(d) + mlp(1);
    let relation = mlp(c.predicates) + 2 * mlp(d) + mlp(1);
    stem + prior + hourglass + trunk_heads + c.object_slots * object + c.relation_slots * relation
}

#[test]
fn builds_are_deterministic_in_the_seed() {
    let a = GraphModel::<f32>::build(&small(), 5).unwrap();
    let b = GraphModel::<f32>::build(&small(), 5).unwrap();
    let c = GraphModel::<f32>::build(&small(), 6).unwrap();
    let values = |m: &GraphModel| m.params().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}

#[test]
fn parameter_count_matches_closed_form() {
    for cfg in [ModelConfig::default(), small(), ModelConfig { prior_input_channels: 0, ..small() }] {
        let m = GraphModel::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(m.params().numel(), closed_form_count(&cfg));
    }
}

#[test]
fn object_head_parameters_scale_linearly_with_slots() {
    let count = |s_o| {
        let m = GraphModel::<f32>::build(&ModelConfig { object_slots: s_o, ..small() }, 0).unwrap();
        m.params()
            .iter()
            .filter(|(_, p)| p.name.starts_with("object."))
            .map(|(_, p)| p.value.numel())
            .sum::<usize>()
    };
    assert_eq!(count(3), 3 * count(1));
}

#[test]
fn zero_image_gives_finite_outputs_in_range() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 1).unwrap();
    let out = m.forward(&Tensor::zeros(&[3, 32, 32]), None).unwrap();
    assert!(out.all_finite());
    for v in out.vertex_heatmap.data().iter().chain(out.edge_heatmap.data()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 1).unwrap();
    let img = random_image(&cfg, 2);
    assert_eq!(m.forward(&img, None).unwrap(), m.forward(&img, None).unwrap());
}

#[test]
fn zero_prior_matches_no_prior_at_initialization() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 1).unwrap();
    let img = random_image(&cfg, 3);
    let prior = Tensor::zeros(&[cfg.prior_input_channels, 8, 8]);
    assert_eq!(m.forward(&img, Some(&prior)).unwrap(), m.forward(&img, None).unwrap());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 1).unwrap();
    assert!(m.forward(&Tensor::zeros(&[3, 16, 16]), None).is_err());
    assert!(m.forward(&Tensor::zeros(&[1, 32, 32]), None).is_err());
    let bad_prior = Tensor::zeros(&[4, 8, 8]);
    assert!(m.forward(&Tensor::zeros(&[3, 32, 32]), Some(&bad_prior)).is_err());
    let no_prior = GraphModel::<f32>::build(&ModelConfig { prior_input_channels: 0, ..cfg.clone() }, 1).unwrap();
    let prior = Tensor::zeros(&[cfg.prior_input_channels, 8, 8]);
    assert!(no_prior.forward(&Tensor::zeros(&[3, 32, 32]), Some(&prior)).is_err());
}

#[test]
fn extraction_matches_slicing_and_normalizes() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 4).unwrap();
    let out = m.forward(&random_image(&cfg, 4), None).unwrap();
    let (x, y) = (5, 2);
    let b = out.extract_slot_predictions((x, y)).unwrap();
    assert_eq!(b.objects.len(), cfg.object_slots);
    assert_eq!(b.relations.len(), cfg.relation_slots);
    for (j, o) in b.objects.iter().enumerate() {
        assert!((o.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((o.anchor_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let maps = &out.objects[j];
        assert_eq!(o.score, maps.score.at(&[y, x]) as f64);
        for k in 0..cfg.embedding_dim {
            assert_eq!(o.embedding[k], maps.embedding.at(&[y, x, k]) as f64);
        }
        for k in 0..4 {
            assert_eq!(o.box_offsets[k], maps.box_offsets.at(&[y, x, k]) as f64);
        }
    }
    for r in &b.relations {
        assert!((r.predicate_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(out.extract_slot_predictions((8, 0)).is_err());
    assert!(out.extract_slot_predictions((0, 8)).is_err());
}

#[test]
fn constant_features_give_identical_bundles() {
    // With all trunk weights zero the feature map is constant, so every
    // pixel yields the same predictions.
    let cfg = small();
    let mut m = GraphModel::<f32>::build(&cfg, 4).unwrap();
    for p in m.params_mut().iter_mut() {
        if !(p.name.starts_with("object.") || p.name.starts_with("relation.")) {
            p.value.fill(0.0);
        }
    }
    let out = m.forward(&random_image(&cfg, 9), None).unwrap();
    assert_eq!(
        out.extract_slot_predictions((0, 0)).unwrap(),
        out.extract_slot_predictions((7, 3)).unwrap()
    );
}

fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts[0] {
        "object" | "relation" => parts[..3].join("."),
        "heatmap" => parts[..2].join("."),
        other => other.to_string(),
    }
}

/// Sum of every output weighted by fixed random coefficients.
fn probe_loss(tape: &Tape<f32>, m: &GraphModel, image: &Tensor<f32>, prior: &Tensor<f32>, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = tape.constant(image.clone());
    let pr = tape.constant(prior.clone());
    let trunk = m.trunk(tape, img, Some(pr), Mode::Train).unwrap();
    let mut terms = vec![trunk.vertex_heatmap, trunk.edge_heatmap];
    for s in m.object_slots(tape, trunk.features, Mode::Train).unwrap() {
        terms.extend([s.class_logits, s.anchor_logits, s.box_offsets, s.embedding, s.score]);
    }
    for s in m.relation_slots(tape, trunk.features, Mode::Train).unwrap() {
        terms.extend([s.predicate_logits, s.source_embedding, s.target_embedding, s.score]);
    }
    let mut total = None;
    for t in terms {
        let shape = tape.shape(t);
        let w = tape.constant(Tensor::randn(&shape, 1.0, &mut rng));
        let s = tape.sum(tape.mul(t, w).unwrap());
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s).unwrap(),
        });
    }
    total.unwrap()
}

#[test]
fn every_parameter_group_receives_gradient() {
    let cfg = small();
    let mut m = GraphModel::<f32>::build(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let prior = Tensor::rand_uniform(&[cfg.prior_input_channels, 8, 8], 0.0, 1.0, &mut rng);
    let tape = Tape::new();
    let loss = probe_loss(&tape, &m, &random_image(&cfg, 8), &prior, 9);
    tape.backward_into(loss, m.params_mut()).unwrap();
    let mut mass = std::collections::BTreeMap::<String, f64>::new();
    for (_, p) in m.params().iter() {
        let g: f64 = p.gradient.data().iter().map(|v| v.abs() as f64).sum();
        *mass.entry(group_of(&p.name)).or_default() += g;
    }
    assert!(mass.len() > 10);
    for (group, g) in mass {
        assert!(g > 0.0, "no gradient reaches {group}");
    }
}

#[test]
fn zeroing_one_slot_changes_only_that_slot() {
    let cfg = small();
    let m = GraphModel::<f32>::build(&cfg, 11).unwrap();
    let img = random_image(&cfg, 12);
    let base = m.forward(&img, None).unwrap();
    for (prefix, is_object, slot) in [("object.1.", true, 1), ("relation.4.", false, 4)] {
        let mut z = m.clone();
        for p in z.params_mut().iter_mut() {
            if p.name.starts_with(prefix) {
                p.value.fill(0.0);
            }
        }
        let out = z.forward(&img, None).unwrap();
        assert_eq!(out.vertex_heatmap, base.vertex_heatmap);
        for j in 0..cfg.object_slots {
            assert_eq!(out.objects[j] == base.objects[j], !(is_object && j == slot), "object slot {j}");
        }
        for k in 0..cfg.relation_slots {
            assert_eq!(out.relations[k] == base.relations[k], !(!is_object && k == slot), "relation slot {k}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn output_shapes_follow_the_config(
        out in prop::sample::select(vec![4usize, 8]),
        f in 2usize..9,
        d in 1usize..5,
        s_o in 1usize..4,
        s_r in 1usize..4,
        depth in 1usize..3,
        with_prior in any::<bool>(),
    ) {
        let mut cfg = ModelConfig {
            input_size: out * 4,
            output_size: out,
            features: f,
            embedding_dim: d,
            object_slots: s_o,
            relation_slots: s_r,
            hourglass_depth: depth,
            ..ModelConfig::default()
        };
        if !with_prior {
            cfg.prior_input_channels = 0;
        }
        let m = GraphModel::<f32>::build(&cfg, 0).unwrap();
        let o = m.forward(&Tensor::zeros(&[3, out * 4, out * 4]), None).unwrap();
        prop_assert_eq!(o.vertex_heatmap.shape(), &[out, out]);
        prop_assert_eq!(o.edge_heatmap.shape(), &[out, out]);
        prop_assert_eq!(o.objects.len(), s_o);
        prop_assert_eq!(o.relations.len(), s_r);
        for s in &o.objects {
            prop_assert_eq!(s.class_logits.shape(), &[out, out, cfg.categories]);
            prop_assert_eq!(s.anchor_logits.shape(), &[out, out, cfg.anchor_count()]);
            prop_assert_eq!(s.box_offsets.shape(), &[out, out, 4]);
            prop_assert_eq!(s.embedding.shape(), &[out, out, d]);
            prop_assert_eq!(s.score.shape(), &[out, out]);
        }
        for s in &o.relations {
            prop_assert_eq!(s.predicate_logits.shape(), &[out, out, cfg.predicates]);
            prop_assert_eq!(s.source_embedding.shape(), &[out, out, d]);
            prop_assert_eq!(s.target_embedding.shape(), &[out, out, d]);
            prop_assert_eq!(s.score.shape(), &[out, out]);
        }
    }
}
