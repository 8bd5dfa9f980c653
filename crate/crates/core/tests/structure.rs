mod common;

use common::{brute_patch_count, inputs, micro_config, oracle_param_count};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repnet::config::ModelConfig;
use repnet::data::Frequency;
use repnet::experiments::{sample_configs, SearchSpace};
use repnet::nn::{Ctx, Mode};
use repnet::params::Partition;
use repnet::representation::patch_count;
use repnet::build_model;
use repnet_autograd::{Tape, Tensor};

#[test]
fn zeroed_memory_and_projection_give_bias_forecast() {
    let mut cfg = micro_config();
    cfg.memory.n = 3;
    cfg.projection.r = 0;
    cfg.instance_norm = false;
    let mut model = build_model(&cfg, 2, Frequency::Hourly).unwrap();
    for id in model.store.ids().collect::<Vec<_>>() {
        if matches!(model.store.param(id).partition, Partition::Memory | Partition::Projection) {
            model.store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut expected = vec![0.0; cfg.h];
    for (k, br) in model.projection.branches.iter().enumerate() {
        let bias = Tensor::from_fn([cfg.h], |i| (k as f64 + 1.0) * 0.25 - i as f64 * 0.125);
        for (e, b) in expected.iter_mut().zip(bias.data()) {
            *e += b;
        }
        *model.store.get_mut(br.head.bias.unwrap()) = bias;
    }
    let (x, m) = inputs(3, cfg.t, 2, Frequency::Hourly, 4);
    let y = model.predict(&x, &m).unwrap();
    for b in 0..3 {
        for h in 0..cfg.h {
            for f in 0..2 {
                assert_eq!(y.at(&[b, h, f]), expected[h]);
            }
        }
    }
}

#[test]
fn zeroed_memory_passes_representation_through() {
    let mut cfg = micro_config();
    cfg.memory.n = 4;
    cfg.memory.joint_feature_mix = true;
    let mut model = build_model(&cfg, 2, Frequency::Hourly).unwrap();
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.param(id).partition == Partition::Memory {
            model.store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let (x, m) = inputs(2, cfg.t, 2, Frequency::Hourly, 5);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.store, Mode::Train, 9);
    let rep = model.representation.forward(&ctx, ctx.constant(x), &m).unwrap();
    let out = model.memory.forward(&ctx, rep);
    assert_eq!(*out.value(), *rep.value());
}

#[test]
fn time_embedding_is_independent_of_feature_parameters() {
    let cfg = micro_config();
    let mut model = build_model(&cfg, 2, Frequency::Hourly).unwrap();
    let (x, m) = inputs(2, cfg.t, 2, Frequency::Hourly, 6);
    let snapshot = |model: &repnet::Model| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.store, Mode::Eval, 0);
        let time: Vec<Tensor> =
            (0..2).map(|k| (*model.representation.time_embedding(&ctx, &m, k).unwrap().value()).clone()).collect();
        let xv = ctx.constant(x.clone());
        let feat: Vec<Tensor> = (0..2).map(|k| (*model.representation.feature_embedding(&ctx, xv, k).value()).clone()).collect();
        (time, feat)
    };
    let (time0, feat0) = snapshot(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bump = |model: &mut repnet::Model, part: Partition, rng: &mut ChaCha8Rng| {
        for id in model.store.ids().collect::<Vec<_>>() {
            if model.store.param(id).partition == part {
                for v in model.store.get_mut(id).data_mut() {
                    *v += rng.random_range(-1.0..1.0);
                }
            }
        }
    };
    bump(&mut model, Partition::FeatureEmbedding, &mut rng);
    let (time1, feat1) = snapshot(&model);
    for (a, b) in time0.iter().zip(&time1) {
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_ne!(feat0, feat1);
    bump(&mut model, Partition::TimeEmbedding, &mut rng);
    bump(&mut model, Partition::TemporalTable, &mut rng);
    let (time2, feat2) = snapshot(&model);
    assert_eq!(feat1, feat2);
    assert_ne!(time1, time2);

    // no gradient path from the time branch into feature parameters
    let tape = Tape::new();
    let ctx = Ctx::with_grad(&tape, &model.store, Mode::Eval, 0);
    let t = model.representation.time_embedding(&ctx, &m, 0).unwrap().sum_all();
    let grads = tape.backward(t);
    for (pi, (_, p)) in model.store.iter().enumerate() {
        if p.partition == Partition::FeatureEmbedding {
            let g = grads.get(ctx.vars()[pi]);
            assert!(g.is_none_or(|g| g.data().iter().all(|&v| v == 0.0)), "{}", p.name);
        }
    }
}

fn random_configs(n: usize, seed: u64) -> Vec<ModelConfig> {
    let mut base = micro_config();
    base.t = 96;
    base.h = 24;
    let space = SearchSpace {
        memory_depths: vec![0, 1, 2],
        lstm_depths: vec![0, 1, 2],
        extractor_counts: vec![1, 2, 3],
        ..SearchSpace::default()
    };
    sample_configs(&space, &base, n, seed).unwrap()
}

#[test]
fn parameter_count_matches_closed_form() {
    let configs = random_configs(20, 42);
    assert_eq!(configs.len(), 20);
    for (i, cfg) in configs.into_iter().enumerate() {
        let channels = 1 + i % 4;
        let model = build_model(&cfg, channels, Frequency::Hourly).unwrap();
        let pc = model.count_parameters();
        assert_eq!((pc.total, pc.without_tables), oracle_param_count(&cfg, channels, Frequency::Hourly), "config {i}: {cfg:?}");
        let by_partition: usize = [
            Partition::FeatureEmbedding,
            Partition::TimeEmbedding,
            Partition::TemporalTable,
            Partition::Memory,
            Partition::Projection,
        ]
        .iter()
        .map(|&p| model.store.count_partition(p))
        .sum();
        assert_eq!(by_partition, pc.total);
    }
}

#[test]
fn parameter_count_grows_linearly_in_memory_depth() {
    for cfg in random_configs(5, 7) {
        let count = |n: usize| {
            let mut c = cfg.clone();
            c.memory.n = n;
            c.memory.heads = 4;
            build_model(&c, 3, Frequency::Hourly).unwrap().count_parameters().total as i64
        };
        let (c0, c1, c2, c3) = (count(0), count(1), count(2), count(3));
        assert!(c1 > c0);
        assert_eq!(c2 - c1, c1 - c0);
        assert_eq!(c3 - c2, c1 - c0);
    }
}

#[test]
fn resolved_patch_counts_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.random_range(20..200);
        let cfg = repnet::config::ExtractorConfig {
            cover: [3, 5, 10, 15][rng.random_range(0..4)],
            stride: Some(rng.random_range(1..6)),
            dilation: Some(rng.random_range(1..4)),
        };
        let Ok(specs) = repnet::representation::resolve_extractors(&[cfg], t) else { continue };
        let s = specs[0];
        assert_eq!(patch_count(t, &s).unwrap(), brute_patch_count(t, s.cover, s.stride, s.dilation));
    }
}
