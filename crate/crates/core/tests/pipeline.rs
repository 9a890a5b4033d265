//! End-to-end use of the public API without the command-line layer.

use emoseg::metrics::{aggregate, score_frame};
use emoseg::model::{
    decode_checkpoint, encode_checkpoint, forward, infer, train_step, ClipTargets, ModelConfig, ModelParams,
    TrainHyper, TrainSample,
};
use emoseg::supervision::{build_clip_supervision, downsample_target, SupervisionSource};
use emoseg::synthscene::{generate, SceneConfig};
use emoseg::tensor::{read_emot_from, write_emot_to, AnyTensor};
use emoseg::Tensor;

fn small_scene() -> SceneConfig {
    SceneConfig {
        height: 32,
        width: 32,
        object_min: 6,
        object_max: 14,
        ..SceneConfig::default()
    }
}

fn training_sample(cfg: &ModelConfig, seed: u64) -> TrainSample<f32> {
    let s = generate(&small_scene(), seed).unwrap();
    let maps = build_clip_supervision(SupervisionSource::EventGtDilated, &s.masks, &s.events, None).unwrap();
    let (fh, fw) = cfg.feature_size();
    TrainSample {
        clip: s.frames.clone(),
        targets: ClipTargets {
            masks: s.masks.iter().map(|m| m.to_tensor()).collect(),
            st_targets: maps.iter().map(|m| downsample_target(m, fh, fw).unwrap()).collect(),
        },
    }
}

#[test]
fn generate_train_infer_score() {
    let cfg = ModelConfig::new(32, 32, 8);
    let mut params = ModelParams::<f32>::init(&cfg).unwrap();
    let batch: Vec<_> = (0..2).map(|k| training_sample(&cfg, k)).collect();
    let hyper = TrainHyper::default();
    let first = train_step(&mut params, &batch, &hyper).unwrap();
    let mut last = first;
    for _ in 0..30 {
        last = train_step(&mut params, &batch, &hyper).unwrap();
    }
    assert!(last.total < first.total, "{first:?} -> {last:?}");
    assert!(first.st > 0.0);

    let scene = generate(&small_scene(), 100).unwrap();
    let pred = infer(&scene.frames, &params, false).unwrap();
    assert_eq!(pred.len(), scene.len());
    let scores: Vec<_> = pred.iter().zip(&scene.masks).map(|(p, g)| score_frame(p, g).unwrap()).collect();
    let r = aggregate(&scores).unwrap();
    assert!((0.0..=100.0).contains(&r.j_and_f));
}

#[test]
fn checkpoint_bytes_roundtrip_and_predict_identically() {
    let cfg = ModelConfig::new(32, 32, 8);
    let mut params = ModelParams::<f32>::init(&cfg).unwrap();
    train_step(&mut params, &[training_sample(&cfg, 3)], &TrainHyper::default()).unwrap();
    let bytes = encode_checkpoint(&params);
    let back = decode_checkpoint::<f32>(&bytes, std::path::Path::new("mem")).unwrap();
    assert_eq!(back, params);
    assert_eq!(encode_checkpoint(&back), bytes);
    let clip = generate(&small_scene(), 4).unwrap().frames;
    assert_eq!(forward(&clip, &back, true).unwrap().logits, forward(&clip, &params, true).unwrap().logits);
}

#[test]
fn emot_roundtrip_through_a_buffer() {
    let t = Tensor::<f64>::new(vec![2, 3], vec![0.5, -1.0, 2.25, 1e-300, f64::MAX, 0.0]).unwrap();
    let mut buf = Vec::new();
    write_emot_to(&mut buf, &t.clone().into()).unwrap();
    assert_eq!(&buf[..4], b"EMOT");
    let back = read_emot_from(&mut buf.as_slice(), std::path::Path::new("mem")).unwrap();
    assert_eq!(back, AnyTensor::from(t));
}
