use proptest::prelude::*;

use super::*;
use crate::supervision::{build_st_map, dilate, StructuringElement};

fn static_camera() -> SceneConfig {
    SceneConfig {
        n_moving: 1,
        n_static: 0,
        ego_min: 0.0,
        ego_max: 0.0,
        texture_contrast: 0.0,
        ..SceneConfig::default()
    }
}

fn no_movers() -> SceneConfig {
    SceneConfig {
        n_moving: 0,
        n_static: 2,
        ego_min: 1.5,
        ego_max: 1.5,
        ..SceneConfig::default()
    }
}

#[test]
fn flat_static_scene_events_stay_on_mover_trace() {
    let cfg = static_camera();
    for seed in 0..5 {
        let g = generate_detailed(&cfg, seed).unwrap();
        assert_eq!(g.ego, [0.0, 0.0]);
        let mut total = 0;
        for t in 0..cfg.frames {
            let trace = dilate(&g.mover_trace(t, cfg.substeps), &StructuringElement::default());
            let events = &g.sample.events[t];
            assert!(events.is_subset_of(&trace), "seed {seed} frame {t}");
            total += events.count();
        }
        assert!(total > 0, "seed {seed}: a moving object must trigger events");
    }
}

#[test]
fn ego_motion_without_movers_is_the_hard_case() {
    let cfg = no_movers();
    for seed in 0..3 {
        let s = generate(&cfg, seed).unwrap();
        let pixels = cfg.height * cfg.width;
        for t in 0..cfg.frames {
            assert!(s.masks[t].is_empty());
            assert!(s.events[t].count() * 100 >= pixels, "seed {seed} frame {t}: {}", s.events[t].count());
            let st = build_st_map(&s.masks[t], &s.events[t], &StructuringElement::default()).unwrap();
            assert!(st.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SceneConfig::default();
    assert_eq!(generate(&cfg, 42).unwrap(), generate(&cfg, 42).unwrap());
    assert_ne!(generate(&cfg, 42).unwrap(), generate(&cfg, 43).unwrap());
    assert_eq!(sequence_seed(1, 5), sequence_seed(1, 5));
    assert_ne!(sequence_seed(1, 5), sequence_seed(1, 6));
}

#[test]
fn sample_shapes_and_ranges() {
    let cfg = SceneConfig {
        frames: 3,
        height: 32,
        width: 48,
        object_max: 16,
        ..SceneConfig::default()
    };
    let g = generate_detailed(&cfg, 3).unwrap();
    let s = &g.sample;
    assert_eq!(s.frames.shape(), &[3, 3, 32, 48]);
    assert!(s.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!((s.events.len(), s.flow.len(), s.masks.len()), (3, 3, 3));
    for (t, f) in s.flow.iter().enumerate() {
        assert_eq!((f.height(), f.width()), (32, 48));
        assert_eq!((s.masks[t].height(), s.masks[t].width()), (32, 48));
    }
    for w in g.stream.events.windows(2) {
        assert!(w[0].t_us <= w[1].t_us);
    }
    assert!(g.stream.events.iter().all(|e| e.t_us < frame_time_us(cfg.frames - 1)));
}

#[test]
fn masks_cover_only_movers() {
    let cfg = SceneConfig {
        n_moving: 2,
        n_static: 3,
        ..SceneConfig::default()
    };
    for seed in 0..4 {
        let g = generate_detailed(&cfg, seed).unwrap();
        for t in 0..cfg.frames {
            let movers = BinaryMask::from_fn(64, 64, |i, j| {
                g.objects.iter().any(|o| o.moving && o.covers(t as f64, i, j))
            });
            assert!(g.sample.masks[t].is_subset_of(&movers));
        }
        for o in &g.objects {
            let rel = [o.velocity[0] - g.ego[0], o.velocity[1] - g.ego[1]];
            if o.moving {
                assert!(rel[0].hypot(rel[1]) >= cfg.mover_speed_min - 1e-12);
            } else {
                assert_eq!(rel, [0.0, 0.0]);
            }
        }
    }
}

#[test]
fn background_flow_equals_ego() {
    let cfg = SceneConfig::default();
    for seed in 0..4 {
        let g = generate_detailed(&cfg, seed).unwrap();
        let ego = [g.ego[0] as f32, g.ego[1] as f32];
        for (t, f) in g.sample.flow.iter().enumerate() {
            let d = f.tensor().data();
            for i in 0..64 {
                for j in 0..64 {
                    let k = i * 64 + j;
                    let covered = g.objects.iter().any(|o| o.covers(t as f64, i, j));
                    if !covered {
                        assert_eq!([d[k], d[64 * 64 + k]], ego);
                    } else if g.distractor_masks()[t].get(i, j) {
                        assert_eq!([d[k], d[64 * 64 + k]], ego, "distractors move with the scene");
                    }
                }
            }
        }
    }
}

#[test]
fn distractors_fire_events_but_never_reach_supervision() {
    let cfg = SceneConfig {
        n_moving: 1,
        n_static: 3,
        ego_min: 1.5,
        ego_max: 2.0,
        ..SceneConfig::default()
    };
    let d = StructuringElement::default();
    let mut distractor_events = 0;
    for seed in 0..4 {
        let g = generate_detailed(&cfg, seed).unwrap();
        let distractors = g.distractor_masks();
        for t in 0..cfg.frames {
            let s = &g.sample;
            let st = build_st_map(&s.masks[t], &s.events[t], &d).unwrap();
            let grown = dilate(&s.masks[t], &d);
            for i in 0..64 {
                for j in 0..64 {
                    if distractors[t].get(i, j) && !grown.get(i, j) {
                        assert_eq!(st.data()[i * 64 + j], 0.0);
                        distractor_events += usize::from(s.events[t].get(i, j));
                    }
                }
            }
        }
    }
    assert!(distractor_events > 0);
}

#[test]
fn roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&SceneConfig::default(), 9).unwrap();
    let seq = dir.path().join(sequence_name(0));
    write_sample(&seq, &s).unwrap();
    let back = read_sample(&seq).unwrap();
    assert_eq!(back.events, s.events);
    assert_eq!(back.masks, s.masks);
    assert_eq!(back.flow, s.flow);
    assert!(back.frames.max_abs_diff(&s.frames) <= 1.0 / 255.0);
    assert!(seq.join("frames/000001.ppm").is_file());
    assert!(seq.join("flow/000000.emot").is_file());
}

#[test]
fn missing_or_mismatched_files_are_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&SceneConfig::default(), 10).unwrap();
    let seq = dir.path().join("seq");
    write_sample(&seq, &s).unwrap();

    std::fs::remove_file(seq.join("masks/000001.pgm")).unwrap();
    let err = read_sample(&seq).unwrap_err();
    assert!(matches!(err, Error::Integrity(_)));
    let msg = err.to_string();
    assert!(msg.contains("mask") && msg.contains("000001"), "{msg}");

    write_sample(&seq, &s).unwrap();
    let small = BinaryMask::zeros(8, 8);
    crate::imageio::write_pnm(seq.join("events/000000.pgm"), &small.to_image()).unwrap();
    assert!(matches!(read_sample(&seq), Err(Error::Integrity(_))));
}

#[test]
fn split_manifests_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let names = vec![sequence_name(0), sequence_name(3)];
    write_split(dir.path(), "train", &names).unwrap();
    assert_eq!(read_split(dir.path(), "train").unwrap(), names);
    write_split(dir.path(), "test", &[]).unwrap();
    assert!(read_split(dir.path(), "test").unwrap().is_empty());
}

#[test]
fn invalid_configs() {
    let mut c = SceneConfig::default();
    c.object_max = 65;
    assert!(matches!(generate(&c, 0), Err(Error::Config(_))));
    let mut c = SceneConfig::default();
    c.mover_speed_min = 0.0;
    assert!(matches!(generate(&c, 0), Err(Error::Config(_))));
    c.n_moving = 0;
    generate(&c, 0).unwrap();
    let mut c = SceneConfig::default();
    c.substeps = 7;
    assert!(c.validate().is_err());
    assert!(c.set("nonsense", "1").is_err());
    c.set("substeps", "10").unwrap();
    c.validate().unwrap();
}

#[test]
fn config_pairs_roundtrip_through_set() {
    let mut c = SceneConfig::default();
    c.theta = 0.2;
    c.n_static = 5;
    let mut back = SceneConfig {
        height: 1,
        ..SceneConfig::default()
    };
    for (k, v) in c.to_pairs() {
        back.set(k, &v).unwrap();
    }
    assert_eq!(back, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lower_threshold_never_removes_event_pixels(seed in any::<u64>(), lo in 0.05f64..0.3, gap in 0.0f64..0.3) {
        let mut a = SceneConfig { height: 32, width: 32, object_min: 6, object_max: 14, ..SceneConfig::default() };
        a.theta = lo;
        let mut b = a.clone();
        b.theta = lo + gap;
        let sa = generate(&a, seed).unwrap();
        let sb = generate(&b, seed).unwrap();
        prop_assert_eq!(&sa.masks, &sb.masks);
        for t in 0..a.frames {
            prop_assert!(sb.events[t].is_subset_of(&sa.events[t]));
        }
    }
}
