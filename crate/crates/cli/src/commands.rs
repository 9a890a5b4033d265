use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use emoseg::imageio::{read_pnm, write_pnm};
use emoseg::metrics::{aggregate, per_frame_csv, score_frame, FrameScore, Report};
use emoseg::model::{
    format_f64, gradcheck_joint_loss, infer, load_checkpoint, save_checkpoint, train_step_threaded, ClipTargets,
    LossBreakdown, ModelConfig, ModelParams, TrainSample,
};
use emoseg::rng::{streams, substream};
use emoseg::supervision::{build_clip_supervision, downsample_target, STMap, SupervisionSource};
use emoseg::synthscene::{
    count_frames, generate, read_events, read_flow, read_frame_dir, read_frames, read_masks, read_split,
    sequence_name, sequence_seed, write_sample, write_split,
};
use emoseg::tensor::{ops::fault, GradCheck, Tensor};
use emoseg::Error;

use crate::config::RunConfig;
use crate::fsutil::{create_dir, write, write_atomic};
use crate::{threads_from_env, version, CliError, CliResult};

/// Largest relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Directory holding the maps built for `source`.
pub fn sup_dir_name(source: SupervisionSource) -> String {
    format!("sup_{}", source.name())
}

fn frame_size(clip: &Tensor<f32>) -> (usize, usize) {
    (clip.shape()[2], clip.shape()[3])
}

fn all_sequences(data: &Path) -> CliResult<Vec<String>> {
    let mut seqs = read_split(data, "train")?;
    seqs.extend(read_split(data, "test")?);
    Ok(seqs)
}

/// Writes `count` sequences and the train/test split manifests.
pub fn cmd_gen(cfg: &RunConfig, out: &Path, seed: Option<u64>, count: usize) -> CliResult<()> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    create_dir(out)?;
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        let sample = generate(&cfg.scene, sequence_seed(cfg.seed, i as u64))?;
        let name = sequence_name(i);
        write_sample(out.join(&name), &sample)?;
        names.push(name);
    }
    let n_test = ((count as f64) * cfg.test_fraction).round() as usize;
    let (train, test) = names.split_at(count - n_test.min(count));
    write_split(out, "train", train)?;
    write_split(out, "test", test)?;
    write(&out.join("config.txt"), cfg.to_text())?;
    Ok(())
}

/// Builds one supervision map per frame of every listed sequence under
/// `<out>/sup_<source>/`. With `no_dilate` the dilated sources fall back to
/// their plain forms. Returns the directory written.
pub fn cmd_build_sup(data: &Path, source: SupervisionSource, no_dilate: bool, out: Option<&Path>) -> CliResult<PathBuf> {
    let source = if no_dilate { source.without_dilation() } else { source };
    let root = out.unwrap_or(data).join(sup_dir_name(source));
    for seq in all_sequences(data)? {
        let dir = data.join(&seq);
        let n = count_frames(dir.join("frames"))?;
        let hw = frame_size(&read_frames(&dir)?);
        let masks = read_masks(&dir, n, hw)?;
        let events = read_events(&dir, n, hw)?;
        let flow = match source {
            SupervisionSource::Flow => Some(read_flow(&dir, n, hw)?),
            _ => None,
        };
        let maps = build_clip_supervision(source, &masks, &events, flow.as_deref())?;
        let dst = root.join(&seq);
        create_dir(&dst)?;
        for (t, map) in maps.iter().enumerate() {
            write_pnm(dst.join(format!("{t:06}.pgm")), &map.to_image())?;
        }
    }
    Ok(root)
}

fn read_sup_maps(dir: &Path, n: usize, hw: (usize, usize)) -> CliResult<Vec<STMap>> {
    (0..n)
        .map(|t| {
            let path = dir.join(format!("{t:06}.pgm"));
            if !path.is_file() {
                return Err(Error::Integrity(format!(
                    "missing supervision map for frame {t:06}: {} (run build-sup first)",
                    path.display()
                ))
                .into());
            }
            let map = STMap::from_image(&read_pnm(&path, 1)?)?;
            if (map.height(), map.width()) != hw {
                return Err(Error::Integrity(format!("{}: size differs from frames", path.display())).into());
            }
            Ok(map)
        })
        .collect()
}

fn check_size(seq: &str, hw: (usize, usize), cfg: &ModelConfig) -> CliResult<()> {
    if hw != (cfg.height, cfg.width) {
        return Err(Error::ConfigMismatch(format!(
            "{seq}: frames are {}x{} but the model expects {}x{}",
            hw.1, hw.0, cfg.width, cfg.height
        ))
        .into());
    }
    Ok(())
}

fn load_training_set(data: &Path, cfg: &ModelConfig, source: SupervisionSource) -> CliResult<Vec<TrainSample<f32>>> {
    let seqs = read_split(data, "train")?;
    if seqs.is_empty() {
        return Err(CliError::Usage(format!("{}: train split is empty", data.display())));
    }
    let (fh, fw) = cfg.feature_size();
    let sup_root = data.join(sup_dir_name(source));
    seqs.iter()
        .map(|seq| {
            let dir = data.join(seq);
            let clip = read_frames(&dir)?;
            let hw = frame_size(&clip);
            check_size(seq, hw, cfg)?;
            let n = clip.shape()[0];
            let masks = read_masks(&dir, n, hw)?;
            let st_targets = if cfg.prior {
                read_sup_maps(&sup_root.join(seq), n, hw)?
                    .iter()
                    .map(|m| downsample_target(m, fh, fw))
                    .collect::<emoseg::Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(TrainSample {
                clip,
                targets: ClipTargets {
                    masks: masks.iter().map(|m| m.to_tensor()).collect(),
                    st_targets,
                },
            })
        })
        .collect()
}

/// Flags of the `train` subcommand.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub config: RunConfig,
    pub out: PathBuf,
    pub no_prior: bool,
    pub sup_source: Option<SupervisionSource>,
    pub fusion: Option<emoseg::model::Fusion>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub final_loss: LossBreakdown,
    pub checkpoint: PathBuf,
}

fn loss_row(step: usize, l: &LossBreakdown) -> String {
    format!("{step},{},{}\n", format_f64(l.sem), format_f64(l.st))
}

fn write_manifest(out: &Path, cfg: &RunConfig, started: Instant, loss: Option<&LossBreakdown>, status: &str) -> CliResult<()> {
    let mut m = String::new();
    let _ = writeln!(m, "version={}", version());
    let _ = writeln!(m, "status={status}");
    let _ = writeln!(m, "seed={}", cfg.seed);
    let _ = writeln!(m, "wall_clock_s={:.3}", started.elapsed().as_secs_f64());
    if let Some(l) = loss {
        let _ = writeln!(m, "final_L_sem={}", format_f64(l.sem));
        let _ = writeln!(m, "final_L_ST={}", format_f64(l.st));
        let _ = writeln!(m, "final_total={}", format_f64(l.total));
    }
    let _ = writeln!(m, "[config]");
    m.push_str(&cfg.to_text());
    write_atomic(&out.join("manifest.txt"), m)?;
    Ok(())
}

/// Trains for `steps` AdamW steps and writes `checkpoint.emoc`, `loss.csv`,
/// `config.txt` and `manifest.txt` into `out`. A non-finite loss stops the
/// run, keeping the last finite parameters as the checkpoint.
pub fn cmd_train(opts: &TrainOptions) -> CliResult<TrainOutput> {
    let started = Instant::now();
    let mut cfg = opts.config.clone();
    if let Some(s) = opts.sup_source {
        cfg.sup_source = s;
    }
    if let Some(f) = opts.fusion {
        cfg.fusion = f;
    }
    cfg.validate()?;
    let threads = threads_from_env()?;
    let model_cfg = cfg.model_config(!opts.no_prior);
    let samples = load_training_set(&opts.data, &model_cfg, cfg.sup_source)?;

    create_dir(&opts.out)?;
    write(&opts.out.join("config.txt"), cfg.to_text())?;
    let ckpt = opts.out.join("checkpoint.emoc");

    let mut params = ModelParams::<f32>::init(&model_cfg)?;
    let hyper = cfg.hyper();
    let mut rng = substream(cfg.seed, streams::DATA_ORDER);
    let mut order: Vec<usize> = Vec::new();
    let mut log = String::from("step,L_sem,L_ST\n");
    let mut last = LossBreakdown {
        sem: 0.0,
        st: 0.0,
        total: 0.0,
    };
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).rev().collect();
                order.shuffle(&mut rng);
            }
            batch.push(samples[order.pop().expect("refilled")].clone());
        }
        let good = params.clone();
        match train_step_threaded(&mut params, &batch, &hyper, threads) {
            Ok(l) => last = l,
            Err(Error::NonFinite { op }) => {
                save_checkpoint(&good, &ckpt)?;
                write_atomic(&opts.out.join("loss.csv"), &log)?;
                write_manifest(&opts.out, &cfg, started, Some(&last), "non-finite")?;
                return Err(CliError::Numeric(format!(
                    "non-finite value in {op} at step {step}; last good parameters saved to {}",
                    ckpt.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            log.push_str(&loss_row(step, &last));
        }
    }
    save_checkpoint(&params, &ckpt)?;
    write_atomic(&opts.out.join("loss.csv"), &log)?;
    write_manifest(&opts.out, &cfg, started, Some(&last), "ok")?;
    Ok(TrainOutput {
        final_loss: last,
        checkpoint: ckpt,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: Report,
    pub frames: Vec<(String, FrameScore)>,
}

/// Scores the checkpoint on the test split. Only frames and masks are read.
/// Writes `report.txt` and `per_frame.csv` into `report_dir`.
pub fn cmd_eval(data: &Path, ckpt: &Path, multi_scale: bool, report_dir: &Path) -> CliResult<EvalOutput> {
    let params = load_checkpoint::<f32>(ckpt)?;
    let seqs = read_split(data, "test")?;
    if seqs.is_empty() {
        return Err(CliError::Usage(format!("{}: test split is empty", data.display())));
    }
    let mut rows = Vec::new();
    for seq in &seqs {
        let dir = data.join(seq);
        let clip = read_frames(&dir)?;
        let hw = frame_size(&clip);
        check_size(seq, hw, &params.config)?;
        let gt = read_masks(&dir, clip.shape()[0], hw)?;
        let pred = infer(&clip, &params, multi_scale)?;
        for (t, (p, g)) in pred.iter().zip(&gt).enumerate() {
            rows.push((format!("{seq}/{t:06}"), score_frame(p, g)?));
        }
    }
    let scores: Vec<FrameScore> = rows.iter().map(|(_, s)| *s).collect();
    let report = aggregate(&scores)?;
    create_dir(report_dir)?;
    write_atomic(&report_dir.join("report.txt"), report.to_text())?;
    write_atomic(&report_dir.join("per_frame.csv"), per_frame_csv(&rows))?;
    Ok(EvalOutput { report, frames: rows })
}

/// Segments every frame in `frames_dir` (`%06d.ppm`) and writes
/// `%06d.pgm` masks to `out`. Returns the number of masks written.
pub fn cmd_infer(frames_dir: &Path, ckpt: &Path, multi_scale: bool, out: &Path) -> CliResult<usize> {
    let params = load_checkpoint::<f32>(ckpt)?;
    let clip = read_frame_dir(frames_dir)?;
    check_size(&frames_dir.display().to_string(), frame_size(&clip), &params.config)?;
    let masks = infer(&clip, &params, multi_scale)?;
    create_dir(out)?;
    for (t, m) in masks.iter().enumerate() {
        write_pnm(out.join(format!("{t:06}.pgm")), &m.to_image())?;
    }
    Ok(masks.len())
}

#[derive(Clone, Debug)]
pub struct GradcheckOutput {
    pub result: GradCheck,
    pub passed: bool,
}

/// Finite-difference check of the full joint loss on the float64 toy model.
/// `broken_backward` swaps in a wrong ReLU gradient as a negative control.
pub fn cmd_gradcheck(seed: u64, broken_backward: bool) -> CliResult<GradcheckOutput> {
    let result = if broken_backward {
        fault::with_broken_relu_backward(|| gradcheck_joint_loss(seed))?
    } else {
        gradcheck_joint_loss(seed)?
    };
    let passed = result.max_rel_error < GRADCHECK_TOLERANCE;
    Ok(GradcheckOutput { result, passed })
}
