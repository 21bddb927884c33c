use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{schedule_lr, OptimizerKind, Phase, TrainConfig};
use crate::data::{self, Checkpoint, Dataset};
use crate::decoder::{DecoderKind, PretrainModel};
use crate::error::{Error, Result};
use crate::loss::{self, TargetKind};
use crate::masking::{apply_mask, plan_mask, ratio_at};
use crate::metrics::SegReport;
use crate::model::{images_to_tensor, tensor_sample, transfer_encoder, EncoderSpec, SegModel};
use crate::nn::{Adam, Graph, Optimizer, ParamStore, Sgd, Tensor};
use crate::tensor::ImageTensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Bookkeeping of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub phase: Phase,
    /// One entry per executed optimizer step.
    pub losses: Vec<f64>,
    pub epochs: usize,
    pub skipped_samples: usize,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_s: f64,
    pub report: Option<SegReport>,
}

impl RunRecord {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }
}

/// Deterministic per-(epoch, index) stream seed.
pub fn mix_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407) ^ (index as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn make_optimizer(cfg: &TrainConfig) -> Box<dyn Optimizer> {
    let o = &cfg.optimizer;
    match o.kind {
        OptimizerKind::Adam => Box::new(Adam::new(o.weight_decay as f32)),
        OptimizerKind::Sgd => Box::new(Sgd::new(o.momentum as f32, o.weight_decay as f32)),
    }
}

/// Steps per epoch and the epoch count covering the step budget.
fn plan_steps(cfg: &TrainConfig, n: usize) -> (usize, usize, usize) {
    let per_epoch = n.div_ceil(cfg.batch_size).max(1);
    let total = cfg.max_steps.unwrap_or(cfg.schedule.epochs * per_epoch);
    let epochs = total.div_ceil(per_epoch).max(1);
    (per_epoch, total, epochs)
}

fn shuffled(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch, usize::MAX)));
    order
}

fn check_loss(step: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { step, value })
    }
}

fn store_tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.named().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

/// Restores every parameter of `store` from `ckpt`.
fn load_all(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<()> {
    let names: Vec<String> = store.named().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = ckpt
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        store.set(&name, t.clone()).map_err(Error::Checkpoint)?;
    }
    Ok(())
}

fn meta_field<T: for<'de> Deserialize<'de>>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    let v = ckpt
        .metadata
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("metadata {key:?}: {e}")))
}

fn check_version(ckpt: &Checkpoint) -> Result<()> {
    let v: u32 = meta_field(ckpt, "format_version")?;
    if v != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {v}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pretraining

pub fn pretrain_checkpoint(model: &PretrainModel, seed: u64, steps: usize) -> Checkpoint {
    let (c, h, w) = model.image_shape();
    Checkpoint {
        metadata: json!({
            "format_version": CHECKPOINT_VERSION,
            "phase": Phase::Pretrain,
            "encoder": model.encoder.spec(),
            "decoder": model.kind(),
            "image_shape": [c, h, w],
            "seed": seed,
            "steps": steps,
        }),
        tensors: store_tensors(&model.store),
    }
}

pub fn load_pretrain_model(ckpt: &Checkpoint) -> Result<PretrainModel> {
    check_version(ckpt)?;
    let phase: Phase = meta_field(ckpt, "phase")?;
    if phase != Phase::Pretrain {
        return Err(Error::Checkpoint(format!("expected a pretrain checkpoint, found {phase}")));
    }
    let spec: EncoderSpec = meta_field(ckpt, "encoder")?;
    let kind: DecoderKind = meta_field(ckpt, "decoder")?;
    let shape: (usize, usize, usize) = meta_field(ckpt, "image_shape")?;
    let seed: u64 = meta_field(ckpt, "seed")?;
    let mut model = PretrainModel::new(&spec, kind, shape, seed)?;
    load_all(&mut model.store, ckpt)?;
    Ok(model)
}

fn require_images(cfg: &TrainConfig, data: &Dataset) -> Result<(usize, usize, usize)> {
    let shape = data
        .image_shape()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    if shape.0 != cfg.encoder.input_channels {
        return Err(Error::Config(format!(
            "encoder.input_channels = {} but images have {} channels",
            cfg.encoder.input_channels, shape.0
        )));
    }
    Ok(shape)
}

/// Loss of one pretraining batch and its gradients at the branch outputs.
fn pretrain_batch_loss(
    cfg: &TrainConfig,
    p_low: &Tensor,
    p_high: Option<&Tensor>,
    targets: &[&ImageTensor],
) -> Result<(f64, Tensor, Option<Tensor>)> {
    let b = targets.len() as f64;
    let mut total = 0.0;
    let mut g_low = Vec::with_capacity(targets.len());
    let mut g_high = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        let pl = tensor_sample(p_low, i);
        match p_high {
            Some(ph) => {
                let o = loss::overall_loss_grad(&pl, &tensor_sample(ph, i), t, &cfg.loss)?;
                total += o.total;
                g_low.push(o.grad_low);
                g_high.push(o.grad_high);
            }
            None => {
                let l = &cfg.loss;
                let (v, g) = loss::branch_loss_grad(&pl, t, TargetKind::AllPass, l.pb, l.kind, l.beta)?;
                total += v;
                g_low.push(g);
            }
        }
    }
    let scale = |gs: Vec<ImageTensor>| -> Result<Tensor> {
        let refs: Vec<&ImageTensor> = gs.iter().collect();
        Ok(images_to_tensor(&refs)?.mapv(|v| v / b as f32))
    };
    let gh = if g_high.is_empty() { None } else { Some(scale(g_high)?) };
    Ok((total / b, scale(g_low)?, gh))
}

/// Masked-image pretraining of encoder and decoder.
pub fn pretrain(cfg: &TrainConfig, data: &Dataset) -> Result<(RunRecord, PretrainModel)> {
    if cfg.phase != Phase::Pretrain {
        return Err(Error::Config(format!("pretrain called with phase {}", cfg.phase)));
    }
    cfg.validate()?;
    let shape = require_images(cfg, data)?;
    let start = Instant::now();
    let subset = data::subset_indices(data.len(), cfg.sample_fraction, cfg.seed)?;
    let (per_epoch, total_steps, epochs) = plan_steps(cfg, subset.len());
    let mut model = PretrainModel::new(&cfg.encoder, cfg.decoder.kind, shape, cfg.seed)?;
    let mut opt = make_optimizer(cfg);
    let schedule = cfg.mask.ratio.schedule();
    info!(
        "pretrain: {} samples, {total_steps} steps over {epochs} epochs ({per_epoch}/epoch), {} parameters",
        subset.len(),
        model.store.num_scalars()
    );

    let mut losses = Vec::with_capacity(total_steps);
    let mut skipped = 0;
    'epochs: for epoch in 0..epochs {
        let lr = schedule_lr(cfg.schedule.kind, cfg.optimizer.lr, epoch, epochs)? as f32;
        let ratio = ratio_at(&schedule, epoch, epochs)?;
        let mut used = 0;
        for batch in shuffled(&subset, cfg.seed, epoch).chunks(cfg.batch_size) {
            if losses.len() == total_steps {
                break 'epochs;
            }
            let mut masked = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let img = &data.images[i];
                match plan_mask(img, cfg.mask.strategy, ratio, mix_seed(cfg.seed, epoch, i)) {
                    Ok(plan) => {
                        masked.push(apply_mask(img, &plan)?);
                        targets.push(img);
                    }
                    Err(Error::InsufficientForeground) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if targets.is_empty() {
                continue;
            }
            used += targets.len();
            let step = losses.len();
            let masked_refs: Vec<&ImageTensor> = masked.iter().collect();
            let mut g = Graph::new();
            let x = g.input(images_to_tensor(&masked_refs)?);
            let out = model.forward(&mut g, x)?;
            let (value, gl, gh) = pretrain_batch_loss(
                cfg,
                g.value(out.low),
                out.high.map(|h| g.value(h)),
                &targets,
            )?;
            check_loss(step, value)?;
            let mut parents = vec![out.low];
            parents.extend(out.high);
            let root = g.custom(&parents, ndarray::arr0(value as f32).into_dyn(), move |up| {
                let s = up.sum();
                let mut v = vec![&gl * s];
                v.extend(gh.as_ref().map(|t| t * s));
                v
            });
            let grads = g.backward(root);
            model.store.zero_grad();
            model.store.accumulate(&grads);
            opt.step(&mut model.store, lr);
            debug!("pretrain step {step} epoch {epoch} lr {lr:.3e} loss {value:.6e}");
            losses.push(value);
        }
        if used == 0 {
            return Err(Error::DataExhausted { epoch });
        }
    }
    if skipped > 0 {
        warn!("pretrain: skipped {skipped} samples without foreground");
    }
    Ok((
        RunRecord {
            phase: Phase::Pretrain,
            losses,
            epochs,
            skipped_samples: skipped,
            checkpoint: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
            report: None,
        },
        model,
    ))
}

// ---------------------------------------------------------------------------
// fine-tuning

/// Encoder initialization for fine-tuning.
#[derive(Clone, Debug)]
pub enum Init {
    Scratch,
    /// Named tensors whose `encoder.*` entries are copied into the model.
    Pretrained(Vec<(String, Tensor)>),
}

impl Init {
    /// Interprets the `init` config field.
    pub fn resolve(cfg: &TrainConfig) -> Result<Init> {
        if cfg.init == "scratch" {
            return Ok(Init::Scratch);
        }
        let ckpt = data::read_checkpoint(Path::new(&cfg.init))?;
        check_version(&ckpt)?;
        let spec: EncoderSpec = meta_field(&ckpt, "encoder")?;
        if spec != cfg.encoder {
            return Err(Error::Checkpoint(format!(
                "checkpoint encoder {spec:?} differs from configured {:?}",
                cfg.encoder
            )));
        }
        Ok(Init::Pretrained(ckpt.tensors))
    }

    pub fn from_model(model: &PretrainModel) -> Init {
        Init::Pretrained(store_tensors(&model.store))
    }
}

pub fn seg_checkpoint(model: &SegModel, seed: u64, steps: usize) -> Checkpoint {
    Checkpoint {
        metadata: json!({
            "format_version": CHECKPOINT_VERSION,
            "phase": Phase::Finetune,
            "encoder": model.encoder.spec(),
            "n_classes": model.head.n_classes(),
            "seed": seed,
            "steps": steps,
        }),
        tensors: store_tensors(&model.store),
    }
}

pub fn load_seg_model(ckpt: &Checkpoint) -> Result<SegModel> {
    check_version(ckpt)?;
    let phase: Phase = meta_field(ckpt, "phase")?;
    if phase != Phase::Finetune {
        return Err(Error::Checkpoint(format!("expected a finetune checkpoint, found {phase}")));
    }
    let spec: EncoderSpec = meta_field(ckpt, "encoder")?;
    let k: usize = meta_field(ckpt, "n_classes")?;
    let seed: u64 = meta_field(ckpt, "seed")?;
    let mut model = SegModel::new(&spec, k, seed)?;
    load_all(&mut model.store, ckpt)?;
    Ok(model)
}

pub fn init_seg_model(cfg: &TrainConfig, n_classes: usize, init: &Init) -> Result<SegModel> {
    let mut model = SegModel::new(&cfg.encoder, n_classes, cfg.seed)?;
    if let Init::Pretrained(tensors) = init {
        let n = transfer_encoder(&mut model.store, tensors.iter().map(|(k, v)| (k.as_str(), v)))?;
        debug!("transferred {n} encoder tensors");
    }
    Ok(model)
}

/// Fine-tunes on `train` and scores the held-out `test` indices.
pub fn finetune_split(
    cfg: &TrainConfig,
    data: &Dataset,
    train: &[usize],
    test: &[usize],
    init: &Init,
    fold_seed: u64,
) -> Result<(RunRecord, SegModel)> {
    let start = Instant::now();
    let mut model = init_seg_model(cfg, data.n_classes(), init)?;
    let picked = data::subset_indices(train.len(), cfg.sample_fraction, fold_seed)?;
    let train: Vec<usize> = picked.into_iter().map(|i| train[i]).collect();
    let (_, total_steps, epochs) = plan_steps(cfg, train.len());
    let mut opt = make_optimizer(cfg);
    let mut losses = Vec::with_capacity(total_steps);
    'epochs: for epoch in 0..epochs {
        let lr = schedule_lr(cfg.schedule.kind, cfg.optimizer.lr, epoch, epochs)? as f32;
        for batch in shuffled(&train, fold_seed, epoch).chunks(cfg.batch_size) {
            if losses.len() == total_steps {
                break 'epochs;
            }
            let step = losses.len();
            let images: Vec<&ImageTensor> = batch.iter().map(|&i| &data.images[i]).collect();
            let mut g = Graph::new();
            let x = g.input(images_to_tensor(&images)?);
            let y = model.forward(&mut g, x)?;
            let scores = g.value(y);
            let b = batch.len() as f64;
            let mut value = 0.0;
            let mut grad = Tensor::zeros(scores.raw_dim());
            for (s, &i) in batch.iter().enumerate() {
                let sc: Array3<f64> = scores
                    .index_axis(Axis(0), s)
                    .mapv(f64::from)
                    .into_dimensionality()
                    .expect("KxHxW");
                let (l, gs) = loss::finetune_loss_grad(&sc, &data.labels[i])?;
                value += l / b;
                grad.index_axis_mut(Axis(0), s)
                    .assign(&gs.mapv(|v| (v / b) as f32).into_dyn());
            }
            check_loss(step, value)?;
            let root = g.custom(&[y], ndarray::arr0(value as f32).into_dyn(), move |up| vec![&grad * up.sum()]);
            let grads = g.backward(root);
            model.store.zero_grad();
            model.store.accumulate(&grads);
            opt.step(&mut model.store, lr);
            debug!("finetune step {step} epoch {epoch} lr {lr:.3e} loss {value:.6e}");
            losses.push(value);
        }
    }
    let report = evaluate(&model, data, test)?;
    Ok((
        RunRecord {
            phase: Phase::Finetune,
            losses,
            epochs,
            skipped_samples: 0,
            checkpoint: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
            report: Some(report),
        },
        model,
    ))
}

/// Image diagonal, used in place of an infinite HD95 when averaging.
pub fn hd_cap(data: &Dataset) -> f64 {
    data.image_shape()
        .map_or(0.0, |(_, h, w)| ((h * h + w * w) as f64).sqrt())
}

/// Mean report of `model` over `indices`.
pub fn evaluate(model: &SegModel, data: &Dataset, indices: &[usize]) -> Result<SegReport> {
    let k = data.n_classes();
    let reports = indices
        .iter()
        .map(|&i| {
            let pred: Array2<i32> = model.predict_labels(&data.images[i])?;
            SegReport::evaluate(pred.view(), data.labels[i].view(), k)
        })
        .collect::<Result<Vec<_>>>()?;
    SegReport::aggregate(&reports, hd_cap(data))
}

/// Outcome of one held-out fold.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub fold: usize,
    pub record: RunRecord,
    pub model: SegModel,
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub folds: Vec<FoldRun>,
    pub mean: SegReport,
}

/// Cross-validated fine-tuning over the configured folds.
pub fn finetune(cfg: &TrainConfig, data: &Dataset, init: &Init) -> Result<FinetuneResult> {
    if cfg.phase != Phase::Finetune {
        return Err(Error::Config(format!("finetune called with phase {}", cfg.phase)));
    }
    cfg.validate()?;
    require_images(cfg, data)?;
    let splits = data::make_splits(data.len(), cfg.seed)?;
    let chosen: Vec<usize> = cfg.folds.clone().unwrap_or_else(|| (0..splits.len()).collect());
    let mut folds = Vec::with_capacity(chosen.len());
    for fold in chosen {
        let test = &splits[fold];
        let train: Vec<usize> = splits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != fold)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let (record, model) = finetune_split(cfg, data, &train, test, init, mix_seed(cfg.seed, 0, fold))?;
        info!(
            "fold {fold}: {} steps, mean Dice {:.4}",
            record.steps(),
            record.report.as_ref().map_or(f64::NAN, |r| r.mean_dice)
        );
        folds.push(FoldRun { fold, record, model });
    }
    let reports: Vec<SegReport> = folds
        .iter()
        .map(|f| f.record.report.clone().expect("finetune records carry reports"))
        .collect();
    let mean = SegReport::aggregate(&reports, hd_cap(data))?;
    Ok(FinetuneResult { folds, mean })
}

// ---------------------------------------------------------------------------
// run directories

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `run.json`, `loss.csv` and the checkpoint into `dir`.
pub fn write_run(dir: &Path, cfg: &TrainConfig, record: &mut RunRecord, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ck = dir.join(CHECKPOINT_FILE);
    data::write_checkpoint(ckpt, &ck)?;
    record.checkpoint = Some(ck);
    let mut csv = String::from("step,loss\n");
    for (i, l) in record.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:e}\n"));
    }
    let p = dir.join("loss.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    let summary = json!({
        "config": cfg,
        "record": {
            "phase": record.phase,
            "steps": record.steps(),
            "epochs": record.epochs,
            "skipped_samples": record.skipped_samples,
            "first_loss": record.losses.first(),
            "final_loss": record.losses.last(),
            "checkpoint": record.checkpoint,
            "wall_clock_s": record.wall_clock_s,
            "report": record.report,
        }
    });
    write_json(&dir.join("run.json"), &summary)
}

/// Writes a pretraining run.
pub fn save_pretrain(dir: &Path, cfg: &TrainConfig, record: &mut RunRecord, model: &PretrainModel) -> Result<()> {
    let ck = pretrain_checkpoint(model, cfg.seed, record.steps());
    write_run(dir, cfg, record, &ck)
}

/// Writes one directory per fold plus `report.json` and `run.json` at the top.
pub fn save_finetune(dir: &Path, cfg: &TrainConfig, result: &mut FinetuneResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in &mut result.folds {
        let ck = seg_checkpoint(&f.model, cfg.seed, f.record.steps());
        write_run(&dir.join(format!("fold{}", f.fold)), cfg, &mut f.record, &ck)?;
    }
    let folds: Vec<_> = result
        .folds
        .iter()
        .map(|f| json!({"fold": f.fold, "steps": f.record.steps(), "report": f.record.report}))
        .collect();
    write_json(&dir.join("report.json"), &json!({"folds": folds, "mean": result.mean}))?;
    write_json(
        &dir.join("run.json"),
        &json!({
            "config": cfg,
            "folds": result.folds.iter().map(|f| json!({
                "fold": f.fold,
                "dir": format!("fold{}", f.fold),
                "steps": f.record.steps(),
                "wall_clock_s": f.record.wall_clock_s,
            })).collect::<Vec<_>>(),
            "mean": result.mean,
        }),
    )?;
    let mut csv = String::from("step,loss\n");
    if let Some(f) = result.folds.first() {
        for (i, l) in f.record.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l:e}\n"));
        }
    }
    let p = dir.join("loss.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(phase: Phase) -> TrainConfig {
        let mut c = TrainConfig::preset("desk", phase).unwrap();
        c.encoder.base_channels = 4;
        c.encoder.n_stages = 2;
        c.batch_size = 4;
        c.max_steps = Some(2);
        c
    }

    #[test]
    fn one_step_records_one_finite_loss() {
        let data = data::gen_dataset(6, 16, 4, 4, 1).unwrap();
        let mut c = tiny(Phase::Pretrain);
        c.max_steps = Some(1);
        let (r, _) = pretrain(&c, &data).unwrap();
        assert_eq!(r.steps(), 1);
        assert!(r.losses[0].is_finite());
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let data = data::gen_dataset(6, 16, 4, 4, 1).unwrap();
        let mut c = tiny(Phase::Pretrain);
        c.optimizer.lr = 0.0;
        c.optimizer.weight_decay = 0.0;
        let init = PretrainModel::new(&c.encoder, c.decoder.kind, (4, 16, 16), c.seed).unwrap();
        let (r, m) = pretrain(&c, &data).unwrap();
        assert_eq!(r.steps(), 2);
        assert!(init.store.named().zip(m.store.named()).all(|(a, b)| a == b));
    }

    #[test]
    fn pretrain_is_deterministic() {
        let data = data::gen_dataset(6, 16, 4, 4, 2).unwrap();
        let c = tiny(Phase::Pretrain);
        let (r1, m1) = pretrain(&c, &data).unwrap();
        let (r2, m2) = pretrain(&c, &data).unwrap();
        assert_eq!(r1.losses, r2.losses);
        assert!(m1.store.named().zip(m2.store.named()).all(|(a, b)| a == b));
    }

    #[test]
    fn single_decoder_trains() {
        let data = data::gen_dataset(6, 16, 4, 4, 2).unwrap();
        let mut c = tiny(Phase::Pretrain);
        c.decoder.kind = DecoderKind::Single;
        let (r, _) = pretrain(&c, &data).unwrap();
        assert!(r.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn finetune_folds_and_transfer() {
        let data = data::gen_dataset(10, 16, 4, 4, 3).unwrap();
        let (_, pre) = pretrain(&tiny(Phase::Pretrain), &data).unwrap();
        let mut c = tiny(Phase::Finetune);
        c.max_steps = Some(0);
        c.folds = Some(vec![1]);
        let res = finetune(&c, &data, &Init::from_model(&pre)).unwrap();
        assert_eq!(res.folds.len(), 1);
        let m = &res.folds[0].model;
        for (name, t) in m.store.named() {
            if name.starts_with("encoder.") {
                assert_eq!(pre.store.value(pre.store.find(name).unwrap()), t);
            }
        }
        c.folds = None;
        c.max_steps = Some(1);
        let res = finetune(&c, &data, &Init::Scratch).unwrap();
        assert_eq!(res.folds.len(), 5);
        assert_eq!(res.mean.n_samples, 10);
    }

    #[test]
    fn checkpoints_roundtrip_models() {
        let data = data::gen_dataset(6, 16, 4, 4, 1).unwrap();
        let (_, pre) = pretrain(&tiny(Phase::Pretrain), &data).unwrap();
        let ck = data::decode_checkpoint(&data::encode_checkpoint(&pretrain_checkpoint(&pre, 0, 2))).unwrap();
        let back = load_pretrain_model(&ck).unwrap();
        assert!(back.store.named().zip(pre.store.named()).all(|(a, b)| a == b));
        assert!(load_seg_model(&ck).is_err());
    }
}
