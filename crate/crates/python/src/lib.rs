//! Python bindings for the fremim core library.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use num_complex::{Complex32, Complex64};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3, PyReadonlyArrayDyn};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

use fremim_core::data::{self, Container, TensorData};
use fremim_core::decoder::{fmb_forward as core_fmb, FmbParams};
use fremim_core::loss::{self, LossConfig, SpectralLossKind, TargetKind};
use fremim_core::masking::{self, MaskStrategy};
use fremim_core::metrics;
use fremim_core::pipeline::{self, Init, Phase};
use fremim_core::spectral::{self, FilterKind, FilterSpec, Spectrum};
use fremim_core::{Error, ImageTensor};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

fn image(a: PyReadonlyArray3<'_, f64>) -> ImageTensor {
    ImageTensor::new(a.as_array().to_owned())
}

fn overrides(d: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, Value)>> {
    let mut out = Vec::new();
    if let Some(d) = d {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let text: String = v.str()?.extract()?;
            let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
            out.push((key, value));
        }
    }
    Ok(out)
}

/// Synthetic phantom: `(image[C,H,W] float64, labels[H,W] int32)`.
#[pyfunction]
#[pyo3(signature = (seed, size=32, channels=4, n_classes=4))]
fn gen_phantom<'py>(
    py: Python<'py>,
    seed: u64,
    size: usize,
    channels: usize,
    n_classes: usize,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<i32>>)> {
    let p = data::gen_phantom(seed, size, channels, n_classes).map_err(err)?;
    Ok((p.image.into_inner().into_pyarray(py), p.labels.into_pyarray(py)))
}

/// Writes a phantom dataset directory.
#[pyfunction]
#[pyo3(signature = (out, n=256, size=32, channels=4, n_classes=4, seed=0))]
fn gen_dataset(out: PathBuf, n: usize, size: usize, channels: usize, n_classes: usize, seed: u64) -> PyResult<()> {
    let ds = data::gen_dataset(n, size, channels, n_classes, seed).map_err(err)?;
    data::write_dataset(&ds, &out).map_err(err)
}

/// Unnormalized forward DFT per channel, uncentered.
#[pyfunction]
fn dft2<'py>(py: Python<'py>, img: PyReadonlyArray3<'_, f64>) -> PyResult<Bound<'py, PyArray3<Complex64>>> {
    Ok(spectral::dft2(&image(img)).map_err(err)?.into_inner().into_pyarray(py))
}

/// Inverse DFT with `1/(HW)`; fails when the result is not real.
#[pyfunction]
fn idft2<'py>(py: Python<'py>, spec: PyReadonlyArray3<'_, Complex64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let s = Spectrum::new(spec.as_array().to_owned(), false);
    Ok(spectral::idft2(&s).map_err(err)?.into_inner().into_pyarray(py))
}

/// Moves the DC bin to `(H/2, W/2)`.
#[pyfunction]
fn center<'py>(py: Python<'py>, spec: PyReadonlyArray3<'_, Complex64>) -> PyResult<Bound<'py, PyArray3<Complex64>>> {
    let s = Spectrum::new(spec.as_array().to_owned(), false);
    Ok(spectral::center(&s).map_err(err)?.into_inner().into_pyarray(py))
}

/// Boolean band mask on the centered grid; `kind` is low_pass, high_pass or all_pass.
#[pyfunction]
#[pyo3(signature = (height, width, pb, kind="low_pass"))]
fn band_mask<'py>(py: Python<'py>, height: usize, width: usize, pb: f64, kind: &str) -> PyResult<Bound<'py, PyArray2<bool>>> {
    let kind: FilterKind = parse("filter kind", kind)?;
    let m = spectral::band_mask(height, width, FilterSpec::new(kind, pb)).map_err(err)?;
    Ok(m.into_pyarray(py))
}

/// Focal frequency loss between two spectra of equal shape.
#[pyfunction]
#[pyo3(signature = (pred, target, beta=1.0))]
fn focal_frequency_loss(pred: PyReadonlyArray3<'_, Complex64>, target: PyReadonlyArray3<'_, Complex64>, beta: f64) -> PyResult<f64> {
    let p = Spectrum::new(pred.as_array().to_owned(), false);
    let t = Spectrum::new(target.as_array().to_owned(), false);
    loss::focal_frequency_loss(&p, &t, beta).map_err(err)
}

/// Loss of one branch prediction against the clean image.
#[pyfunction]
#[pyo3(signature = (pred, target, target_kind="high_pass", pb=10.0, kind="focal", beta=1.0))]
fn branch_loss(
    pred: PyReadonlyArray3<'_, f64>,
    target: PyReadonlyArray3<'_, f64>,
    target_kind: &str,
    pb: f64,
    kind: &str,
    beta: f64,
) -> PyResult<f64> {
    let tk: TargetKind = parse("target kind", target_kind)?;
    let k: SpectralLossKind = parse("loss kind", kind)?;
    loss::branch_loss(&image(pred), &image(target), tk, pb, k, beta).map_err(err)
}

/// `branch(P_low, high-pass) + alpha * branch(P_high, low-pass)`.
#[pyfunction]
#[pyo3(signature = (p_low, p_high, target, alpha=3.0, beta=1.0, pb=10.0))]
fn overall_loss(
    p_low: PyReadonlyArray3<'_, f64>,
    p_high: PyReadonlyArray3<'_, f64>,
    target: PyReadonlyArray3<'_, f64>,
    alpha: f64,
    beta: f64,
    pb: f64,
) -> PyResult<f64> {
    let cfg = LossConfig {
        alpha,
        beta,
        pb,
        ..LossConfig::default()
    };
    loss::overall_loss(&image(p_low), &image(p_high), &image(target), &cfg).map_err(err)
}

/// Masked `(row, col)` coordinates.
#[pyfunction]
#[pyo3(signature = (img, strategy="foreground", ratio=0.25, seed=0))]
fn plan_mask(img: PyReadonlyArray3<'_, f64>, strategy: &str, ratio: f64, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    let s: MaskStrategy = parse("mask strategy", strategy)?;
    Ok(masking::plan_mask(&image(img), s, ratio, seed).map_err(err)?.masked)
}

/// The image with planned pixels zeroed in every channel.
#[pyfunction]
#[pyo3(signature = (img, strategy="foreground", ratio=0.25, seed=0))]
fn mask_image<'py>(
    py: Python<'py>,
    img: PyReadonlyArray3<'_, f64>,
    strategy: &str,
    ratio: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let s: MaskStrategy = parse("mask strategy", strategy)?;
    let img = image(img);
    let plan = masking::plan_mask(&img, s, ratio, seed).map_err(err)?;
    Ok(masking::apply_mask(&img, &plan).map_err(err)?.into_inner().into_pyarray(py))
}

/// `Re(IDFT(W ⊙ DFT(a) + b))` per channel.
#[pyfunction]
fn fmb_forward<'py>(
    py: Python<'py>,
    a: PyReadonlyArray3<'_, f32>,
    weight: PyReadonlyArray3<'_, Complex64>,
    bias: PyReadonlyArray3<'_, Complex64>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let to32 = |z: &Complex64| Complex32::new(z.re as f32, z.im as f32);
    let params = FmbParams {
        weight: weight.as_array().map(to32),
        bias: bias.as_array().map(to32),
    };
    let out: Array3<f32> = core_fmb(&a.as_array().to_owned(), &params).map_err(err)?;
    Ok(out.into_pyarray(py))
}

#[pyfunction]
fn dice(pred: PyReadonlyArray2<'_, bool>, truth: PyReadonlyArray2<'_, bool>) -> PyResult<f64> {
    metrics::dice(pred.as_array(), truth.as_array()).map_err(err)
}

#[pyfunction]
fn jaccard(pred: PyReadonlyArray2<'_, bool>, truth: PyReadonlyArray2<'_, bool>) -> PyResult<f64> {
    metrics::jaccard(pred.as_array(), truth.as_array()).map_err(err)
}

/// 95th-percentile Hausdorff distance; `inf` when exactly one mask is empty.
#[pyfunction]
fn hd95(pred: PyReadonlyArray2<'_, bool>, truth: PyReadonlyArray2<'_, bool>) -> PyResult<f64> {
    metrics::hd95(pred.as_array(), truth.as_array()).map_err(err)
}

/// Segmentation report of two label maps as a JSON string.
#[pyfunction]
#[pyo3(signature = (pred, truth, n_classes=4))]
fn evaluate_labels(pred: PyReadonlyArray2<'_, i32>, truth: PyReadonlyArray2<'_, i32>, n_classes: usize) -> PyResult<String> {
    let r = metrics::SegReport::evaluate(pred.as_array(), truth.as_array(), n_classes).map_err(err)?;
    Ok(serde_json::to_string(&r).expect("report serializes"))
}

/// Reads a tensor container as a float32 or int32 array.
#[pyfunction]
fn read_container<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let c = data::read_container(&path).map_err(err)?;
    Ok(match c.tensor {
        TensorData::F32(a) => a.into_pyarray(py).into_any(),
        TensorData::I32(a) => a.into_pyarray(py).into_any(),
    })
}

/// Writes a float32 array as a tensor container.
#[pyfunction]
#[pyo3(signature = (path, array, role="image"))]
fn write_container(path: PathBuf, array: PyReadonlyArrayDyn<'_, f32>, role: &str) -> PyResult<()> {
    let c = Container::new(role, TensorData::F32(array.as_array().to_owned()));
    data::write_container(&c, &path).map_err(err)
}

/// Resolved training config as JSON.
#[pyfunction]
#[pyo3(signature = (phase="pretrain", preset="desk", overrides=None))]
fn resolve_config(phase: &str, preset: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let phase: Phase = parse("phase", phase)?;
    let cfg = pipeline::resolve_config(phase, preset, None, &self::overrides(overrides)?).map_err(err)?;
    Ok(serde_json::to_string(&cfg).expect("config serializes"))
}

#[pyfunction]
fn schedule_lr(kind: &str, base_lr: f64, epoch: usize, total: usize) -> PyResult<f64> {
    let k = kind.parse().map_err(err)?;
    pipeline::schedule_lr(k, base_lr, epoch, total).map_err(err)
}

/// Pretrains on a dataset directory; returns the per-step losses.
#[pyfunction]
#[pyo3(signature = (data_dir, out=None, preset="desk", overrides=None))]
fn pretrain(
    py: Python<'_>,
    data_dir: PathBuf,
    out: Option<PathBuf>,
    preset: &str,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<Vec<f64>> {
    let cfg = pipeline::resolve_config(Phase::Pretrain, preset, None, &self::overrides(overrides)?).map_err(err)?;
    py.detach(|| {
        let ds = data::load_dataset(&data_dir)?;
        let (mut rec, model) = pipeline::pretrain(&cfg, &ds)?;
        if let Some(o) = &out {
            pipeline::save_pretrain(o, &cfg, &mut rec, &model)?;
        }
        Ok(rec.losses)
    })
    .map_err(err)
}

/// Cross-validated fine-tuning; returns the mean report as JSON.
#[pyfunction]
#[pyo3(signature = (data_dir, out=None, preset="desk", overrides=None))]
fn finetune(
    py: Python<'_>,
    data_dir: PathBuf,
    out: Option<PathBuf>,
    preset: &str,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<String> {
    let cfg = pipeline::resolve_config(Phase::Finetune, preset, None, &self::overrides(overrides)?).map_err(err)?;
    py.detach(|| {
        let ds = data::load_dataset(&data_dir)?;
        let init = Init::resolve(&cfg)?;
        let mut res = pipeline::finetune(&cfg, &ds, &init)?;
        if let Some(o) = &out {
            pipeline::save_finetune(o, &cfg, &mut res)?;
        }
        Ok(serde_json::to_string(&res.mean).expect("report serializes"))
    })
    .map_err(err)
}

/// Label map predicted by a fine-tuned checkpoint.
#[pyfunction]
fn predict<'py>(py: Python<'py>, checkpoint: PathBuf, img: PyReadonlyArray3<'_, f64>) -> PyResult<Bound<'py, PyArray2<i32>>> {
    let ck = data::read_checkpoint(&checkpoint).map_err(err)?;
    let model = pipeline::load_seg_model(&ck).map_err(err)?;
    let labels: Array2<i32> = model.predict_labels(&image(img)).map_err(err)?;
    Ok(labels.into_pyarray(py))
}

#[pymodule]
fn fremim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dft2, m)?)?;
    m.add_function(wrap_pyfunction!(idft2, m)?)?;
    m.add_function(wrap_pyfunction!(center, m)?)?;
    m.add_function(wrap_pyfunction!(band_mask, m)?)?;
    m.add_function(wrap_pyfunction!(focal_frequency_loss, m)?)?;
    m.add_function(wrap_pyfunction!(branch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(overall_loss, m)?)?;
    m.add_function(wrap_pyfunction!(plan_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mask_image, m)?)?;
    m.add_function(wrap_pyfunction!(fmb_forward, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(hd95, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_labels, m)?)?;
    m.add_function(wrap_pyfunction!(read_container, m)?)?;
    m.add_function(wrap_pyfunction!(write_container, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_lr, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    Ok(())
}
