//! Spectral reconstruction losses and the fine-tuning objective.
//!
//! All spectra are unnormalized forward transforms. The focal frequency loss
//! of one channel is
//!
//! ```text
//! L = 1/(HW) · Σ_{u,v} ω(u,v) · γ(u,v)²,   γ = |f − f̂|,   ω = γ^β
//! ```
//!
//! and channels are averaged. `ω` is treated as a constant when
//! differentiating. Gradients are reported with the convention
//! `∂L/∂Re + i·∂L/∂Im`.

use std::fmt;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, band_mask, fft2_plane, FilterKind, FilterSpec, Spectrum};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralLossKind {
    Focal,
    L1,
    Mse,
}

impl fmt::Display for SpectralLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectralLossKind::Focal => "Focal",
            SpectralLossKind::L1 => "L1",
            SpectralLossKind::Mse => "MSE",
        })
    }
}

/// What a decoder branch is asked to reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    HighPass,
    LowPass,
    AllPass,
    RawImage,
    /// Branch is not supervised.
    None,
}

impl TargetKind {
    pub fn label(self) -> &'static str {
        match self {
            TargetKind::HighPass => "high-pass",
            TargetKind::LowPass => "low-pass",
            TargetKind::AllPass => "all frequency",
            TargetKind::RawImage => "original image",
            TargetKind::None => "-",
        }
    }

    fn filter(self) -> Option<FilterKind> {
        match self {
            TargetKind::HighPass => Some(FilterKind::HighPass),
            TargetKind::LowPass => Some(FilterKind::LowPass),
            TargetKind::AllPass => Some(FilterKind::AllPass),
            TargetKind::RawImage | TargetKind::None => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the high-level (low-pass) branch.
    pub alpha: f64,
    /// Focal exponent on the spectrum weight matrix.
    pub beta: f64,
    /// Passband radius in bins.
    pub pb: f64,
    pub kind: SpectralLossKind,
    /// Target of the branch decoded from the highest-resolution aggregate.
    pub low_target: TargetKind,
    /// Target of the branch decoded from the lowest-resolution aggregate.
    pub high_target: TargetKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 3.0,
            beta: 1.0,
            pb: 10.0,
            kind: SpectralLossKind::Focal,
            low_target: TargetKind::HighPass,
            high_target: TargetKind::LowPass,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("loss.alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("loss.beta must be >= 0, got {}", self.beta)));
        }
        if !(self.pb >= 0.0) {
            return Err(Error::InvalidPassband(self.pb));
        }
        Ok(())
    }
}

/// Distance between two spectrum bins, `|f − f̂|`.
pub fn gamma(f: Complex64, f_hat: Complex64) -> f64 {
    (f - f_hat).norm()
}

fn require_same(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// The focal weight matrix `ω = γ^β`, to be held fixed during differentiation.
pub fn spectrum_weights(pred: &Spectrum, target: &Spectrum, beta: f64) -> Result<Array3<f64>> {
    require_same(pred.dim(), target.dim())?;
    let mut w = Array3::zeros(pred.dim());
    ndarray::Zip::from(&mut w)
        .and(pred.data())
        .and(target.data())
        .for_each(|w, &f, &t| *w = gamma(f, t).powf(beta));
    Ok(w)
}

/// `1/(HW)·Σ ω·γ²` per channel, averaged over channels, for a given `ω`.
pub fn weighted_spectral_loss(
    pred: &Spectrum,
    target: &Spectrum,
    weights: &Array3<f64>,
) -> Result<f64> {
    require_same(pred.dim(), target.dim())?;
    require_same(pred.dim(), weights.dim())?;
    let (c, h, w) = pred.dim();
    let total: f64 = ndarray::Zip::from(pred.data())
        .and(target.data())
        .and(weights)
        .fold(0.0, |acc, &f, &t, &wt| acc + wt * (f - t).norm_sqr());
    Ok(total / (h * w) as f64 / c as f64)
}

pub fn focal_frequency_loss(pred: &Spectrum, target: &Spectrum, beta: f64) -> Result<f64> {
    let w = spectrum_weights(pred, target, beta)?;
    weighted_spectral_loss(pred, target, &w)
}

/// Loss value and its gradient with respect to the predicted bins, `ω` frozen.
pub fn focal_frequency_loss_grad(
    pred: &Spectrum,
    target: &Spectrum,
    beta: f64,
) -> Result<(f64, Array3<Complex64>)> {
    let w = spectrum_weights(pred, target, beta)?;
    let loss = weighted_spectral_loss(pred, target, &w)?;
    let (c, h, wd) = pred.dim();
    let scale = 2.0 / (h * wd * c) as f64;
    let mut grad = Array3::zeros(pred.dim());
    ndarray::Zip::from(&mut grad)
        .and(pred.data())
        .and(target.data())
        .and(&w)
        .for_each(|g, &f, &t, &wt| *g = (f - t) * (scale * wt));
    Ok((loss, grad))
}

/// Difference loss over paired complex values, averaged over all entries.
/// Returns the value and `∂L/∂Re + i·∂L/∂Im` per entry.
fn complex_pair_loss(
    diff: &Array3<Complex64>,
    kind: SpectralLossKind,
    beta: f64,
) -> (f64, Array3<Complex64>) {
    let (c, h, w) = diff.dim();
    let n = (c * h * w) as f64;
    match kind {
        SpectralLossKind::Focal => {
            let mut total = 0.0;
            let grad = diff.mapv(|d| {
                let wt = d.norm().powf(beta);
                total += wt * d.norm_sqr();
                d * (2.0 * wt / n)
            });
            (total / n, grad)
        }
        SpectralLossKind::Mse => {
            let total: f64 = diff.iter().map(|d| d.norm_sqr()).sum();
            (total / n, diff.mapv(|d| d * (2.0 / n)))
        }
        SpectralLossKind::L1 => {
            let total: f64 = diff.iter().map(|d| d.re.abs() + d.im.abs()).sum();
            let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
            (
                total / n,
                diff.mapv(|d| Complex64::new(sign(d.re), sign(d.im)) / n),
            )
        }
    }
}

/// Keep-mask for `kind` laid out on the uncentered (transform-native) grid.
fn uncentered_mask(h: usize, w: usize, kind: FilterKind, pb: f64) -> Result<Array2<bool>> {
    let centered = band_mask(h, w, FilterSpec::new(kind, pb))?;
    let (sh, sw) = (h / 2, w / 2);
    Ok(Array2::from_shape_fn((h, w), |(u, v)| {
        centered[((u + sh) % h, (v + sw) % w)]
    }))
}

/// Branch loss and its gradient with respect to `pred`.
///
/// Spectral targets compare band-filtered spectra of `pred` and `target`;
/// `RawImage` compares pixels with the same loss kind; `None` returns zero.
pub fn branch_loss_grad(
    pred: &ImageTensor,
    target: &ImageTensor,
    target_kind: TargetKind,
    pb: f64,
    kind: SpectralLossKind,
    beta: f64,
) -> Result<(f64, ImageTensor)> {
    pred.require_same_shape(target)?;
    let (c, h, w) = pred.dim();
    match target_kind {
        TargetKind::None => Ok((0.0, ImageTensor::zeros(c, h, w))),
        TargetKind::RawImage => {
            let diff = (pred.data() - target.data()).mapv(|d| Complex64::new(d, 0.0));
            let (loss, g) = complex_pair_loss(&diff, kind, beta);
            // pixel losses are normalized like spectral ones: per pixel, per channel
            Ok((loss, ImageTensor::new(g.mapv(|z| z.re))))
        }
        _ => {
            let filter = target_kind.filter().expect("spectral target");
            let mask = uncentered_mask(h, w, filter, pb)?;
            let fp = spectral::dft2(pred)?;
            let ft = spectral::dft2(target)?;
            let mut diff = fp.data() - ft.data();
            for mut plane in diff.axis_iter_mut(Axis(0)) {
                ndarray::Zip::from(&mut plane).and(&mask).for_each(|d, &keep| {
                    if !keep {
                        *d = Complex64::new(0.0, 0.0);
                    }
                });
            }
            // complex_pair_loss averages over C·H·W entries, which equals the
            // per-channel 1/(HW) sum averaged over channels.
            let (loss, mut g) = complex_pair_loss(&diff, kind, beta);
            // ∂L/∂x(h,w) = Re(Σ_uv g(u,v)·exp(+2πi(uh/H + vw/W)))
            for plane in g.axis_iter_mut(Axis(0)) {
                fft2_plane(plane, FftDirection::Inverse);
            }
            Ok((loss, ImageTensor::new(g.mapv(|z| z.re))))
        }
    }
}

pub fn branch_loss(
    pred: &ImageTensor,
    target: &ImageTensor,
    target_kind: TargetKind,
    pb: f64,
    kind: SpectralLossKind,
    beta: f64,
) -> Result<f64> {
    branch_loss_grad(pred, target, target_kind, pb, kind, beta).map(|(l, _)| l)
}

/// Per-branch terms of the pretraining objective.
#[derive(Clone, Debug)]
pub struct OverallLoss {
    pub total: f64,
    pub low_branch: f64,
    pub high_branch: f64,
    pub grad_low: ImageTensor,
    pub grad_high: ImageTensor,
}

/// `L = branch(P_low, T, low_target) + α·branch(P_high, T, high_target)`.
pub fn overall_loss_grad(
    p_low: &ImageTensor,
    p_high: &ImageTensor,
    target: &ImageTensor,
    cfg: &LossConfig,
) -> Result<OverallLoss> {
    cfg.validate()?;
    p_high.require_same_shape(target)?;
    let (low, grad_low) =
        branch_loss_grad(p_low, target, cfg.low_target, cfg.pb, cfg.kind, cfg.beta)?;
    let (high, mut grad_high) =
        branch_loss_grad(p_high, target, cfg.high_target, cfg.pb, cfg.kind, cfg.beta)?;
    grad_high.data_mut().mapv_inplace(|g| g * cfg.alpha);
    Ok(OverallLoss {
        total: low + cfg.alpha * high,
        low_branch: low,
        high_branch: high,
        grad_low,
        grad_high,
    })
}

pub fn overall_loss(
    p_low: &ImageTensor,
    p_high: &ImageTensor,
    target: &ImageTensor,
    cfg: &LossConfig,
) -> Result<f64> {
    overall_loss_grad(p_low, p_high, target, cfg).map(|l| l.total)
}

const DICE_SMOOTH: f64 = 1e-6;

/// Row-wise softmax over the class axis of a `K×H×W` score map.
pub fn softmax_classes(scores: &Array3<f64>) -> Array3<f64> {
    let mut p = scores.clone();
    let (_, h, w) = scores.dim();
    for i in 0..h {
        for j in 0..w {
            let mut col = p.slice_mut(ndarray::s![.., i, j]);
            let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            col.mapv_inplace(|v| (v - m).exp());
            let s = col.sum();
            col.mapv_inplace(|v| v / s);
        }
    }
    p
}

/// Mean of pixelwise cross-entropy and soft multi-class Dice loss, with the
/// gradient with respect to the scores.
pub fn finetune_loss_grad(scores: &Array3<f64>, labels: &Array2<i32>) -> Result<(f64, Array3<f64>)> {
    let (k, h, w) = scores.dim();
    if labels.dim() != (h, w) {
        return Err(Error::shape(format!(
            "scores {:?} vs labels {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 0 || l as usize >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad as i64,
            classes: k,
        });
    }
    let m = (h * w) as f64;
    let p = softmax_classes(scores);
    let onehot = Array3::from_shape_fn((k, h, w), |(c, i, j)| (labels[[i, j]] as usize == c) as u8 as f64);

    let ce = -labels
        .indexed_iter()
        .map(|((i, j), &l)| p[[l as usize, i, j]].max(1e-300).ln())
        .sum::<f64>()
        / m;
    let mut dp = Array3::zeros((k, h, w));
    let mut dice_sum = 0.0;
    for c in 0..k {
        let pc = p.index_axis(Axis(0), c);
        let yc = onehot.index_axis(Axis(0), c);
        let inter: f64 = (&pc * &yc).sum();
        let denom = pc.sum() + yc.sum() + DICE_SMOOTH;
        let num = 2.0 * inter + DICE_SMOOTH;
        dice_sum += num / denom;
        // d(num/denom)/dp = (2y·denom − num) / denom²
        let mut dpc = dp.index_axis_mut(Axis(0), c);
        ndarray::Zip::from(&mut dpc)
            .and(&yc)
            .for_each(|d, &y| *d = -(2.0 * y * denom - num) / (denom * denom) / k as f64);
    }
    let dice_loss = 1.0 - dice_sum / k as f64;

    // softmax backward for the Dice term, then add the cross-entropy gradient
    let mut grad = Array3::zeros((k, h, w));
    for i in 0..h {
        for j in 0..w {
            let pc = p.slice(ndarray::s![.., i, j]);
            let dpc = dp.slice(ndarray::s![.., i, j]);
            let dot: f64 = pc.iter().zip(dpc.iter()).map(|(a, b)| a * b).sum();
            for c in 0..k {
                let dice_part = pc[c] * (dpc[c] - dot);
                let ce_part = (pc[c] - onehot[[c, i, j]]) / m;
                grad[[c, i, j]] = 0.5 * (dice_part + ce_part);
            }
        }
    }
    Ok((0.5 * (ce + dice_loss), grad))
}

pub fn finetune_loss(scores: &Array3<f64>, labels: &Array2<i32>) -> Result<f64> {
    finetune_loss_grad(scores, labels).map(|(l, _)| l)
}

/// Cross-entropy term alone, exposed for diagnostics.
pub fn cross_entropy(scores: &Array3<f64>, labels: &Array2<i32>) -> Result<f64> {
    let (k, h, w) = scores.dim();
    if labels.dim() != (h, w) {
        return Err(Error::shape("scores vs labels"));
    }
    let p = softmax_classes(scores);
    let mut total = 0.0;
    for ((i, j), &l) in labels.indexed_iter() {
        if l < 0 || l as usize >= k {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                classes: k,
            });
        }
        total -= p[[l as usize, i, j]].ln();
    }
    Ok(total / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{center, dft2};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(gamma(c(1.5, -2.0), c(1.5, -2.0)), 0.0);
        assert_eq!(gamma(c(3.0, 4.0), c(0.0, 0.0)), 5.0);
        assert_eq!(gamma(c(1.0, 2.0), c(-3.0, 0.5)), gamma(c(-3.0, 0.5), c(1.0, 2.0)));
    }

    #[test]
    fn focal_hand_case() {
        let target = Spectrum::new(Array3::from_elem((1, 2, 2), c(1.0, 1.0)), false);
        let mut pred = target.clone();
        pred.data_mut()[[0, 1, 0]] += c(0.0, 2.0);
        assert_eq!(focal_frequency_loss(&pred, &target, 1.0).unwrap(), 2.0);
        assert_eq!(focal_frequency_loss(&target, &target, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn beta_zero_is_mean_squared_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = dft2(&random_image(&mut rng, 2, 4, 4)).unwrap();
        let b = dft2(&random_image(&mut rng, 2, 4, 4)).unwrap();
        let mean_sq: f64 = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            / 32.0;
        let l = focal_frequency_loss(&a, &b, 0.0).unwrap();
        assert!((l - mean_sq).abs() < 1e-12 * mean_sq);
    }

    #[test]
    fn shape_mismatch() {
        let a = Spectrum::new(Array3::zeros((1, 2, 2)), false);
        let b = Spectrum::new(Array3::zeros((1, 2, 3)), false);
        assert!(matches!(focal_frequency_loss(&a, &b, 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn branch_loss_zero_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_image(&mut rng, 3, 8, 8);
        for target in [
            TargetKind::HighPass,
            TargetKind::LowPass,
            TargetKind::AllPass,
            TargetKind::RawImage,
            TargetKind::None,
        ] {
            for kind in [SpectralLossKind::Focal, SpectralLossKind::L1, SpectralLossKind::Mse] {
                assert_eq!(branch_loss(&t, &t, target, 2.0, kind, 1.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn high_pass_ignores_low_band_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_image(&mut rng, 2, 8, 8);
        // perturb the DC and first ring only: constant offset plus a slow cosine
        let mut p = t.clone();
        for ((_, i, _), v) in p.data_mut().indexed_iter_mut() {
            *v += 0.3 + 0.2 * (2.0 * std::f64::consts::PI * i as f64 / 8.0).cos();
        }
        let l = branch_loss(&p, &t, TargetKind::HighPass, 2.0, SpectralLossKind::Focal, 1.0).unwrap();
        assert!(l < 1e-20, "{l}");
        let l = branch_loss(&p, &t, TargetKind::LowPass, 2.0, SpectralLossKind::Focal, 1.0).unwrap();
        assert!(l > 1.0);
    }

    /// Independent composition: dft2 → center → filter → formula.
    #[test]
    fn branch_loss_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_image(&mut rng, 2, 4, 4);
            let t = random_image(&mut rng, 2, 4, 4);
            for kind in [FilterKind::LowPass, FilterKind::HighPass] {
                let spec = FilterSpec::new(kind, 1.0);
                let fp = spectral::band_filter(&center(&dft2(&p).unwrap()).unwrap(), spec).unwrap();
                let ft = spectral::band_filter(&center(&dft2(&t).unwrap()).unwrap(), spec).unwrap();
                let mut expect = 0.0;
                for (a, b) in fp.data().iter().zip(ft.data().iter()) {
                    let g = gamma(*a, *b);
                    expect += g * g * g;
                }
                expect /= 16.0 * 2.0;
                let target = if kind == FilterKind::LowPass {
                    TargetKind::LowPass
                } else {
                    TargetKind::HighPass
                };
                let got = branch_loss(&p, &t, target, 1.0, SpectralLossKind::Focal, 1.0).unwrap();
                assert!((got - expect).abs() < 1e-6 * (1.0 + expect), "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn branch_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (target, kind) in [
            (TargetKind::HighPass, SpectralLossKind::Mse),
            (TargetKind::LowPass, SpectralLossKind::Mse),
            (TargetKind::AllPass, SpectralLossKind::L1),
            (TargetKind::RawImage, SpectralLossKind::Mse),
        ] {
            let p = random_image(&mut rng, 2, 4, 4);
            let t = random_image(&mut rng, 2, 4, 4);
            let (_, g) = branch_loss_grad(&p, &t, target, 1.0, kind, 1.0).unwrap();
            let h = 1e-6;
            for idx in 0..32 {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus.data_mut().as_slice_mut().unwrap()[idx] += h;
                minus.data_mut().as_slice_mut().unwrap()[idx] -= h;
                let fd = (branch_loss(&plus, &t, target, 1.0, kind, 1.0).unwrap()
                    - branch_loss(&minus, &t, target, 1.0, kind, 1.0).unwrap())
                    / (2.0 * h);
                let an = g.data().as_slice().unwrap()[idx];
                assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "{target:?} {idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn overall_is_sum_of_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (pl, ph, t) = (
            random_image(&mut rng, 2, 4, 4),
            random_image(&mut rng, 2, 4, 4),
            random_image(&mut rng, 2, 4, 4),
        );
        let cfg = LossConfig::default();
        let low = branch_loss(&pl, &t, TargetKind::HighPass, cfg.pb, cfg.kind, cfg.beta).unwrap();
        let high = branch_loss(&ph, &t, TargetKind::LowPass, cfg.pb, cfg.kind, cfg.beta).unwrap();
        let l3 = overall_loss(&pl, &ph, &t, &cfg).unwrap();
        assert!((l3 - (low + 3.0 * high)).abs() < 1e-6);
        let l6 = overall_loss(&pl, &ph, &t, &LossConfig { alpha: 6.0, ..cfg.clone() }).unwrap();
        assert!(((l6 - low) - 2.0 * (l3 - low)).abs() < 1e-9 * l6.abs().max(1.0));
        assert_eq!(overall_loss(&t, &t, &t, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn overall_rejects_mismatched_shapes() {
        let a = ImageTensor::zeros(1, 4, 4);
        let b = ImageTensor::zeros(1, 4, 8);
        assert!(overall_loss(&a, &b, &a, &LossConfig::default()).is_err());
        assert!(overall_loss(&b, &a, &a, &LossConfig::default()).is_err());
    }

    #[test]
    fn finetune_loss_limits() {
        let labels = Array2::from_shape_fn((4, 4), |(i, j)| ((i + j) % 4) as i32);
        let uniform = Array3::zeros((4, 4, 4));
        let ce = cross_entropy(&uniform, &labels).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        let perfect = Array3::from_shape_fn((4, 4, 4), |(c, i, j)| {
            if labels[[i, j]] as usize == c { 60.0 } else { -60.0 }
        });
        assert!(finetune_loss(&perfect, &labels).unwrap() < 1e-9);
        assert!(finetune_loss(&uniform, &labels).unwrap() >= 0.0);
        let bad = Array2::from_elem((4, 4), 4);
        assert!(matches!(
            finetune_loss(&uniform, &bad),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn finetune_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores = Array3::from_shape_fn((3, 3, 3), |_| rng.random_range(-2.0..2.0));
        let labels = Array2::from_shape_fn((3, 3), |_| rng.random_range(0..3));
        let (_, g) = finetune_loss_grad(&scores, &labels).unwrap();
        let h = 1e-6;
        for idx in 0..27 {
            let mut plus = scores.clone();
            let mut minus = scores.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fd = (finetune_loss(&plus, &labels).unwrap() - finetune_loss(&minus, &labels).unwrap())
                / (2.0 * h);
            assert!((fd - g.as_slice().unwrap()[idx]).abs() < 1e-6);
        }
    }
}
