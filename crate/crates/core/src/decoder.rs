//! Pretraining decoder: bilateral aggregation, frequency mapping blocks and
//! projection of each branch back to image shape.
//!
//! The bilateral aggregation decoder (BAD) fuses every encoder stage twice:
//! once toward the highest-resolution stage (`A_low`) with ×2 deconvolutions,
//! once toward the lowest-resolution stage (`A_high`) with stride-2
//! convolutions. A frequency mapping block (FMB) computes
//! `Re(IDFT(W ⊙ DFT(A) + b))` per channel with complex `W`, `b` per bin.

use std::fmt;

use ndarray::{Array3, Array4, Axis, IxDyn};
use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_stage_shapes, BottomUpPath, Encoder, EncoderSpec, StageFeatures, TopDownPath};
use crate::nn::{Conv2d, ConvTranspose2x2, Graph, ParamId, ParamStore, Tensor, Var};
use crate::spectral::fft2_plane;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Bilateral aggregation with two supervised branches.
    #[default]
    Bad,
    /// One FMB on the deepest stage, supervised with the full spectrum.
    Single,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Bad => "BAD",
            DecoderKind::Single => "Single",
        })
    }
}

/// `A_low` at stage-1 resolution and `A_high` at stage-n resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct BilateralAggregates {
    pub low: Array4<f32>,
    pub high: Array4<f32>,
}

#[derive(Clone, Debug)]
pub struct BilateralDecoder {
    low: TopDownPath,
    high: BottomUpPath,
}

impl BilateralDecoder {
    pub const PREFIX: &'static str = "decoder.bad";

    pub fn new(channels: &[usize], store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        BilateralDecoder {
            low: TopDownPath::new(store, &format!("{}.low", Self::PREFIX), channels, rng),
            high: BottomUpPath::new(store, &format!("{}.high", Self::PREFIX), channels, rng),
        }
    }

    /// Returns `(A_low, A_high)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var]) -> Result<(Var, Var)> {
        let shapes: Vec<Vec<usize>> = stages.iter().map(|&s| g.shape(s).to_vec()).collect();
        validate_stage_shapes(&shapes)?;
        let low = self.low.forward(g, store, stages);
        let high = self.high.forward(g, store, stages);
        Ok((low, high))
    }

    /// Forward pass on plain feature maps.
    pub fn aggregate(&self, store: &ParamStore, features: &StageFeatures) -> Result<BilateralAggregates> {
        features.validate()?;
        let mut g = Graph::new();
        let vars: Vec<Var> = features
            .stages
            .iter()
            .map(|s| g.input(s.clone().into_dyn()))
            .collect();
        let (low, high) = self.forward(&mut g, store, &vars)?;
        let to4 = |t: &Tensor| t.clone().into_dimensionality::<ndarray::Ix4>().expect("4-d");
        Ok(BilateralAggregates {
            low: to4(g.value(low)),
            high: to4(g.value(high)),
        })
    }
}

/// Complex per-bin weights and biases of one FMB, shaped `C×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FmbParams {
    pub weight: Array3<Complex32>,
    pub bias: Array3<Complex32>,
}

impl FmbParams {
    /// `W = 1 + 0i`, `b = 0`.
    pub fn identity(channels: usize, height: usize, width: usize) -> Self {
        FmbParams {
            weight: Array3::from_elem((channels, height, width), Complex32::new(1.0, 0.0)),
            bias: Array3::zeros((channels, height, width)),
        }
    }
}

/// FMB with its parameters registered as four real tensors.
#[derive(Clone, Debug)]
pub struct FrequencyMappingBlock {
    w_re: ParamId,
    w_im: ParamId,
    b_re: ParamId,
    b_im: ParamId,
    shape: (usize, usize, usize),
}

impl FrequencyMappingBlock {
    pub fn new(store: &mut ParamStore, name: &str, shape: (usize, usize, usize)) -> Self {
        let (c, h, w) = shape;
        let dims = IxDyn(&[c, h, w]);
        FrequencyMappingBlock {
            w_re: store.add(format!("{name}.w_re"), Tensor::ones(dims.clone())),
            w_im: store.add(format!("{name}.w_im"), Tensor::zeros(dims.clone())),
            b_re: store.add(format!("{name}.b_re"), Tensor::zeros(dims.clone())),
            b_im: store.add(format!("{name}.b_im"), Tensor::zeros(dims)),
            shape,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn params(&self, store: &ParamStore) -> FmbParams {
        let get = |re: ParamId, im: ParamId| {
            let (r, i) = (store.value(re), store.value(im));
            Array3::from_shape_fn(self.shape, |(c, u, v)| Complex32::new(r[[c, u, v]], i[[c, u, v]]))
        };
        FmbParams {
            weight: get(self.w_re, self.w_im),
            bias: get(self.b_re, self.b_im),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, a: Var) -> Result<Var> {
        let shape = g.shape(a).to_vec();
        if shape.len() != 4 || (shape[1], shape[2], shape[3]) != self.shape {
            return Err(Error::shape(format!(
                "FMB built for {:?}, got {shape:?}",
                self.shape
            )));
        }
        let params = [self.w_re, self.w_im, self.b_re, self.b_im].map(|id| g.param(store, id));
        Ok(fmb_op(g, a, params))
    }
}

fn to_complex_plane(re: ndarray::ArrayView2<'_, f32>) -> ndarray::Array2<Complex64> {
    re.mapv(|v| Complex64::new(v as f64, 0.0))
}

/// Records `Re(IDFT(W ⊙ DFT(a) + b))` with its exact adjoint.
fn fmb_op(g: &mut Graph, a: Var, [w_re, w_im, b_re, b_im]: [Var; 4]) -> Var {
    let x = g.value(a).clone();
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = (h * w) as f64;
    let complex_param = |re: &Tensor, im: &Tensor| {
        Array3::from_shape_fn((c, h, w), |(k, u, v)| {
            Complex64::new(re[[k, u, v]] as f64, im[[k, u, v]] as f64)
        })
    };
    let weight = complex_param(g.value(w_re), g.value(w_im));
    let bias = complex_param(g.value(b_re), g.value(b_im));

    // keep the forward spectra of the input for the weight gradient
    let mut spectra = Array4::<Complex64>::zeros((n, c, h, w));
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for s in 0..n {
        for k in 0..c {
            let mut plane = to_complex_plane(x.slice(ndarray::s![s, k, .., ..]));
            fft2_plane(plane.view_mut(), FftDirection::Forward);
            spectra.slice_mut(ndarray::s![s, k, .., ..]).assign(&plane);
            let wk = weight.index_axis(Axis(0), k);
            let bk = bias.index_axis(Axis(0), k);
            ndarray::Zip::from(&mut plane)
                .and(&wk)
                .and(&bk)
                .for_each(|z, &wt, &b| *z = *z * wt + b);
            fft2_plane(plane.view_mut(), FftDirection::Inverse);
            out.slice_mut(ndarray::s![s, k, .., ..])
                .assign(&plane.mapv(|z| (z.re / hw) as f32));
        }
    }

    g.custom(&[a, w_re, w_im, b_re, b_im], out.into_dyn(), move |grad| {
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut dw = Array3::<Complex64>::zeros((c, h, w));
        let mut db = Array3::<Complex64>::zeros((c, h, w));
        for s in 0..n {
            for k in 0..c {
                // ∂L/∂Z = DFT(dy) / HW
                let mut gz = to_complex_plane(grad.slice(ndarray::s![s, k, .., ..]));
                fft2_plane(gz.view_mut(), FftDirection::Forward);
                gz.mapv_inplace(|z| z / hw);
                let spec = spectra.slice(ndarray::s![s, k, .., ..]);
                let wk = weight.index_axis(Axis(0), k);
                ndarray::Zip::from(dw.index_axis_mut(Axis(0), k))
                    .and(&gz)
                    .and(&spec)
                    .for_each(|d, &gzv, &av| *d += gzv * av.conj());
                ndarray::Zip::from(db.index_axis_mut(Axis(0), k))
                    .and(&gz)
                    .for_each(|d, &gzv| *d += gzv);
                // ∂L/∂A = ∂L/∂Z · conj(W); ∂L/∂a = Re(Σ ∂L/∂A · e^{+iθ})
                let mut ga = gz;
                ndarray::Zip::from(&mut ga)
                    .and(&wk)
                    .for_each(|z, &wt| *z *= wt.conj());
                fft2_plane(ga.view_mut(), FftDirection::Inverse);
                dx.slice_mut(ndarray::s![s, k, .., ..])
                    .assign(&ga.mapv(|z| z.re as f32));
            }
        }
        let re = |t: &Array3<Complex64>| t.mapv(|z| z.re as f32).into_dyn();
        let im = |t: &Array3<Complex64>| t.mapv(|z| z.im as f32).into_dyn();
        vec![dx.into_dyn(), re(&dw), im(&dw), re(&db), im(&db)]
    })
}

/// Applies an FMB to a single `C×H×W` feature map.
pub fn fmb_forward(a: &Array3<f32>, params: &FmbParams) -> Result<Array3<f32>> {
    if a.dim() != params.weight.dim() || a.dim() != params.bias.dim() {
        return Err(Error::shape(format!(
            "feature map {:?} vs FMB parameters {:?}",
            a.dim(),
            params.weight.dim()
        )));
    }
    let (c, h, w) = a.dim();
    let mut g = Graph::new();
    let x = g.input(a.clone().insert_axis(Axis(0)).into_dyn());
    let split = |t: &Array3<Complex32>, f: fn(&Complex32) -> f32| t.map(f).into_dyn();
    let params = [
        g.input(split(&params.weight, |z| z.re)),
        g.input(split(&params.weight, |z| z.im)),
        g.input(split(&params.bias, |z| z.re)),
        g.input(split(&params.bias, |z| z.im)),
    ];
    let y = fmb_op(&mut g, x, params);
    Ok(g.value(y)
        .clone()
        .into_shape_with_order((c, h, w))
        .expect("same shape")
        .into_dimensionality::<ndarray::Ix3>()
        .expect("3-d"))
}

/// 1×1 convolution to image channels, then ×2 deconvolutions up to image size.
#[derive(Clone, Debug)]
pub struct ImageProjection {
    proj: Conv2d,
    ups: Vec<ConvTranspose2x2>,
    target: (usize, usize, usize),
}

/// Number of ×2 steps from `from` to `to`; the ratio must be a power of two.
pub fn upsampling_steps(from: (usize, usize), to: (usize, usize)) -> Result<usize> {
    let err = || Error::shape(format!("cannot upsample {from:?} to {to:?} by powers of two"));
    if from.0 == 0 || from.1 == 0 || to.0 % from.0 != 0 || to.1 % from.1 != 0 {
        return Err(err());
    }
    let (fh, fw) = (to.0 / from.0, to.1 / from.1);
    if fh != fw || !fh.is_power_of_two() {
        return Err(err());
    }
    Ok(fh.trailing_zeros() as usize)
}

impl ImageProjection {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        in_size: (usize, usize),
        target: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let steps = upsampling_steps(in_size, (target.1, target.2))?;
        let c = target.0;
        let proj = Conv2d::new(
            store,
            &format!("{name}.proj"),
            in_channels,
            c,
            1,
            1,
            0,
                        rng,
        );
        let ups = (0..steps)
            .map(|i| ConvTranspose2x2::new(store, &format!("{name}.up{}", i + 1), c, c, rng))
            .collect();
        Ok(ImageProjection { proj, ups, target })
    }

    pub fn upsampling_steps(&self) -> usize {
        self.ups.len()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, a: Var) -> Result<Var> {
        let mut x = self.proj.forward(g, store, a);
        for up in &self.ups {
            x = up.forward(g, store, x);
        }
        let s = g.shape(x);
        if (s[1], s[2], s[3]) != self.target {
            return Err(Error::shape(format!(
                "projection produced {s:?}, expected {:?}",
                self.target
            )));
        }
        Ok(x)
    }
}

/// Per-branch modules of the pretraining decoder.
#[derive(Clone, Debug)]
pub enum PretrainDecoder {
    Bad {
        bad: BilateralDecoder,
        fmb_low: FrequencyMappingBlock,
        fmb_high: FrequencyMappingBlock,
        proj_low: ImageProjection,
        proj_high: ImageProjection,
    },
    Single {
        fmb: FrequencyMappingBlock,
        proj: ImageProjection,
    },
}

/// Branch predictions at image shape, as graph values.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    /// From `A_low` (or the single branch).
    pub low: Var,
    /// From `A_high`; absent for the single-branch decoder.
    pub high: Option<Var>,
}

/// Encoder with the pretraining decoder, sharing one parameter store.
#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: PretrainDecoder,
    image_shape: (usize, usize, usize),
}

impl PretrainModel {
    pub fn new(
        spec: &EncoderSpec,
        kind: DecoderKind,
        image_shape: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let (c, h, w) = image_shape;
        spec.check_input(c, h, w)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(spec, &mut store, &mut rng)?;
        let channels = spec.all_stage_channels();
        let n = spec.n_stages;
        let (h1, w1) = (h / 2, w / 2);
        let (hn, wn) = (h >> n, w >> n);
        let decoder = match kind {
            DecoderKind::Bad => {
                let bad = BilateralDecoder::new(&channels, &mut store, &mut rng);
                let fmb_low = FrequencyMappingBlock::new(&mut store, "decoder.fmb_low", (channels[0], h1, w1));
                let fmb_high =
                    FrequencyMappingBlock::new(&mut store, "decoder.fmb_high", (channels[n - 1], hn, wn));
                let proj_low = ImageProjection::new(
                    &mut store,
                    "decoder.proj_low",
                    channels[0],
                    (h1, w1),
                    image_shape,
                    &mut rng,
                )?;
                let proj_high = ImageProjection::new(
                    &mut store,
                    "decoder.proj_high",
                    channels[n - 1],
                    (hn, wn),
                    image_shape,
                    &mut rng,
                )?;
                PretrainDecoder::Bad {
                    bad,
                    fmb_low,
                    fmb_high,
                    proj_low,
                    proj_high,
                }
            }
            DecoderKind::Single => PretrainDecoder::Single {
                fmb: FrequencyMappingBlock::new(&mut store, "decoder.fmb", (channels[n - 1], hn, wn)),
                proj: ImageProjection::new(
                    &mut store,
                    "decoder.proj",
                    channels[n - 1],
                    (hn, wn),
                    image_shape,
                    &mut rng,
                )?,
            },
        };
        Ok(PretrainModel {
            store,
            encoder,
            decoder,
            image_shape,
        })
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    pub fn kind(&self) -> DecoderKind {
        match self.decoder {
            PretrainDecoder::Bad { .. } => DecoderKind::Bad,
            PretrainDecoder::Single { .. } => DecoderKind::Single,
        }
    }

    /// masked input → encoder → decoder → predictions at image shape.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<BranchVars> {
        let store = &self.store;
        let stages = self.encoder.forward(g, store, x)?;
        match &self.decoder {
            PretrainDecoder::Bad {
                bad,
                fmb_low,
                fmb_high,
                proj_low,
                proj_high,
            } => {
                let (a_low, a_high) = bad.forward(g, store, &stages)?;
                let f_low = fmb_low.forward(g, store, a_low)?;
                let f_high = fmb_high.forward(g, store, a_high)?;
                Ok(BranchVars {
                    low: proj_low.forward(g, store, f_low)?,
                    high: Some(proj_high.forward(g, store, f_high)?),
                })
            }
            PretrainDecoder::Single { fmb, proj } => {
                let deepest = *stages.last().expect("at least two stages");
                let f = fmb.forward(g, store, deepest)?;
                Ok(BranchVars {
                    low: proj.forward(g, store, f)?,
                    high: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::images_to_tensor;
    use crate::tensor::ImageTensor;

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0))
    }

    fn random_features(channels: &[usize], top: usize, seed: u64) -> StageFeatures {
        StageFeatures {
            stages: channels
                .iter()
                .enumerate()
                .map(|(i, &c)| random4((1, c, top >> i, top >> i), seed + i as u64))
                .collect(),
        }
    }

    #[test]
    fn aggregate_shapes() {
        let channels = [16, 32, 64, 128];
        let mut store = ParamStore::new();
        let bad = BilateralDecoder::new(&channels, &mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let agg = bad.aggregate(&store, &random_features(&channels, 32, 1)).unwrap();
        assert_eq!(agg.low.shape(), &[1, 16, 32, 32]);
        assert_eq!(agg.high.shape(), &[1, 128, 4, 4]);
    }

    #[test]
    fn two_stage_hierarchy() {
        let channels = [4, 8];
        let mut store = ParamStore::new();
        let bad = BilateralDecoder::new(&channels, &mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let agg = bad.aggregate(&store, &random_features(&channels, 4, 1)).unwrap();
        assert_eq!(agg.low.shape(), &[1, 4, 4, 4]);
        assert_eq!(agg.high.shape(), &[1, 8, 2, 2]);
    }

    #[test]
    fn broken_hierarchy_rejected() {
        let mut store = ParamStore::new();
        let bad = BilateralDecoder::new(&[4, 8], &mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let f = StageFeatures {
            stages: vec![random4((1, 4, 4, 4), 0), random4((1, 8, 4, 4), 1)],
        };
        assert!(matches!(bad.aggregate(&store, &f), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn gradients_reach_both_ends() {
        let channels = [8, 16, 32, 64];
        let mut store = ParamStore::new();
        let bad = BilateralDecoder::new(&channels, &mut store, &mut ChaCha8Rng::seed_from_u64(2));
        let f = random_features(&channels, 16, 3);
        for use_low in [true, false] {
            let mut g = Graph::new();
            let vars: Vec<Var> = f.stages.iter().map(|s| g.input(s.clone().into_dyn())).collect();
            let (low, high) = bad.forward(&mut g, &store, &vars).unwrap();
            let target = if use_low { low } else { high };
            let v = g.value(target).clone();
            let energy = g.custom(&[target], ndarray::arr0(v.iter().map(|x| x * x).sum()).into_dyn(), move |gr| {
                vec![v.mapv(|x| 2.0 * x) * gr.sum()]
            });
            let grads = g.backward(energy);
            let far = if use_low { vars[3] } else { vars[0] };
            let norm: f32 = grads.get(far).unwrap().iter().map(|x| x * x).sum();
            assert!(norm > 0.0);
        }
    }

    #[test]
    fn fmb_identity_zero_and_dc() {
        let a = random4((1, 3, 8, 8), 4).index_axis_move(Axis(0), 0);
        let id = fmb_forward(&a, &FmbParams::identity(3, 8, 8)).unwrap();
        let err = (&id - &a).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(err < 1e-4);

        let zero = FmbParams {
            weight: Array3::zeros((3, 8, 8)),
            bias: Array3::zeros((3, 8, 8)),
        };
        assert!(fmb_forward(&a, &zero).unwrap().iter().all(|&v| v == 0.0));

        let mut dc = zero.clone();
        dc.bias[[1, 0, 0]] = Complex32::new(64.0 * 0.75, 0.0);
        let out = fmb_forward(&a, &dc).unwrap();
        assert!(out.index_axis(Axis(0), 1).iter().all(|v| (v - 0.75).abs() < 1e-6));
        assert!(out.index_axis(Axis(0), 0).iter().all(|&v| v == 0.0));

        assert!(fmb_forward(&a, &FmbParams::identity(3, 8, 4)).is_err());
    }

    #[test]
    fn fmb_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, h, w) = (2, 4, 3);
        let a = Array4::from_shape_fn((1, c, h, w), |_| rng.random_range(-1.0f32..1.0));
        let p: Vec<Tensor> = (0..4)
            .map(|_| Tensor::from_shape_fn(IxDyn(&[c, h, w]), |_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let probe = Array4::from_shape_fn((1, c, h, w), |_| rng.random_range(-1.0f32..1.0)).into_dyn();
        let eval = |a: &Tensor, p: &[Tensor]| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let av = g.input(a.clone());
            let pv = [0, 1, 2, 3].map(|i| g.input(p[i].clone()));
            let y = fmb_op(&mut g, av, pv);
            let val: f64 = g
                .value(y)
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            let pr = probe.clone();
            let root = g.custom(&[y], ndarray::arr0(val as f32).into_dyn(), move |gr| vec![&pr * gr.sum()]);
            let grads = g.backward(root);
            let mut out = vec![grads.get(av).unwrap().clone()];
            out.extend(pv.iter().map(|&v| grads.get(v).unwrap().clone()));
            (val, out)
        };
        let a = a.into_dyn();
        let (_, grads) = eval(&a, &p);
        let hstep = 1e-2f32;
        let mut inputs = vec![a.clone()];
        inputs.extend(p.iter().cloned());
        for k in 0..5 {
            for idx in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += hstep;
                minus[k].as_slice_mut().unwrap()[idx] -= hstep;
                let fp = eval(&plus[0], &plus[1..]).0;
                let fm = eval(&minus[0], &minus[1..]).0;
                let fd = (fp - fm) / (2.0 * hstep as f64);
                let an = grads[k].as_slice().unwrap()[idx] as f64;
                assert!((fd - an).abs() < 1e-3 * (1.0 + fd.abs()), "param {k} idx {idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn projection_steps() {
        assert_eq!(upsampling_steps((32, 32), (32, 32)).unwrap(), 0);
        assert_eq!(upsampling_steps((4, 4), (32, 32)).unwrap(), 3);
        assert!(upsampling_steps((3, 3), (32, 32)).is_err());
        assert!(upsampling_steps((4, 4), (24, 24)).is_err());
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ImageProjection::new(&mut store, "p", 128, (4, 4), (4, 32, 32), &mut rng).unwrap();
        assert_eq!(p.upsampling_steps(), 3);
        let mut g = Graph::new();
        let x = g.input(random4((2, 128, 4, 4), 1).into_dyn());
        let y = p.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 32, 32]);
    }

    #[test]
    fn full_forward_is_finite() {
        for kind in [DecoderKind::Bad, DecoderKind::Single] {
            let model = PretrainModel::new(&EncoderSpec::default(), kind, (4, 32, 32), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let img = ImageTensor::new(Array3::from_shape_fn((4, 32, 32), |_| rng.random_range(0.0..1.0)));
            let mut g = Graph::new();
            let x = g.input(images_to_tensor(&[&img]).unwrap());
            let out = model.forward(&mut g, x).unwrap();
            assert_eq!(g.shape(out.low), &[1, 4, 32, 32]);
            assert!(g.value(out.low).iter().all(|v| v.is_finite()));
            assert_eq!(out.high.is_some(), kind == DecoderKind::Bad);
        }
    }
}
