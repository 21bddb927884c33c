//! Hierarchical CNN encoder and the segmentation network used for fine-tuning.
//!
//! Any encoder that yields [`StageFeatures`] (halving resolution per stage,
//! non-decreasing channels) can feed the decoders; the CNN here is the
//! desk-scale instance.

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBlock, ConvTranspose2x2, Graph, InstanceNorm, ParamStore, Tensor, Var, LEAKY_SLOPE};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub n_stages: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    #[serde(default = "default_variant")]
    pub variant: EncoderVariant,
}

fn default_variant() -> EncoderVariant {
    EncoderVariant::Cnn
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            n_stages: 4,
            base_channels: 16,
            input_channels: 4,
            variant: EncoderVariant::Cnn,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages < 2 {
            return Err(Error::Config("encoder needs at least 2 stages".into()));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("encoder channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Channels of stage `i` (0-based): `base · 2^i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn all_stage_channels(&self) -> Vec<usize> {
        (0..self.n_stages).map(|i| self.stage_channels(i)).collect()
    }

    /// Input sizes must be divisible by `2^n_stages`.
    pub fn check_input(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.n_stages;
        if channels != self.input_channels {
            return Err(Error::shape(format!(
                "encoder expects {} channels, got {channels}",
                self.input_channels
            )));
        }
        if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
            return Err(Error::shape(format!(
                "{height}x{width} not divisible by {f} for {} stages",
                self.n_stages
            )));
        }
        Ok(())
    }
}

/// Feature maps `S_1 … S_n`, each `N×C_i×H_i×W_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFeatures {
    pub stages: Vec<Array4<f32>>,
}

impl StageFeatures {
    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.dim().1).collect()
    }

    pub fn resolutions(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|s| (s.dim().2, s.dim().3)).collect()
    }

    /// Checks `n ≥ 2`, exact halving and non-decreasing channels.
    pub fn validate(&self) -> Result<()> {
        validate_stage_shapes(&self.stages.iter().map(|s| s.shape().to_vec()).collect::<Vec<_>>())
    }
}

pub(crate) fn validate_stage_shapes(shapes: &[Vec<usize>]) -> Result<()> {
    if shapes.len() < 2 {
        return Err(Error::shape("need at least two stages"));
    }
    for s in shapes {
        if s.len() != 4 {
            return Err(Error::shape(format!("stage shape {s:?} is not NxCxHxW")));
        }
    }
    for pair in shapes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a[0] != b[0] || b[2] * 2 != a[2] || b[3] * 2 != a[3] || b[1] < a[1] {
            return Err(Error::shape(format!("stage {a:?} -> {b:?} breaks the hierarchy")));
        }
    }
    Ok(())
}

/// Stacks images into an `N×C×H×W` tensor.
pub fn images_to_tensor(images: &[&ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("empty batch"))?
        .dim();
    let (c, h, w) = first;
    let mut out = Array4::<f32>::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        if img.dim() != first {
            return Err(Error::shape(format!("batch mixes {first:?} and {:?}", img.dim())));
        }
        out.index_axis_mut(Axis(0), n)
            .assign(&img.data().mapv(|v| v as f32));
    }
    Ok(out.into_dyn())
}

/// Sample `n` of an `N×C×H×W` tensor as a double-precision image.
pub fn tensor_sample(t: &Tensor, n: usize) -> ImageTensor {
    let s = t.index_axis(Axis(0), n);
    let a = s
        .into_dimensionality::<ndarray::Ix3>()
        .expect("NxCxHxW tensor");
    ImageTensor::new(a.mapv(|v| v as f64))
}

#[derive(Clone, Debug)]
struct EncoderStage {
    conv1: ConvBlock,
    conv2: ConvBlock,
    down: Conv2d,
}

/// Per stage: two 3×3 conv blocks, then a stride-2 2×2 convolution.
#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    stages: Vec<EncoderStage>,
}

impl Encoder {
    pub const PREFIX: &'static str = "encoder";

    pub fn new(spec: &EncoderSpec, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut stages = Vec::with_capacity(spec.n_stages);
        let mut cin = spec.input_channels;
        for i in 0..spec.n_stages {
            let c = spec.stage_channels(i);
            let p = format!("{}.stage{}", Self::PREFIX, i + 1);
            stages.push(EncoderStage {
                conv1: ConvBlock::new(store, &format!("{p}.conv1"), cin, c, 3, 1, 1, rng),
                conv2: ConvBlock::new(store, &format!("{p}.conv2"), c, c, 3, 1, 1, rng),
                down: Conv2d::new(store, &format!("{p}.down"), c, c, 2, 2, 0, rng),
            });
            cin = c;
        }
        Ok(Encoder {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Records the encoder on `g`; returns `S_1 … S_n`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Vec<Var>> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(format!("input {shape:?} is not NxCxHxW")));
        }
        self.spec.check_input(shape[1], shape[2], shape[3])?;
        let mut h = x;
        let mut out = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            h = st.conv1.forward(g, store, h);
            h = st.conv2.forward(g, store, h);
            h = st.down.forward(g, store, h);
            out.push(h);
        }
        Ok(out)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn encode(&self, store: &ParamStore, images: &[&ImageTensor]) -> Result<StageFeatures> {
        let mut g = Graph::new();
        let x = g.input(images_to_tensor(images)?);
        let vars = self.forward(&mut g, store, x)?;
        let stages = vars
            .into_iter()
            .map(|v| {
                g.value(v)
                    .clone()
                    .into_dimensionality::<ndarray::Ix4>()
                    .expect("4-d stage")
            })
            .collect();
        Ok(StageFeatures { stages })
    }
}

/// Fuses stages from the deepest toward the shallowest:
/// `x ← Fuse(Cat(C(S_i), Dc(x)))` for `i = n−1 … 1`.
#[derive(Clone, Debug)]
pub struct TopDownPath {
    steps: Vec<FuseStep>,
}

#[derive(Clone, Debug)]
struct FuseStep {
    resample: ResampleBlock,
    skip: ConvBlock,
    fuse: ConvBlock,
}

/// Deconvolution (×2 up) or strided convolution (×2 down), then norm and activation.
#[derive(Clone, Debug)]
pub(crate) enum ResampleBlock {
    Up(ConvTranspose2x2, InstanceNorm),
    Down(ConvBlock),
}

impl ResampleBlock {
    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        match self {
            ResampleBlock::Up(dc, norm) => {
                let y = dc.forward(g, store, x);
                let y = norm.forward(g, store, y);
                g.leaky_relu(y, LEAKY_SLOPE)
            }
            ResampleBlock::Down(block) => block.forward(g, store, x),
        }
    }
}

impl TopDownPath {
    /// `channels[i]` is the channel count of stage `i + 1`.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: &[usize], rng: &mut impl Rng) -> Self {
        let steps = (0..channels.len() - 1)
            .rev()
            .map(|i| {
                let (c, deeper) = (channels[i], channels[i + 1]);
                let p = format!("{prefix}.step{}", i + 1);
                FuseStep {
                    resample: ResampleBlock::Up(
                        ConvTranspose2x2::new(store, &format!("{p}.dc"), deeper, c, rng),
                        InstanceNorm::new(store, &format!("{p}.dc.norm"), c),
                    ),
                    skip: ConvBlock::new(store, &format!("{p}.c"), c, c, 1, 1, 0, rng),
                    fuse: ConvBlock::new(store, &format!("{p}.fuse"), 2 * c, c, 3, 1, 1, rng),
                }
            })
            .collect();
        TopDownPath { steps }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var]) -> Var {
        let n = stages.len();
        let mut x = stages[n - 1];
        for (step, &s) in self.steps.iter().zip(stages[..n - 1].iter().rev()) {
            x = fuse_step(g, store, step, s, x);
        }
        x
    }
}

fn fuse_step(g: &mut Graph, store: &ParamStore, step: &FuseStep, stage: Var, carried: Var) -> Var {
    let moved = step.resample.forward(g, store, carried);
    let skip = step.skip.forward(g, store, stage);
    let cat = g.concat_channels(skip, moved);
    step.fuse.forward(g, store, cat)
}

/// Fuses stages from the shallowest toward the deepest:
/// `x ← Fuse(Cat(C(S_i), Down(x)))` for `i = 2 … n`.
#[derive(Clone, Debug)]
pub struct BottomUpPath {
    steps: Vec<FuseStep>,
}

impl BottomUpPath {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: &[usize], rng: &mut impl Rng) -> Self {
        let steps = (1..channels.len())
            .map(|i| {
                let (c, shallower) = (channels[i], channels[i - 1]);
                let p = format!("{prefix}.step{}", i + 1);
                FuseStep {
                    resample: ResampleBlock::Down(ConvBlock::new(
                        store,
                        &format!("{p}.down"),
                        shallower,
                        c,
                        2,
                        2,
                        0,
                        rng,
                    )),
                    skip: ConvBlock::new(store, &format!("{p}.c"), c, c, 1, 1, 0, rng),
                    fuse: ConvBlock::new(store, &format!("{p}.fuse"), 2 * c, c, 3, 1, 1, rng),
                }
            })
            .collect();
        BottomUpPath { steps }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var]) -> Var {
        let mut x = stages[0];
        for (step, &s) in self.steps.iter().zip(stages[1..].iter()) {
            x = fuse_step(g, store, step, s, x);
        }
        x
    }
}

/// Top-down decoder with skip connections, a ×2 upsampling back to input
/// resolution and a 1×1 classifier.
#[derive(Clone, Debug)]
pub struct SegHead {
    path: TopDownPath,
    up: ConvTranspose2x2,
    up_norm: InstanceNorm,
    classifier: Conv2d,
    n_classes: usize,
}

impl SegHead {
    pub const PREFIX: &'static str = "head";

    pub fn new(spec: &EncoderSpec, n_classes: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let channels = spec.all_stage_channels();
        let c1 = channels[0];
        Ok(SegHead {
            path: TopDownPath::new(store, &format!("{}.path", Self::PREFIX), &channels, rng),
            up: ConvTranspose2x2::new(store, &format!("{}.up", Self::PREFIX), c1, c1, rng),
            up_norm: InstanceNorm::new(store, &format!("{}.up.norm", Self::PREFIX), c1),
            classifier: Conv2d::new(
                store,
                &format!("{}.classifier", Self::PREFIX),
                c1,
                n_classes,
                1,
                1,
                0,
                                rng,
            ),
            n_classes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var]) -> Var {
        let x = self.path.forward(g, store, stages);
        let x = self.up.forward(g, store, x);
        let x = self.up_norm.forward(g, store, x);
        let x = g.leaky_relu(x, LEAKY_SLOPE);
        self.classifier.forward(g, store, x)
    }
}

/// Encoder plus segmentation head sharing one parameter store.
#[derive(Clone, Debug)]
pub struct SegModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: SegHead,
}

impl SegModel {
    /// Encoder parameters are drawn first, so two models built from the same
    /// seed share head initialization regardless of later encoder transfer.
    pub fn new(spec: &EncoderSpec, n_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(spec, &mut store, &mut rng)?;
        let head = SegHead::new(spec, n_classes, &mut store, &mut rng)?;
        Ok(SegModel { store, encoder, head })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let stages = self.encoder.forward(g, &self.store, x)?;
        Ok(self.head.forward(g, &self.store, &stages))
    }

    /// Class scores `K×H×W` for one image.
    pub fn segment(&self, image: &ImageTensor) -> Result<Array3<f32>> {
        let mut g = Graph::new();
        let x = g.input(images_to_tensor(&[image])?);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y)
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("KxHxW"))
    }

    /// Per-pixel argmax of [`SegModel::segment`].
    pub fn predict_labels(&self, image: &ImageTensor) -> Result<ndarray::Array2<i32>> {
        let scores = self.segment(image)?;
        let (_, h, w) = scores.dim();
        Ok(ndarray::Array2::from_shape_fn((h, w), |(i, j)| {
            let col = scores.slice(ndarray::s![.., i, j]);
            let mut best = 0;
            for (k, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = k;
                }
            }
            best as i32
        }))
    }
}

/// Copies every `encoder.*` tensor of `source` into `store`, bit for bit.
pub fn transfer_encoder<'a>(
    store: &mut ParamStore,
    source: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<usize> {
    let mut copied = 0;
    for (name, value) in source {
        if name.starts_with(&format!("{}.", Encoder::PREFIX)) {
            store.set(name, value.clone()).map_err(Error::Checkpoint)?;
            copied += 1;
        }
    }
    let expected = store
        .ids()
        .filter(|&id| store.name(id).starts_with(&format!("{}.", Encoder::PREFIX)))
        .count();
    if copied != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint provides {copied} of {expected} encoder tensors"
        )));
    }
    Ok(copied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(0.0..1.0)))
    }

    fn encoder(spec: &EncoderSpec, seed: u64) -> (Encoder, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::new(spec, &mut store, &mut rng).unwrap();
        (enc, store)
    }

    #[test]
    fn stage_shapes_32() {
        let spec = EncoderSpec::default();
        let (enc, store) = encoder(&spec, 0);
        let img = random_image(1, 4, 32, 32);
        let f = enc.encode(&store, &[&img]).unwrap();
        assert_eq!(f.resolutions(), vec![(16, 16), (8, 8), (4, 4), (2, 2)]);
        assert_eq!(f.channels(), vec![16, 32, 64, 128]);
        f.validate().unwrap();
    }

    #[test]
    fn deepest_stage_for_64() {
        let (enc, store) = encoder(&EncoderSpec::default(), 0);
        let f = enc.encode(&store, &[&random_image(2, 4, 64, 64)]).unwrap();
        assert_eq!(f.stages[3].shape(), &[1, 128, 4, 4]);
    }

    #[test]
    fn zero_input_stays_finite() {
        let (enc, store) = encoder(&EncoderSpec::default(), 3);
        let f = enc.encode(&store, &[&ImageTensor::zeros(4, 32, 32)]).unwrap();
        assert!(f.stages.iter().all(|s| s.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn indivisible_input_rejected() {
        let (enc, store) = encoder(&EncoderSpec::default(), 0);
        let err = enc.encode(&store, &[&ImageTensor::zeros(4, 24, 32)]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
        let err = enc.encode(&store, &[&ImageTensor::zeros(3, 32, 32)]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn deterministic_init_and_forward() {
        let a = SegModel::new(&EncoderSpec::default(), 4, 9).unwrap();
        let b = SegModel::new(&EncoderSpec::default(), 4, 9).unwrap();
        let img = random_image(4, 4, 32, 32);
        assert_eq!(a.segment(&img).unwrap(), b.segment(&img).unwrap());
    }

    #[test]
    fn segmentation_output_shape_and_softmax() {
        let m = SegModel::new(&EncoderSpec::default(), 4, 1).unwrap();
        let scores = m.segment(&random_image(5, 4, 32, 32)).unwrap();
        assert_eq!(scores.dim(), (4, 32, 32));
        let p = crate::loss::softmax_classes(&scores.mapv(|v| v as f64));
        for i in 0..32 {
            for j in 0..32 {
                let s: f64 = p.slice(ndarray::s![.., i, j]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert!(SegModel::new(&EncoderSpec::default(), 1, 1).is_err());
    }

    #[test]
    fn stage_validation_rejects_bad_hierarchies() {
        let ok = vec![vec![1, 16, 8, 8], vec![1, 32, 4, 4]];
        validate_stage_shapes(&ok).unwrap();
        assert!(validate_stage_shapes(&ok[..1]).is_err());
        assert!(validate_stage_shapes(&[vec![1, 16, 8, 8], vec![1, 8, 4, 4]]).is_err());
        assert!(validate_stage_shapes(&[vec![1, 16, 8, 8], vec![1, 32, 2, 2]]).is_err());
    }

    #[test]
    fn transfer_is_bit_exact_and_leaves_head() {
        let src = SegModel::new(&EncoderSpec::default(), 4, 1).unwrap();
        let mut dst = SegModel::new(&EncoderSpec::default(), 4, 2).unwrap();
        let head_before: Vec<Tensor> = dst
            .store
            .named()
            .filter(|(n, _)| n.starts_with("head."))
            .map(|(_, t)| t.clone())
            .collect();
        let n = transfer_encoder(&mut dst.store, src.store.named()).unwrap();
        assert!(n > 0);
        for (name, t) in src.store.named().filter(|(n, _)| n.starts_with("encoder.")) {
            let id = dst.store.find(name).unwrap();
            let same = dst
                .store
                .value(id)
                .iter()
                .zip(t.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{name}");
        }
        let head_after: Vec<Tensor> = dst
            .store
            .named()
            .filter(|(n, _)| n.starts_with("head."))
            .map(|(_, t)| t.clone())
            .collect();
        assert_eq!(head_before, head_after);
    }
}
