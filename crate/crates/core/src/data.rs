//! Synthetic phantoms, dataset splits and the on-disk tensor container.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const MIN_FOREGROUND: f64 = 0.10;
pub const MAX_FOREGROUND: f64 = 0.60;
pub const MAX_ATTEMPTS: usize = 64;
pub const N_FOLDS: usize = 5;
pub const FORMAT_VERSION: u32 = 1;

/// A phantom image with its nested label map.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub image: ImageTensor,
    pub labels: Array2<i32>,
    pub seed: u64,
}

impl PhantomSample {
    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.labels.iter().filter(|&&l| l > 0).count();
        fg as f64 / self.labels.len() as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// A smaller ellipse drawn around a point inside this one.
    fn inner(&self, rng: &mut ChaCha8Rng) -> Ellipse {
        let scale = rng.random_range(0.4..0.7);
        let shift = 1.0 - scale;
        let (s, c) = self.theta.sin_cos();
        let u = rng.random_range(-shift..shift) * self.a * 0.5;
        let v = rng.random_range(-shift..shift) * self.b * 0.5;
        Ellipse {
            cy: self.cy + u * s + v * c,
            cx: self.cx + u * c - v * s,
            a: self.a * scale,
            b: self.b * scale,
            theta: self.theta + rng.random_range(-0.3..0.3),
        }
    }
}

fn check_phantom_args(size: usize, channels: usize, n_classes: usize) -> Result<()> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::shape(format!("phantom size {size} is not a positive multiple of 16")));
    }
    if channels == 0 {
        return Err(Error::Config("phantoms need at least one channel".into()));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!("n_classes = {n_classes}, need at least 2")));
    }
    Ok(())
}

/// Draws one phantom. Deterministic in `seed`.
///
/// Labels count how many nested ellipses cover a pixel, capped at
/// `n_classes − 1`, so every label region contains the next one. Pixel values
/// inside the outer ellipse are strictly positive in every channel; the
/// background is exactly 0.
pub fn gen_phantom(seed: u64, size: usize, channels: usize, n_classes: usize) -> Result<PhantomSample> {
    check_phantom_args(size, channels, n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    for _ in 0..MAX_ATTEMPTS {
        let outer = Ellipse {
            cy: rng.random_range(0.35..0.65) * s,
            cx: rng.random_range(0.35..0.65) * s,
            a: rng.random_range(0.2..0.42) * s,
            b: rng.random_range(0.2..0.42) * s,
            theta: rng.random_range(0.0..PI),
        };
        let levels = rng.random_range(1..=3usize).min(n_classes - 1);
        let mut ellipses = vec![outer];
        for _ in 1..levels {
            let next = ellipses.last().expect("nonempty").inner(&mut rng);
            ellipses.push(next);
        }
        let labels = Array2::from_shape_fn((size, size), |(y, x)| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            ellipses.iter().take_while(|e| e.contains(py, px)).count() as i32
        });
        let fg = labels.iter().filter(|&&l| l > 0).count() as f64 / (size * size) as f64;
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fg) {
            continue;
        }

        // per channel: base intensity and a multiplier per label level
        let gains: Vec<Vec<f64>> = (0..channels)
            .map(|_| {
                let base = rng.random_range(0.3..0.6);
                (0..=levels)
                    .map(|l| base * rng.random_range(0.7..1.3) * (1.0 + 0.35 * l as f64))
                    .collect()
            })
            .collect();
        let noise = rng.random_range(0.01..0.05);
        let mut image = Array3::<f64>::zeros((channels, size, size));
        for c in 0..channels {
            for ((y, x), &l) in labels.indexed_iter() {
                if l == 0 {
                    continue;
                }
                let v = gains[c][l as usize] + noise * rng.random_range(-1.0..1.0);
                image[[c, y, x]] = v.clamp(0.02, 1.0) as f32 as f64;
            }
        }
        return Ok(PhantomSample {
            image: ImageTensor::new(image),
            labels,
            seed,
        });
    }
    Err(Error::GenerationFailed(MAX_ATTEMPTS))
}

/// Scales each channel by its maximum, mapping it into [0, 1] with zeros kept.
pub fn normalize(image: &ImageTensor) -> Result<ImageTensor> {
    if !image.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let mut out = image.data().clone();
    for mut plane in out.outer_iter_mut() {
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo < 0.0 {
            plane.mapv_inplace(|v| v - lo);
        }
        let hi = plane.iter().cloned().fold(0.0, f64::max);
        if hi > 0.0 {
            plane.mapv_inplace(|v| v / hi);
        }
    }
    Ok(ImageTensor::new(out))
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic shuffled partition into five near-equal folds.
pub fn make_splits(n_samples: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_samples < N_FOLDS {
        return Err(Error::InvalidSplit(n_samples));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (j, idx) in order.into_iter().enumerate() {
        folds[j % N_FOLDS].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// `⌈fraction·n⌉` sorted indices chosen deterministically from `seed`.
pub fn subset_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("sample_fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

// ---------------------------------------------------------------------------
// tensor container

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Int32,
}

impl DType {
    pub fn size(self) -> usize {
        4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(ArrayD<f32>),
    I32(ArrayD<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::Float32,
            TensorData::I32(_) => DType::Int32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(a) => a.shape(),
            TensorData::I32(a) => a.shape(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            TensorData::F32(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
            TensorData::I32(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn from_payload(dtype: DType, shape: &[usize], bytes: &[u8]) -> Result<Self> {
        let words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let dim = IxDyn(shape);
        let bad = |e: ndarray::ShapeError| Error::Format(e.to_string());
        Ok(match dtype {
            DType::Float32 => TensorData::F32(
                ArrayD::from_shape_vec(dim, words.map(f32::from_le_bytes).collect()).map_err(bad)?,
            ),
            DType::Int32 => TensorData::I32(
                ArrayD::from_shape_vec(dim, words.map(i32::from_le_bytes).collect()).map_err(bad)?,
            ),
        })
    }

    pub fn as_f32(&self) -> Result<&ArrayD<f32>> {
        match self {
            TensorData::F32(a) => Ok(a),
            TensorData::I32(_) => Err(Error::Format("expected float32 tensor, found int32".into())),
        }
    }

    pub fn as_i32(&self) -> Result<&ArrayD<i32>> {
        match self {
            TensorData::I32(a) => Ok(a),
            TensorData::F32(_) => Err(Error::Format("expected int32 tensor, found float32".into())),
        }
    }
}

/// Header line of a tensor container.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub byte_order: String,
    pub role: String,
    pub payload_bytes: usize,
}

impl ContainerHeader {
    pub fn for_tensor(tensor: &TensorData, role: &str) -> Self {
        ContainerHeader {
            shape: tensor.shape().to_vec(),
            dtype: tensor.dtype(),
            byte_order: "little".into(),
            role: role.into(),
            payload_bytes: tensor.shape().iter().product::<usize>() * tensor.dtype().size(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub role: String,
    pub tensor: TensorData,
}

impl Container {
    pub fn new(role: impl Into<String>, tensor: TensorData) -> Self {
        Container {
            role: role.into(),
            tensor,
        }
    }

    pub fn header(&self) -> ContainerHeader {
        ContainerHeader::for_tensor(&self.tensor, &self.role)
    }
}

/// Splits `bytes` at the first newline and parses the JSON before it.
fn split_header<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(T, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, &bytes[nl + 1..]))
}

pub fn encode_container(container: &Container) -> Vec<u8> {
    let mut out = serde_json::to_vec(&container.header()).expect("header serializes");
    out.push(b'\n');
    out.extend(container.tensor.payload());
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let (header, payload): (ContainerHeader, _) = split_header(bytes)?;
    if header.byte_order != "little" {
        return Err(Error::Format(format!("unsupported byte order {:?}", header.byte_order)));
    }
    let expected = header.shape.iter().product::<usize>() * header.dtype.size();
    if header.payload_bytes != expected {
        return Err(Error::Format(format!(
            "payload_bytes {} disagrees with shape {:?} ({expected} bytes)",
            header.payload_bytes, header.shape
        )));
    }
    if payload.len() != expected {
        return Err(Error::Truncation {
            expected,
            found: payload.len(),
        });
    }
    Ok(Container {
        role: header.role,
        tensor: TensorData::from_payload(header.dtype, &header.shape, payload)?,
    })
}

pub fn write_container(container: &Container, path: &Path) -> Result<()> {
    fs::write(path, encode_container(container)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

pub fn image_container(image: &ImageTensor) -> Container {
    Container::new("image", TensorData::F32(image.data().mapv(|v| v as f32).into_dyn()))
}

pub fn labels_container(labels: &Array2<i32>) -> Container {
    Container::new("labels", TensorData::I32(labels.clone().into_dyn()))
}

/// Reads a `C×H×W` float32 image.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let c = read_container(path)?;
    let a = c.tensor.as_f32()?;
    let a = a
        .view()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::Format(format!("{}: expected a 3-d image, got {:?}", path.display(), a.shape())))?;
    Ok(ImageTensor::new(a.mapv(f64::from)))
}

pub fn read_labels(path: &Path) -> Result<Array2<i32>> {
    let c = read_container(path)?;
    let a = c.tensor.as_i32()?;
    a.view()
        .into_dimensionality::<ndarray::Ix2>()
        .map(|v| v.to_owned())
        .map_err(|_| Error::Format(format!("{}: expected a 2-d label map, got {:?}", path.display(), a.shape())))
}

// ---------------------------------------------------------------------------
// checkpoint bundles

/// Entry of the tensor index in a checkpoint header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
    pub payload_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    byte_order: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named float32 tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut offset = 0;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        let bytes = TensorData::F32(t.clone()).payload();
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: DType::Float32,
            offset,
            payload_bytes: bytes.len(),
        });
        offset += bytes.len();
        payload.extend(bytes);
    }
    let header = CheckpointHeader {
        byte_order: "little".into(),
        metadata: ckpt.metadata.clone(),
        tensors: entries,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(m);
    let (header, payload): (CheckpointHeader, _) =
        split_header(bytes).map_err(|e| bad(e.to_string()))?;
    let total: usize = header.tensors.iter().map(|e| e.payload_bytes).sum();
    if payload.len() != total {
        return Err(Error::Truncation {
            expected: total,
            found: payload.len(),
        });
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n = e.shape.iter().product::<usize>() * e.dtype.size();
        if e.dtype != DType::Float32 || n != e.payload_bytes || e.offset + n > payload.len() {
            return Err(bad(format!("corrupt index entry for {:?}", e.name)));
        }
        let t = TensorData::from_payload(e.dtype, &e.shape, &payload[e.offset..e.offset + n])?;
        tensors.push((e.name.clone(), t.as_f32()?.clone()));
    }
    Ok(Checkpoint {
        metadata: header.metadata,
        tensors,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

// ---------------------------------------------------------------------------
// dataset directories

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub kind: String,
    pub seed: u64,
    pub size: usize,
    pub channels: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub n_samples: usize,
    pub generator: GeneratorParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<Array2<i32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.generator.n_classes
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(ImageTensor::dim)
    }
}

/// Generates `n` phantoms, spreading the work over available cores.
pub fn gen_dataset(n: usize, size: usize, channels: usize, n_classes: usize, seed: u64) -> Result<Dataset> {
    check_phantom_args(size, channels, n_classes)?;
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    let chunk = n.div_ceil(workers).max(1);
    let samples: Vec<Result<PhantomSample>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                s.spawn(move || {
                    (start..(start + chunk).min(n))
                        .map(|i| gen_phantom(sample_seed(seed, i), size, channels, n_classes))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("generator thread panicked"))
            .collect()
    });
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for s in samples {
        let s = s?;
        images.push(s.image);
        labels.push(s.labels);
    }
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            n_samples: n,
            generator: GeneratorParams {
                kind: "phantom".into(),
                seed,
                size,
                channels,
                n_classes,
            },
        },
        images,
        labels,
    })
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let samples = dir.join("samples");
    fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
    for (i, (img, lbl)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        write_container(&image_container(img), &samples.join(format!("{i}.img.tns")))?;
        write_container(&labels_container(lbl), &samples.join(format!("{i}.lbl.tns")))?;
    }
    let path = dir.join("manifest.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &dataset.manifest).map_err(|e| Error::Format(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported",
            manifest.format_version
        )));
    }
    let samples = dir.join("samples");
    let mut images = Vec::with_capacity(manifest.n_samples);
    let mut labels = Vec::with_capacity(manifest.n_samples);
    for i in 0..manifest.n_samples {
        let img = read_image(&samples.join(format!("{i}.img.tns")))?;
        let lbl = read_labels(&samples.join(format!("{i}.lbl.tns")))?;
        if lbl.dim() != (img.height(), img.width()) {
            return Err(Error::shape(format!("sample {i}: labels {:?} vs image {:?}", lbl.dim(), img.dim())));
        }
        images.push(img);
        labels.push(lbl);
    }
    Ok(Dataset {
        manifest,
        images,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_nested() {
        let a = gen_phantom(7, 32, 4, 4).unwrap();
        let b = gen_phantom(7, 32, 4, 4).unwrap();
        assert_eq!(a, b);
        for ((y, x), &l) in a.labels.indexed_iter() {
            for c in 0..4 {
                let v = a.image.data()[[c, y, x]];
                if l == 0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.0 && v <= 1.0);
                }
            }
        }
        assert!((0.1..=0.6).contains(&a.foreground_fraction()));
    }

    #[test]
    fn binary_phantoms_have_one_level() {
        let p = gen_phantom(3, 16, 1, 2).unwrap();
        assert!(p.labels.iter().all(|&l| l == 0 || l == 1));
    }

    #[test]
    fn phantom_argument_checks() {
        assert!(gen_phantom(0, 30, 4, 4).is_err());
        assert!(gen_phantom(0, 32, 0, 4).is_err());
        assert!(gen_phantom(0, 32, 4, 1).is_err());
    }

    #[test]
    fn header_payload_length() {
        let c = Container::new("image", TensorData::F32(ArrayD::zeros(IxDyn(&[4, 32, 32]))));
        assert_eq!(c.header().payload_bytes, 16384);
        let bytes = encode_container(&c);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let h: ContainerHeader = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(h.payload_bytes, 16384);
        assert_eq!(bytes.len() - nl - 1, 16384);
    }

    #[test]
    fn container_errors() {
        let c = Container::new("labels", TensorData::I32(ArrayD::from_elem(IxDyn(&[2, 3]), 5)));
        let bytes = encode_container(&c);
        assert_eq!(decode_container(&bytes).unwrap(), c);
        assert!(matches!(
            decode_container(&bytes[..bytes.len() - 1]),
            Err(Error::Truncation { expected: 24, found: 23 })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_container(&long), Err(Error::Truncation { .. })));
        assert!(matches!(decode_container(b"{not json\n"), Err(Error::Format(_))));
        assert!(matches!(decode_container(b"no newline"), Err(Error::Format(_))));
    }

    #[test]
    fn splits() {
        let f = make_splits(100, 1).unwrap();
        assert!(f.iter().all(|x| x.len() == 20));
        let mut sizes: Vec<usize> = make_splits(103, 1).unwrap().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![20, 20, 21, 21, 21]);
        assert!(matches!(make_splits(4, 0), Err(Error::InvalidSplit(4))));
        assert_eq!(make_splits(50, 9).unwrap(), make_splits(50, 9).unwrap());
    }

    #[test]
    fn subsets() {
        assert_eq!(subset_indices(300, 0.003, 0).unwrap().len(), 1);
        assert_eq!(subset_indices(10, 1.0, 0).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(subset_indices(64, 0.25, 4).unwrap(), subset_indices(64, 0.25, 4).unwrap());
        assert!(subset_indices(10, 0.0, 0).is_err());
        assert!(subset_indices(10, 1.5, 0).is_err());
    }

    #[test]
    fn normalize_keeps_background() {
        let p = gen_phantom(11, 32, 3, 4).unwrap();
        let mut scaled = p.image.clone();
        scaled.data_mut().mapv_inplace(|v| v * 7.0);
        let n = normalize(&scaled).unwrap();
        for (a, b) in p.image.data().iter().zip(n.data()) {
            assert_eq!(*a == 0.0, *b == 0.0);
            assert!((0.0..=1.0).contains(b));
        }
        for c in 0..3 {
            let hi = n.channel(c).iter().cloned().fold(0.0, f64::max);
            assert!((hi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ck = Checkpoint {
            metadata: serde_json::json!({"seed": 3, "steps": 10}),
            tensors: vec![
                ("a.weight".into(), ArrayD::from_shape_fn(IxDyn(&[2, 3]), |d| d[0] as f32 - 0.1 * d[1] as f32)),
                ("b".into(), ArrayD::from_elem(IxDyn(&[]), f32::MIN_POSITIVE)),
            ],
        };
        let bytes = encode_checkpoint(&ck);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
    }
}
