use ndarray::{Array3, ArrayView2};

use crate::error::{Error, Result};

/// Real-valued `C×H×W` image; channels are modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Array3<f64>);

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        ImageTensor(data)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor(Array3::zeros((channels, height, width)))
    }

    pub fn from_shape_vec(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        Array3::from_shape_vec(shape, values)
            .map(ImageTensor)
            .map_err(|e| Error::shape(e.to_string()))
    }

    pub fn channels(&self) -> usize {
        self.0.dim().0
    }

    pub fn height(&self) -> usize {
        self.0.dim().1
    }

    pub fn width(&self) -> usize {
        self.0.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.0.index_axis(ndarray::Axis(0), c)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

impl From<Array3<f64>> for ImageTensor {
    fn from(data: Array3<f64>) -> Self {
        ImageTensor(data)
    }
}
