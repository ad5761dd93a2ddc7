//! Dense tensor container for images, variance maps and network activations.

use ndarray::Array3;

use crate::error::{Error, Result};

/// A `(channels, height, width)` tensor of `f32`, stored row-major.
///
/// Image-valued tensors keep every element in `[0, 1]`; other uses (variance
/// maps, activations) are unconstrained. All dimensions are at least 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f32>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidParam(format!(
                "tensor dimensions must be >= 1, got ({c}, {h}, {w})"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels >= 1 && height >= 1 && width >= 1);
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        Self {
            data: Array3::from_shape_fn((channels, height, width), |(c, y, x)| f(c, y, x)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contiguous row-major view of the payload.
    pub fn as_slice(&self) -> &[f32] {
        self.data.as_slice().expect("ImageTensor is contiguous")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f32] {
        self.data.as_slice_mut().expect("ImageTensor is contiguous")
    }

    /// True when every element lies in `[0, 1]`.
    pub fn is_image_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Clamp every element into `[0, 1]`.
    pub fn clamp01(mut self) -> Self {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Widen to `f64`, used at the objective boundary where all loss math
    /// accumulates in double precision.
    pub fn to_f64(&self) -> Array3<f64> {
        self.data.mapv(|v| v as f64)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }
}

impl std::ops::Index<(usize, usize, usize)> for ImageTensor {
    type Output = f32;
    fn index(&self, idx: (usize, usize, usize)) -> &f32 {
        &self.data[idx]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for ImageTensor {
    fn index_mut(&mut self, idx: (usize, usize, usize)) -> &mut f32 {
        &mut self.data[idx]
    }
}
