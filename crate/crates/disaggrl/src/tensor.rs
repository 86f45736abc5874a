//! Dense row-major f32 tensor: the common currency of protocol payloads,
//! observations, and network math.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("{context}: data length {got} does not match shape product {want}")]
    Length {
        context: &'static str,
        got: usize,
        want: usize,
    },
    #[error("{context}: expected shape {want:?}, got {got:?}")]
    Mismatch {
        context: &'static str,
        want: Vec<usize>,
        got: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, ShapeError> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(ShapeError::Length {
                context: "Tensor::from_vec",
                got: data.len(),
                want,
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Debug-build guard for the "finite after any op" invariant.
#[inline]
pub fn debug_assert_finite(xs: &[f32], context: &str) {
    if cfg!(debug_assertions) {
        for (i, v) in xs.iter().enumerate() {
            assert!(v.is_finite(), "non-finite value {v} at [{i}] in {context}");
        }
    }
}
