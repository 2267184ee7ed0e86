//! Dense row-major f64 tensors. These are plain value types; differentiation
//! happens on the tape, which stores one `Tensor` per node.
//!
//! Construction rejects non-finite values so a NaN/Inf produced by any op is
//! caught at the node that created it rather than three modules downstream.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "tensor shape {:?} wants {} values, got {}",
            shape,
            n,
            data.len()
        );
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            panic!("non-finite value {bad} in tensor of shape {shape:?}");
        }
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1, 1], vec![v])
    }

    /// 1 x n row vector.
    pub fn row(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::new(vec![1, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access skips the finiteness check; callers that write raw values
    /// (optimizer updates, finite-difference probes) are expected to keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows/cols of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected rank-2, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    /// Same data, new shape; element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(
                f,
                "Tensor{:?}[{} values, first {:?}]",
                self.shape,
                self.data.len(),
                &self.data[..4]
            )
        }
    }
}

/// A complex tensor as a pair of equally shaped real tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> ComplexTensor {
        assert_eq!(re.shape(), im.shape(), "re/im shape mismatch");
        ComplexTensor { re, im }
    }
}
