//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records operations during the forward pass and replays them in
//! reverse to accumulate gradients. Everything is 64-bit and single-threaded;
//! independent tapes may run concurrently, a single tape may not be shared.

mod tape;

pub use tape::{Tape, TensorId};

use thiserror::Error;

/// Additive attention-mask value standing in for minus infinity. Kept finite
/// so mask arithmetic never produces NaN; [`Tape::masked_softmax`] treats any
/// non-zero mask entry as "prevent from attending" and assigns exact zero
/// weight.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("masked_softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("embedding lookup: id {id} out of range for table with {rows} rows")]
    IndexOutOfRange { id: usize, rows: usize },
    #[error("log: input {value} is not strictly positive")]
    LogDomain { value: f64 },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward: loss node is not on this tape")]
    DetachedLoss,
    #[error("backward: tape already consumed by a previous backward pass")]
    BackwardAlreadyRun,
    #[error("sgd step: parameter '{name}' has no gradient")]
    MissingGradient { name: String },
    #[error("sgd step: clip threshold must be positive, got {value}")]
    BadClipThreshold { value: f64 },
}

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor values length {} does not match shape {:?}",
            values.len(),
            shape
        );
        Tensor {
            shape,
            values,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Row count for 2-d tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count for 2-d tensors.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        assert_eq!(grad.len(), self.values.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One step of stochastic gradient descent with global-norm gradient
/// clipping over a set of named parameters.
///
/// The norm is computed over all parameters together; if it exceeds
/// `clip_threshold` every gradient is scaled by `threshold / norm` before the
/// update `p -= lr * g`. Gradients are cleared afterwards. Each parameter
/// must carry a gradient or the step fails without touching anything.
pub fn sgd_step_with_clip(
    params: &mut [(String, &mut Tensor)],
    lr: f64,
    clip_threshold: f64,
) -> Result<(), AutodiffError> {
    if !(clip_threshold > 0.0) {
        return Err(AutodiffError::BadClipThreshold {
            value: clip_threshold,
        });
    }
    for (name, t) in params.iter() {
        if t.grad.is_none() {
            return Err(AutodiffError::MissingGradient { name: name.clone() });
        }
    }
    let mut sq_sum = 0.0;
    for (_, t) in params.iter() {
        for g in t.grad.as_ref().unwrap() {
            sq_sum += g * g;
        }
    }
    let norm = sq_sum.sqrt();
    let scale = if norm > clip_threshold {
        clip_threshold / norm
    } else {
        1.0
    };
    for (_, t) in params.iter_mut() {
        let grad = t.grad.take().unwrap();
        for (p, g) in t.values.iter_mut().zip(grad.iter()) {
            *p -= lr * scale * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_below_threshold_leaves_gradients_unscaled() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]);
        p.set_grad(vec![0.3, 0.4]); // norm 0.5
        let mut params = vec![("p".to_string(), &mut p)];
        sgd_step_with_clip(&mut params, 1.0, 1.0).unwrap();
        assert_eq!(p.values(), &[1.0 - 0.3, 2.0 - 0.4]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn sgd_clips_to_unit_global_norm() {
        // grad [3, 4] has norm 5; threshold 1.0 scales it to [0.6, 0.8].
        let mut p = Tensor::new(vec![2], vec![0.0, 0.0]);
        p.set_grad(vec![3.0, 4.0]);
        let mut params = vec![("p".to_string(), &mut p)];
        sgd_step_with_clip(&mut params, 1.0, 1.0).unwrap();
        assert!((p.values()[0] - (-0.6)).abs() < 1e-15);
        assert!((p.values()[1] - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_lr_leaves_parameters_unchanged() {
        let mut p = Tensor::new(vec![2], vec![1.5, -2.5]);
        p.set_grad(vec![10.0, 10.0]);
        let mut params = vec![("p".to_string(), &mut p)];
        sgd_step_with_clip(&mut params, 0.0, 1.0).unwrap();
        assert_eq!(p.values(), &[1.5, -2.5]);
    }

    #[test]
    fn sgd_clips_across_parameters_jointly() {
        let mut a = Tensor::new(vec![1], vec![0.0]);
        let mut b = Tensor::new(vec![1], vec![0.0]);
        a.set_grad(vec![3.0]);
        b.set_grad(vec![4.0]);
        let mut params = vec![("a".to_string(), &mut a), ("b".to_string(), &mut b)];
        sgd_step_with_clip(&mut params, 1.0, 1.0).unwrap();
        assert!((a.values()[0] - (-0.6)).abs() < 1e-15);
        assert!((b.values()[0] - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn sgd_missing_gradient_is_an_error() {
        let mut a = Tensor::new(vec![1], vec![0.0]);
        let mut params = vec![("lonely".to_string(), &mut a)];
        let err = sgd_step_with_clip(&mut params, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, AutodiffError::MissingGradient { ref name } if name == "lonely"));
    }
}
