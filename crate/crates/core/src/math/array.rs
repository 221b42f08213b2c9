use serde::{Deserialize, Serialize};

use super::MathError;

/// Dense 1-D or 2-D array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealArray {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 2,
            "RealArray supports 1-D and 2-D shapes, got {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Builds an array, rejecting length mismatches and non-finite entries.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, MathError> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(MathError::Shape(format!("unsupported rank {}", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MathError::Shape(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(MathError::NonFinite {
                block: format!("array entry {i}"),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.data[row * cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[row * c..(row + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &RealArray) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `y = W x + b` for `W: [R×C]`, `x: [C]`, `b: [R]`.
pub fn affine(w: &RealArray, x: &[f64], b: &[f64]) -> Result<Vec<f64>, MathError> {
    if w.shape().len() != 2 {
        return Err(MathError::Shape(format!(
            "affine weight must be 2-D, got {:?}",
            w.shape()
        )));
    }
    let (r, c) = (w.rows(), w.cols());
    if x.len() != c || b.len() != r {
        return Err(MathError::Shape(format!(
            "affine: W is {r}x{c}, x has {}, b has {}",
            x.len(),
            b.len()
        )));
    }
    let y: Vec<f64> = (0..r)
        .map(|i| {
            w.row(i)
                .iter()
                .zip(x)
                .fold(b[i], |acc, (wij, xj)| acc + wij * xj)
        })
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite {
            block: "affine output".into(),
        });
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_zero_weights_returns_bias() {
        let w = RealArray::zeros(&[2, 3]);
        assert_eq!(affine(&w, &[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn affine_identity() {
        let w = RealArray::identity(2);
        assert_eq!(affine(&w, &[7.0, -1.0], &[0.0, 0.0]).unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn affine_hand_evaluated() {
        let w = RealArray::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(affine(&w, &[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![4.0, 7.0]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let w = RealArray::zeros(&[2, 3]);
        assert!(matches!(
            affine(&w, &[1.0, 2.0], &[0.0, 0.0]),
            Err(MathError::Shape(_))
        ));
        assert!(matches!(
            affine(&w, &[1.0, 2.0, 3.0], &[0.0]),
            Err(MathError::Shape(_))
        ));
    }

    #[test]
    fn from_vec_validates() {
        assert!(RealArray::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(RealArray::from_vec(&[1], vec![f64::NAN]).is_err());
        assert!(RealArray::from_vec(&[2, 1], vec![1.0, 2.0]).is_ok());
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            w in prop::collection::vec(-2.0f64..2.0, 12),
            x in prop::collection::vec(-2.0f64..2.0, 4),
            y in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 3),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let w = RealArray::matrix(3, 4, w);
            let zero = [0.0; 3];
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
            let lhs = affine(&w, &mix, &b).unwrap();
            let fx = affine(&w, &x, &zero).unwrap();
            let fy = affine(&w, &y, &zero).unwrap();
            for i in 0..3 {
                let rhs = alpha * fx[i] + beta * fy[i] + b[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
