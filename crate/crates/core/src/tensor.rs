//! Dense row-major tensor of `f64` values.

use std::fmt;

use crate::error::{Error, Result};

/// Dense N-dimensional array with an explicit shape.
///
/// `data.len()` always equals the product of the extents, and every extent is
/// positive. A rank-0 tensor (empty shape) holds a single scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = shape.iter().position(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extent {pos} is zero in shape {}",
                ShapeDisplay(&shape)
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {} needs {expected} values, got {}",
                ShapeDisplay(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&e| e > 0),
            "zero extent in {}",
            ShapeDisplay(shape)
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            off = off * e + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Sub-tensor along the leading axis, copied.
    pub fn row(&self, i: usize) -> Option<Tensor> {
        let (&n, rest) = self.shape.split_first()?;
        if i >= n {
            return None;
        }
        let len: usize = rest.iter().product();
        let shape = if rest.is_empty() {
            vec![1]
        } else {
            rest.to_vec()
        };
        Some(Tensor {
            shape,
            data: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    pub fn shape_string(&self) -> String {
        ShapeDisplay(&self.shape).to_string()
    }
}

/// Formats a shape as `28x28x32`.
pub struct ShapeDisplay<'a>(pub &'a [usize]);

impl fmt::Display for ShapeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("scalar");
        }
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 2, 3]), Some(23.0));
        assert_eq!(t.get(&[0, 1, 0]), Some(4.0));
        assert_eq!(t.get(&[2, 0, 0]), None);
    }

    #[test]
    fn row_slices_leading_axis() {
        let t = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.row(1).unwrap();
        assert_eq!(r.shape(), &[2]);
        assert_eq!(r.data(), &[3.0, 4.0]);
    }

    #[test]
    fn shape_display() {
        assert_eq!(ShapeDisplay(&[28, 28, 32]).to_string(), "28x28x32");
        assert_eq!(ShapeDisplay(&[1024]).to_string(), "1024");
    }
}
