//! Image and embedding value types.

use crate::error::{Error, Result};

/// A decoded image in height × width × channels layout, values in `[0, 1]`
/// before augmentation. Augmentations may push values slightly outside that
/// range; they stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel value at index {pos}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// An encoder output. Raw encoder outputs are not normalized; use
/// [`EmbeddingVector::normalized`] wherever angular geometry applies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("embedding must have at least one component".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding has non-finite components".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn normalized(&self) -> Result<Self> {
        normalize(&self.0).map(Self)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-normalizes `v`. Zero (or subnormal) vectors have no direction.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if !n.is_finite() || n <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_image_shapes() {
        assert!(matches!(ImageTensor::new(0, 2, 3, vec![]), Err(Error::Shape(_))));
        assert!(matches!(ImageTensor::new(2, 2, 3, vec![0.0; 11]), Err(Error::Shape(_))));
        assert!(matches!(
            ImageTensor::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn normalize_has_unit_norm() {
        let e = EmbeddingVector::new(vec![3.0, 4.0, -12.0]).unwrap();
        let n = e.normalized().unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-12);
        assert!((n.values()[0] - 3.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let e = EmbeddingVector::new(vec![0.0; 4]).unwrap();
        assert!(matches!(e.normalized(), Err(Error::Degenerate(_))));
    }
}
