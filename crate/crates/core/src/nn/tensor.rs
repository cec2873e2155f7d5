use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major `batch × channels × time` array of 64-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericBatch {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl NumericBatch {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        NumericBatch {
            shape: [batch, channels, time],
            data: vec![0.0; batch * channels * time],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("every dimension must be >= 1, got {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(NumericBatch { shape, data })
    }

    /// Single-channel batch from equal-length rows.
    pub fn from_rows<'a, I>(rows: I, time: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut data = Vec::new();
        let mut batch = 0;
        for row in rows {
            if row.len() != time {
                return Err(Error::SegmentLength {
                    expected: time,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
            batch += 1;
        }
        Self::from_vec([batch, 1, time], data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn time(&self) -> usize {
        self.shape[2]
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The time series at `(b, c)`.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let t = self.shape[2];
        let start = (b * self.shape[1] + c) * t;
        &self.data[start..start + t]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let t = self.shape[2];
        let start = (b * self.shape[1] + c) * t;
        &mut self.data[start..start + t]
    }

    /// All channels of sample `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn add_assign(&mut self, other: &NumericBatch) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("cannot add {:?} to {:?}", other.shape, self.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, fill: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![fill; n])
    }

    /// Zero-mean normal values with standard deviation `sqrt(2 / fan_in)`.
    pub fn kaiming(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
