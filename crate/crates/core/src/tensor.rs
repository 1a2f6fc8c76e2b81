use crate::error::{Error, Result};

/// Dense row-major `batch × channels × length` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor3<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![T::default(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape("Tensor3::from_vec", n, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let [b, h, l] = shape;
        let mut data = Vec::with_capacity(b * h * l);
        for i in 0..b {
            for j in 0..h {
                for k in 0..l {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { shape, data }
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

    pub fn len(&self) -> usize {
        self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The length-`L` row for batch entry `b`, channel `h`.
    pub fn row(&self, b: usize, h: usize) -> &[T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + h) * l;
        &self.data[start..start + l]
    }

    pub fn row_mut(&mut self, b: usize, h: usize) -> &mut [T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + h) * l;
        &mut self.data[start..start + l]
    }

    /// All channels of batch entry `b`, as an `H × L` block.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[1] * self.shape[2];
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, h: usize, l: usize) -> T {
        self.data[(b * self.shape[1] + h) * self.shape[2] + l]
    }
}
