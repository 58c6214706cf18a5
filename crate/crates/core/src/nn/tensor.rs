use super::Scalar;
use crate::error::{bail, Result};

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            bail!(
                Shape,
                "tensor of shape {shape:?} needs {want} values, got {}",
                data.len()
            );
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn offset(&self, [n, c, y, x]: [usize; 4]) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> S {
        self.data[self.offset(idx)]
    }

    /// Contiguous `C*H*W` slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[S] {
        let step = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * step..(n + 1) * step]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [S] {
        let step = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * step..(n + 1) * step]
    }

    pub fn add_assign(&mut self, other: &Tensor4<S>) {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor4<S>]) -> Result<Self> {
        let Some(first) = items.first() else {
            bail!(Shape, "cannot stack zero tensors");
        };
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                bail!(Shape, "cannot stack {:?} with {:?}", t.shape, first.shape);
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }
}
