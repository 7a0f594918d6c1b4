use rand::Rng;
use sha2::{Digest, Sha256};

/// Single-sample activation in channel-major (`C × H × W`) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data does not match shape");
        Self { c, h, w, data }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Inverse of [`Tensor::concat`]: the first `c_first` channels and the rest.
    pub fn split(&self, c_first: usize) -> (Tensor, Tensor) {
        let n = self.h * self.w;
        let (a, b) = self.data.split_at(c_first * n);
        (
            Tensor::from_vec(c_first, self.h, self.w, a.to_vec()),
            Tensor::from_vec(self.c - c_first, self.h, self.w, b.to_vec()),
        )
    }
}

/// Shape-tagged list of learnable tensors, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub values: Vec<Vec<f32>>,
    pub shapes: Vec<Vec<usize>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            shapes: Vec::new(),
        }
    }

    /// Registers a tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(&mut self, shape: Vec<usize>, bound: f32, rng: &mut impl Rng) -> usize {
        let n = shape.iter().product();
        let v = if bound > 0.0 {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        } else {
            vec![0.0; n]
        };
        self.values.push(v);
        self.shapes.push(shape);
        self.values.len() - 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.values.iter().map(|v| vec![0.0; v.len()]).collect())
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.values.iter().flatten().copied().collect()
    }

    /// Refills from a flat buffer with the same total length.
    pub fn load_flat(&mut self, flat: &[f32]) -> bool {
        if flat.len() != self.count() {
            return false;
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        true
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers matching a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.0 {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}
