use std::fmt;

use rand::Rng;

/// Standard normal draw via Box-Muller. Kept local so seeded streams stay
/// stable regardless of distribution-crate versions.
pub fn randn_f64(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Element type for all tensor math. `f32` in production, `f64` for
/// finite-difference gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::ToPrimitive + fmt::Debug + Send + Sync + 'static
{
    fn fl(x: f64) -> Self {
        num_traits::FromPrimitive::from_f64(x).unwrap()
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shape of a tensor, rank 0..=4. Rank-4 dims are (batch, channel, h, w).
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    dims: [usize; 4],
    rank: usize,
}

impl Shape {
    pub fn scalar() -> Self {
        Shape { dims: [1, 1, 1, 1], rank: 0 }
    }

    pub fn d1(a: usize) -> Self {
        Shape { dims: [a, 1, 1, 1], rank: 1 }
    }

    pub fn d2(a: usize, b: usize) -> Self {
        Shape { dims: [a, b, 1, 1], rank: 2 }
    }

    pub fn d4(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { dims: [n, c, h, w], rank: 4 }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank.max(1)]
    }

    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

/// Dense tensor, row-major within (n, c, h, w).
#[derive(Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![F::zero(); shape.len()] }
    }

    pub fn full(shape: Shape, v: F) -> Self {
        Tensor { shape, data: vec![v; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data length must match shape");
        Tensor { shape, data }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![v] }
    }

    /// Gaussian init scaled by `std`.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len())
            .map(|_| F::fl(randn_f64(rng) * std))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() requires a single-element tensor");
        self.data[0]
    }

    pub fn reshaped(&self, shape: Shape) -> Tensor<F> {
        assert_eq!(shape.len(), self.data.len(), "reshape must preserve length");
        Tensor { shape, data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|x| x.as_f64() as f32).collect()
    }

    pub fn from_f32(shape: Shape, data: &[f32]) -> Self {
        assert_eq!(shape.len(), data.len());
        Tensor { shape, data: data.iter().map(|&x| F::fl(x as f64)).collect() }
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}
