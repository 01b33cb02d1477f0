use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (training) and
/// `f64` (gradient checking).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn real_exp(self) -> Self {
        self.exp()
    }

    fn real_ln(self) -> Self {
        self.ln()
    }

    fn real_tanh(self) -> Self {
        self.tanh()
    }

    fn real_div(self, rhs: Self) -> Self {
        self / rhs
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn of(x: f64) -> Self {
        x
    }
}

/// Double-double scalar, used only to evaluate finite-difference oracles.
/// The library's own transcendentals stop near `f64` accuracy, so exp, ln
/// and tanh are replaced with full-width versions.
impl Real for TwoFloat {
    const NAME: &'static str = "f64x2";

    fn of(x: f64) -> Self {
        TwoFloat::from(x)
    }

    fn as_f64(self) -> f64 {
        self.hi() + self.lo()
    }

    fn real_exp(self) -> Self {
        dd_exp(self)
    }

    fn real_ln(self) -> Self {
        if self.hi() <= 0.0 {
            return TwoFloat::from(f64::NAN);
        }
        let mut y = TwoFloat::from(self.hi().ln());
        for _ in 0..2 {
            y = y + self * dd_exp(-y) - 1.0;
        }
        y
    }

    fn real_div(self, rhs: Self) -> Self {
        // One residual correction on top of the library quotient.
        let q = self / rhs;
        q + (self - q * rhs) / rhs.hi()
    }

    fn real_tanh(self) -> Self {
        let t = dd_exp(TwoFloat::from(-2.0) * self.abs());
        let v = (TwoFloat::from(1.0) - t).real_div(TwoFloat::from(1.0) + t);
        if self.hi() < 0.0 {
            -v
        } else {
            v
        }
    }
}

fn dd_exp(a: TwoFloat) -> TwoFloat {
    if a.hi() > 709.0 {
        return TwoFloat::from(f64::INFINITY);
    }
    if a.hi() < -745.0 {
        return TwoFloat::from(0.0);
    }
    let ln2 = TwoFloat::try_from((std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17)).expect("ln 2");
    let k = (a.hi() / std::f64::consts::LN_2).round();
    // |r| <= ln(2)/2, scaled down by 2^10 before the series.
    let r = (a - ln2 * k) * (1.0 / 1024.0);
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=12 {
        term = term * r / (n as f64);
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// Which scalar type a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "32" | "single" => Ok(Precision::F32),
            "f64" | "64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Dense row-major N-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn full(shape: &[usize], value: R) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_vec(data: Vec<R>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| R::of(x)).collect())
    }

    pub fn scalar(value: R) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| S::of(x.as_f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }
}

impl<R: Debug> Debug for Tensor<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{:?}, ...]", &self.data[..16])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_shape() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn precision_parse() {
        assert_eq!(Precision::parse("f64").unwrap(), Precision::F64);
        assert_eq!(Precision::parse("32").unwrap(), Precision::F32);
        assert!(Precision::parse("f16").is_err());
    }
}
