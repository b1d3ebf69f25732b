//! Dense numeric kernel: tensors, a few linear-algebra and nonlinearity
//! primitives, and a central-finite-difference gradient estimator.
//!
//! Everything is generic over [`Scalar`] so the same layer code runs in
//! 32-bit mode (training) and 64-bit mode (gradient checking, where finite
//! differences need the extra precision). Layout is row-major with the last
//! index fastest; layer-frame-dim stacks keep the layer index outermost.

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type for all kernels: f32 or f64.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + fmt::Debug + fmt::Display + Default + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast an f64 constant into the active scalar type.
#[inline]
pub fn s<T: Scalar>(v: f64) -> T {
    T::from(v).expect("f64 -> scalar cast")
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "Tensor::from_vec",
                expected: format!("{dims:?} ({expected} values, all extents >= 1)"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![T::zero(); n],
        }
    }

    /// Filled with uniform draws in ±bound.
    pub fn uniform(dims: Vec<usize>, bound: f64, rng: &mut crate::rng::Rng) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| s(rng.uniform_in(-bound, bound))).collect();
        Tensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// 2-D element accessor; callers guarantee the tensor is rank 2.
    #[inline]
    pub fn at2(&self, row: usize, col: usize) -> T {
        self.data[row * self.dims[1] + col]
    }

    /// Row slice of a rank-2 tensor.
    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        let w = self.dims[1];
        &self.data[row * w..(row + 1) * w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// self += other * scale, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lossy precision change (f64 -> f32 rounds, f32 -> f64 is exact).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| s(x.to_f64().unwrap())).collect(),
        }
    }
}

/// y = W x + b for W of shape [rows, cols], x of len cols, b of len rows.
pub fn linear<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.dims().len() != 2 || x.dims().len() != 1 || b.dims().len() != 1 {
        return Err(Error::Shape {
            op: "linear",
            expected: "W rank 2, x rank 1, b rank 1".into(),
            got: format!("{:?}, {:?}, {:?}", w.dims(), x.dims(), b.dims()),
        });
    }
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    if x.len() != cols || b.len() != rows {
        return Err(Error::Shape {
            op: "linear",
            expected: format!("x len {cols}, b len {rows}"),
            got: format!("x len {}, b len {}", x.len(), b.len()),
        });
    }
    let mut out = vec![T::zero(); rows];
    for (r, out_r) in out.iter_mut().enumerate() {
        *out_r = matvec_row(w.row(r), x.as_slice(), b.as_slice()[r]);
    }
    Tensor::from_vec(vec![rows], out)
}

/// Dot product of one weight row with x, plus the bias term.
#[inline]
pub fn matvec_row<T: Scalar>(w_row: &[T], x: &[T], bias: T) -> T {
    let mut acc = bias;
    for (&w, &v) in w_row.iter().zip(x.iter()) {
        acc += w * v;
    }
    acc
}

/// Numerically stable softmax over a slice (max subtraction).
pub fn softmax_slice<T: Scalar>(e: &[T]) -> Result<Vec<T>> {
    if e.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = e.iter().cloned().fold(e[0], T::max);
    let exps: Vec<T> = e.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().fold(T::zero(), |acc, &x| acc + x);
    Ok(exps.into_iter().map(|x| x / sum).collect())
}

/// Softmax over a rank-1 tensor.
pub fn softmax<T: Scalar>(e: &Tensor<T>) -> Result<Tensor<T>> {
    let out = softmax_slice(e.as_slice())?;
    Tensor::from_vec(vec![out.len()], out)
}

/// Elementwise tanh.
pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Central-difference gradient of a scalar function, one probe pair per
/// coordinate: g[i] = (f(x + h e_i) - f(x - h e_i)) / 2h.
///
/// 64-bit only; 32-bit probes would drown the signal in rounding noise.
pub fn finite_diff_grad<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<f64>,
{
    assert!(h > 0.0, "finite_diff_grad: step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims().to_vec());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];

        probe.as_mut_slice()[i] = orig + h;
        let f_plus = f(&probe)?;
        probe.as_mut_slice()[i] = orig - h;
        let f_minus = f(&probe)?;
        probe.as_mut_slice()[i] = orig;

        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_grad probe",
                index: i,
            });
        }
        grad.as_mut_slice()[i] = (f_plus - f_minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error with an absolute floor, used by every gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn linear_identity() {
        let w = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let x = Tensor::from_vec(vec![2], vec![3.0, -1.0]).unwrap();
        let y = linear(&w, &x, &b).unwrap();
        assert_eq!(y.as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_zero_map_returns_bias() {
        let w = Tensor::zeros(vec![2, 3]);
        let b = Tensor::from_vec(vec![2], vec![5.0, 7.0]).unwrap();
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = linear(&w, &x, &b).unwrap();
        assert_eq!(y.as_slice(), &[5.0, 7.0]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let w = Tensor::<f64>::uniform(vec![3, 2], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(vec![3], 1.0, &mut rng);
        let x = Tensor::<f64>::uniform(vec![2], 1.0, &mut rng);
        let y = linear(&w, &x, &b).unwrap();

        // Independent scalar evaluation.
        for a in 0..3 {
            let mut want = b.as_slice()[a];
            for d in 0..2 {
                want += w.at2(a, d) * x.as_slice()[d];
            }
            assert!((y.as_slice()[a] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_shape_error_names_extents() {
        let w = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2]);
        let x = Tensor::zeros(vec![4]);
        let err = linear(&w, &x, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn softmax_uniform_on_constant() {
        let e = Tensor::from_vec(vec![3], vec![2.5f64, 2.5, 2.5]).unwrap();
        let p = softmax(&e).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let e = Tensor::from_vec(vec![4], vec![0.3f64, -1.2, 2.0, 0.0]).unwrap();
        let shifted = e.map(|x| x + 100.0);
        let a = softmax(&e).unwrap();
        let b = softmax(&shifted).unwrap();
        for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // exp(0) = 1 and exp(ln 3) = 3, so the masses are 1/4 and 3/4.
        let e = Tensor::from_vec(vec![2], vec![0.0f64, 3.0f64.ln()]).unwrap();
        let p = softmax(&e).unwrap();
        assert!((p.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one_strictly_positive() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let n = 1 + (rng.next_u64() % 8) as usize;
            let e = Tensor::<f64>::uniform(vec![n], 10.0, &mut rng);
            let p = softmax(&e).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.as_slice().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(softmax_slice::<f64>(&[]).is_err());
    }

    #[test]
    fn finite_diff_square() {
        let x = Tensor::from_vec(vec![1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.as_slice()[0] * t.as_slice()[0]), &x, 1e-5).unwrap();
        assert!((g.as_slice()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_sine_at_zero() {
        let x = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.as_slice()[0].sin()), &x, 1e-5).unwrap();
        assert!((g.as_slice()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_quadratic_form() {
        // f(x) = x' A x has gradient (A + A') x.
        let mut rng = Rng::new(77);
        let a = Tensor::<f64>::uniform(vec![4, 4], 1.0, &mut rng);
        let x = Tensor::<f64>::uniform(vec![4], 1.0, &mut rng);

        let f = |t: &Tensor<f64>| {
            let mut acc = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    acc += t.as_slice()[i] * a.at2(i, j) * t.as_slice()[j];
                }
            }
            Ok(acc)
        };
        let g = finite_diff_grad(f, &x, 1e-5).unwrap();

        for i in 0..4 {
            let mut want = 0.0;
            for j in 0..4 {
                want += (a.at2(i, j) + a.at2(j, i)) * x.as_slice()[j];
            }
            assert!((g.as_slice()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_exact_on_quadratics() {
        // Central differences are exact for polynomials of degree <= 2
        // up to floating-point rounding.
        let x = Tensor::from_vec(vec![2], vec![1.5, -0.75]).unwrap();
        let f = |t: &Tensor<f64>| {
            let (a, b) = (t.as_slice()[0], t.as_slice()[1]);
            Ok(2.0 * a * a - 3.0 * a * b + b + 4.0)
        };
        let g = finite_diff_grad(f, &x, 1e-3).unwrap();
        let want0 = 4.0 * 1.5 - 3.0 * -0.75;
        let want1 = -3.0 * 1.5 + 1.0;
        assert!((g.as_slice()[0] - want0).abs() < 1e-9);
        assert!((g.as_slice()[1] - want1).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_reports_bad_coordinate() {
        // ln goes NaN only when the second coordinate is probed downward.
        let x = Tensor::from_vec(vec![2], vec![0.5, 1e-6]).unwrap();
        let f = |t: &Tensor<f64>| Ok(t.as_slice()[1].ln() + t.as_slice()[0]);
        let err = finite_diff_grad(f, &x, 1e-5).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn kernels_deterministic() {
        let mut rng = Rng::new(21);
        let w = Tensor::<f32>::uniform(vec![5, 4], 1.0, &mut rng);
        let b = Tensor::<f32>::uniform(vec![5], 1.0, &mut rng);
        let x = Tensor::<f32>::uniform(vec![4], 1.0, &mut rng);
        let y1 = linear(&w, &x, &b).unwrap();
        let y2 = linear(&w, &x, &b).unwrap();
        assert_eq!(y1.as_slice(), y2.as_slice());
    }
}
