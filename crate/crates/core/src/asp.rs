//! Attentive statistics pooling.
//!
//! Given a sequence of vectors z_1..z_T, a small tanh network scores each
//! frame, the scores are softmax-normalized into attention weights, and the
//! layer outputs the concatenation of the attention-weighted mean and
//! standard deviation. The same layer is applied over time frames (T-ASP)
//! and over a stack of per-layer summary vectors (L-ASP).
//!
//! The backward pass is derived by hand and verified against central finite
//! differences; see the gradcheck module.

use crate::error::{Error, Result};
use crate::kernel::{matvec_row, s, softmax_slice, Scalar, Tensor};
use crate::rng::Rng;

/// Variance floor applied before the square root, so sigma stays real and
/// its gradient bounded. Where the floor is active the gradient is zero.
pub const VAR_EPSILON: f64 = 1e-8;

/// Learnable attention parameters: e_t = v . tanh(W z_t + b) + k.
#[derive(Clone, Debug, PartialEq)]
pub struct AspParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub v: Tensor<T>,
    pub k: T,
}

impl<T: Scalar> AspParams<T> {
    /// Uniform init in ±1/sqrt(fan_in): W and b use the input width,
    /// v and k the attention width.
    pub fn init(input_dim: usize, attn_width: usize, rng: &mut Rng) -> Self {
        let bound_in = 1.0 / (input_dim as f64).sqrt();
        let bound_attn = 1.0 / (attn_width as f64).sqrt();
        AspParams {
            w: Tensor::uniform(vec![attn_width, input_dim], bound_in, rng),
            b: Tensor::uniform(vec![attn_width], bound_in, rng),
            v: Tensor::uniform(vec![attn_width], bound_attn, rng),
            k: s(rng.uniform_in(-bound_attn, bound_attn)),
        }
    }

    /// Attention width defaults to the input width.
    pub fn init_default(input_dim: usize, rng: &mut Rng) -> Self {
        Self::init(input_dim, input_dim, rng)
    }

    pub fn attn_width(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + self.v.len() + 1
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        AspParams {
            w: Tensor::zeros(self.w.dims().to_vec()),
            b: Tensor::zeros(self.b.dims().to_vec()),
            v: Tensor::zeros(self.v.dims().to_vec()),
            k: T::zero(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> AspParams<U> {
        AspParams {
            w: self.w.cast(),
            b: self.b.cast(),
            v: self.v.cast(),
            k: s(self.k.to_f64().unwrap()),
        }
    }
}

/// Values retained by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct AspCache<T> {
    /// Input sequence, T x D.
    z: Tensor<T>,
    /// tanh pre-attention activations, T x A.
    h: Tensor<T>,
    /// Pre-clamp variance per dimension.
    var: Tensor<T>,
}

/// Forward output: attention weights, weighted statistics, and their
/// concatenation r = [mu; sigma].
#[derive(Clone, Debug)]
pub struct AspSummary<T> {
    pub alpha: Tensor<T>,
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
    pub r: Tensor<T>,
    cache: Option<AspCache<T>>,
}

impl<T: Scalar> AspSummary<T> {
    /// Free the stored activations; backward is no longer possible.
    pub fn drop_cache(&mut self) {
        self.cache = None;
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Pool a T x D sequence into attention-weighted mean and standard
/// deviation.
pub fn asp_forward<T: Scalar>(z: &Tensor<T>, params: &AspParams<T>) -> Result<AspSummary<T>> {
    if z.dims().len() != 2 {
        return Err(Error::Shape {
            op: "asp_forward",
            expected: "rank 2 [T, D]".into(),
            got: format!("{:?}", z.dims()),
        });
    }
    let (t_len, d) = (z.dims()[0], z.dims()[1]);
    if t_len == 0 {
        return Err(Error::EmptyInput("asp_forward"));
    }
    if params.input_dim() != d {
        return Err(Error::Shape {
            op: "asp_forward",
            expected: format!("input dim {}", params.input_dim()),
            got: format!("input dim {d}"),
        });
    }
    let a = params.attn_width();

    let mut h = Tensor::zeros(vec![t_len, a]);
    let mut e = vec![T::zero(); t_len];
    for t in 0..t_len {
        let zt = z.row(t);
        let ht = &mut h.as_mut_slice()[t * a..(t + 1) * a];
        for i in 0..a {
            ht[i] = matvec_row(params.w.row(i), zt, params.b.as_slice()[i]).tanh();
        }
        e[t] = matvec_row(params.v.as_slice(), ht, params.k);
    }
    let alpha = softmax_slice(&e)?;

    let mut mu = vec![T::zero(); d];
    let mut second = vec![T::zero(); d];
    for t in 0..t_len {
        let zt = z.row(t);
        let at = alpha[t];
        for dd in 0..d {
            mu[dd] += at * zt[dd];
            second[dd] += at * zt[dd] * zt[dd];
        }
    }
    let eps = s::<T>(VAR_EPSILON);
    let mut var = vec![T::zero(); d];
    let mut sigma = vec![T::zero(); d];
    for dd in 0..d {
        var[dd] = second[dd] - mu[dd] * mu[dd];
        sigma[dd] = var[dd].max(eps).sqrt();
    }

    let mut r = mu.clone();
    r.extend_from_slice(&sigma);

    Ok(AspSummary {
        alpha: Tensor::from_vec(vec![t_len], alpha)?,
        mu: Tensor::from_vec(vec![d], mu)?,
        sigma: Tensor::from_vec(vec![d], sigma.clone())?,
        r: Tensor::from_vec(vec![2 * d], r)?,
        cache: Some(AspCache {
            z: z.clone(),
            h,
            var: Tensor::from_vec(vec![d], var)?,
        }),
    })
}

/// Backpropagate an upstream gradient on r = [mu; sigma] to the input
/// sequence and every parameter. Where the variance floor was active the
/// sigma path contributes nothing.
pub fn asp_backward<T: Scalar>(
    params: &AspParams<T>,
    summary: &AspSummary<T>,
    grad_r: &Tensor<T>,
) -> Result<(Tensor<T>, AspParams<T>)> {
    let cache = summary
        .cache
        .as_ref()
        .ok_or(Error::MissingCache("asp_backward"))?;
    let (t_len, d) = (cache.z.dims()[0], cache.z.dims()[1]);
    let a = params.attn_width();
    if grad_r.len() != 2 * d {
        return Err(Error::Shape {
            op: "asp_backward",
            expected: format!("grad_r len {}", 2 * d),
            got: format!("len {}", grad_r.len()),
        });
    }

    let alpha = summary.alpha.as_slice();
    let mu = summary.mu.as_slice();
    let sigma = summary.sigma.as_slice();
    let var = cache.var.as_slice();
    let eps = s::<T>(VAR_EPSILON);
    let two = s::<T>(2.0);

    // Split the upstream gradient into the mean and second-moment paths.
    // g_var = dL/dvar through sigma = sqrt(max(var, eps));
    // g_mu_eff folds in the -2 mu g_var term from var = second - mu^2.
    let mut g_var = vec![T::zero(); d];
    let mut g_mu_eff = vec![T::zero(); d];
    for dd in 0..d {
        let g_sigma = grad_r.as_slice()[d + dd];
        g_var[dd] = if var[dd] > eps {
            g_sigma / (two * sigma[dd])
        } else {
            T::zero()
        };
        g_mu_eff[dd] = grad_r.as_slice()[dd] - two * g_var[dd] * mu[dd];
    }

    // Gradient w.r.t. the attention weights, then softmax backward.
    let mut g_alpha = vec![T::zero(); t_len];
    for t in 0..t_len {
        let zt = cache.z.row(t);
        let mut acc = T::zero();
        for dd in 0..d {
            acc += g_mu_eff[dd] * zt[dd] + g_var[dd] * zt[dd] * zt[dd];
        }
        g_alpha[t] = acc;
    }
    let mut dot = T::zero();
    for t in 0..t_len {
        dot += alpha[t] * g_alpha[t];
    }
    let g_e: Vec<T> = (0..t_len).map(|t| alpha[t] * (g_alpha[t] - dot)).collect();

    // Through e_t = v . tanh(W z_t + b) + k into params and the input.
    let mut grads = params.zeros_like();
    let mut grad_z = Tensor::zeros(vec![t_len, d]);
    let mut g_a_t = vec![T::zero(); a];
    for t in 0..t_len {
        let zt = cache.z.row(t);
        let ht = cache.h.row(t);
        grads.k += g_e[t];
        for i in 0..a {
            grads.v.as_mut_slice()[i] += g_e[t] * ht[i];
            g_a_t[i] = g_e[t] * params.v.as_slice()[i] * (T::one() - ht[i] * ht[i]);
            grads.b.as_mut_slice()[i] += g_a_t[i];
        }
        for i in 0..a {
            let w_row = params.w.row(i);
            let gw_row = &mut grads.w.as_mut_slice()[i * d..(i + 1) * d];
            let gz_row = &mut grad_z.as_mut_slice()[t * d..(t + 1) * d];
            for dd in 0..d {
                gw_row[dd] += g_a_t[i] * zt[dd];
                gz_row[dd] += w_row[dd] * g_a_t[i];
            }
        }
        // Direct statistics path.
        let gz_row = &mut grad_z.as_mut_slice()[t * d..(t + 1) * d];
        for dd in 0..d {
            gz_row[dd] += alpha[t] * (g_mu_eff[dd] + two * g_var[dd] * zt[dd]);
        }
    }

    Ok((grad_z, grads))
}
