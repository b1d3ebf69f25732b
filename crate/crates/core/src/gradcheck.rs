//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check draws random small instances, compares the analytic gradient
//! of a linear probe of the output against central differences in 64-bit,
//! and reports the worst relative error seen. The same suite backs both the
//! test gate and the `gradcheck` command.

use crate::asp::{asp_backward, asp_forward, AspParams};
use crate::error::Result;
use crate::frontend::LayeredEmbeddings;
use crate::kernel::{finite_diff_grad, rel_err, Tensor};
use crate::mfa::{mfa_backward, mfa_forward, Logits, MfaParams, ModelParams};
use crate::rng::Rng;
use crate::train::cross_entropy;
use crate::formats::Label;

/// Central-difference step. 64-bit only; smaller steps drown in rounding.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error (absolute floor 1e-4 inside rel_err).
pub const GRAD_TOL: f64 = 1e-4;

/// Worst-case result of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

fn dims_in(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

struct Worst {
    groups: Vec<(&'static str, f64)>,
}

impl Worst {
    fn new(names: &[&'static str]) -> Self {
        Worst {
            groups: names.iter().map(|&n| (n, 0.0)).collect(),
        }
    }

    fn update(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        let slot = self
            .groups
            .iter_mut()
            .find(|(n, _)| *n == name)
            .expect("known group");
        for (&a, &n) in analytic.iter().zip(numeric) {
            slot.1 = slot.1.max(rel_err(a, n));
        }
    }

    fn outcomes(self, trials: usize) -> Vec<CheckOutcome> {
        self.groups
            .into_iter()
            .map(|(name, max_rel_err)| CheckOutcome {
                name,
                trials,
                max_rel_err,
            })
            .collect()
    }
}

/// Pooling layer: gradients w.r.t. the input sequence and all four
/// parameter groups.
pub fn check_asp(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let mut worst = Worst::new(&["asp.Z", "asp.W", "asp.b", "asp.v", "asp.k"]);

    for _ in 0..trials {
        let t_len = dims_in(&mut rng, 2, 5);
        let d = dims_in(&mut rng, 2, 4);
        let a = dims_in(&mut rng, 2, 5);
        let params = AspParams::<f64>::init(d, a, &mut rng);
        let z = Tensor::<f64>::uniform(vec![t_len, d], 1.5, &mut rng);
        let probe = Tensor::<f64>::uniform(vec![2 * d], 1.0, &mut rng);

        let objective = |zz: &Tensor<f64>, pp: &AspParams<f64>| -> Result<f64> {
            let out = asp_forward(zz, pp)?;
            Ok(out
                .r
                .as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(x, y)| x * y)
                .sum())
        };

        let summary = asp_forward(&z, &params)?;
        let (gz, gp) = asp_backward(&params, &summary, &probe)?;

        let num_z = finite_diff_grad(|t| objective(t, &params), &z, FD_STEP)?;
        worst.update("asp.Z", gz.as_slice(), num_z.as_slice());

        let num_w = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                p.w = t.clone();
                objective(&z, &p)
            },
            &params.w,
            FD_STEP,
        )?;
        worst.update("asp.W", gp.w.as_slice(), num_w.as_slice());

        let num_b = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                p.b = t.clone();
                objective(&z, &p)
            },
            &params.b,
            FD_STEP,
        )?;
        worst.update("asp.b", gp.b.as_slice(), num_b.as_slice());

        let num_v = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                p.v = t.clone();
                objective(&z, &p)
            },
            &params.v,
            FD_STEP,
        )?;
        worst.update("asp.v", gp.v.as_slice(), num_v.as_slice());

        let k_probe = Tensor::from_vec(vec![1], vec![params.k])?;
        let num_k = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                p.k = t.as_slice()[0];
                objective(&z, &p)
            },
            &k_probe,
            FD_STEP,
        )?;
        worst.update("asp.k", &[gp.k], num_k.as_slice());
    }
    Ok(worst.outcomes(trials))
}

/// Full classifier: every parameter tensor jointly, plus the input stack.
pub fn check_mfa(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let mut worst = Worst::new(&["mfa.tasp", "mfa.lasp", "mfa.fc", "mfa.H"]);

    for _ in 0..trials {
        let l_count = dims_in(&mut rng, 2, 3);
        let t_len = dims_in(&mut rng, 2, 4);
        let d = dims_in(&mut rng, 2, 3);
        let hidden = dims_in(&mut rng, 2, 4);
        let params = MfaParams::<f64>::init(l_count, d, d, hidden, &mut rng);
        let data = (0..l_count * t_len * d)
            .map(|_| rng.uniform_in(-1.5, 1.5))
            .collect();
        let emb = LayeredEmbeddings::new(l_count, t_len, d, data)?;
        let gl = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];

        let objective = |p: &MfaParams<f64>, e: &LayeredEmbeddings<f64>| -> Result<f64> {
            let (logits, _) = mfa_forward(e, p)?;
            Ok(gl[0] * logits.values[0] + gl[1] * logits.values[1])
        };

        let (_, cache) = mfa_forward(&emb, &params)?;
        let (grads, grad_h) = mfa_backward(&params, &cache, gl)?;

        let names = params.tensor_names();
        let wrapped = ModelParams::Mfa(grads);
        let analytic = wrapped.param_slices();
        for (idx, name) in names.iter().enumerate() {
            let group = if name.starts_with("tasp.") {
                "mfa.tasp"
            } else if name.starts_with("lasp.") {
                "mfa.lasp"
            } else {
                "mfa.fc"
            };
            let base = params.param_slices()[idx].to_vec();
            let probe = Tensor::from_vec(vec![base.len()], base)?;
            let num = finite_diff_grad(
                |t| {
                    let mut p = params.clone();
                    p.param_slices_mut()[idx].copy_from_slice(t.as_slice());
                    objective(&p, &emb)
                },
                &probe,
                FD_STEP,
            )?;
            worst.update(group, analytic[idx], num.as_slice());
        }

        let num_h = finite_diff_grad(
            |t| {
                let e = LayeredEmbeddings::from_tensor(t.clone())?;
                objective(&params, &e)
            },
            emb.values(),
            FD_STEP,
        )?;
        worst.update("mfa.H", grad_h.as_slice(), num_h.as_slice());
    }
    Ok(worst.outcomes(trials))
}

/// Loss gradient w.r.t. the logits, both labels, random class weights.
pub fn check_cross_entropy(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let mut worst = Worst::new(&["cross_entropy"]);

    for _ in 0..trials {
        let logits = Tensor::<f64>::uniform(vec![2], 3.0, &mut rng);
        let weights = [rng.uniform_in(0.2, 3.0), rng.uniform_in(0.2, 3.0)];
        for label in [Label::Spoof, Label::Bonafide] {
            let f = |t: &Tensor<f64>| {
                let l = Logits {
                    values: [t.as_slice()[0], t.as_slice()[1]],
                };
                Ok(cross_entropy(&l, label, weights).0)
            };
            let num = finite_diff_grad(f, &logits, FD_STEP)?;
            let l = Logits {
                values: [logits.as_slice()[0], logits.as_slice()[1]],
            };
            let (_, grad) = cross_entropy(&l, label, weights);
            worst.update("cross_entropy", &grad, num.as_slice());
        }
    }
    Ok(worst.outcomes(trials))
}

/// Every check with a shared trial count; seeds are decorrelated per group.
pub fn run_full_suite(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut all = check_asp(trials, seed)?;
    all.extend(check_mfa(trials, seed.wrapping_add(1))?);
    all.extend(check_cross_entropy(trials, seed.wrapping_add(2))?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_small_trial_count() {
        let outcomes = run_full_suite(3, 12345).unwrap();
        assert_eq!(outcomes.len(), 10);
        for o in &outcomes {
            assert!(o.passed(), "{}: {}", o.name, o.max_rel_err);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = run_full_suite(2, 7).unwrap();
        let b = run_full_suite(2, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err, y.max_rel_err);
        }
    }
}
