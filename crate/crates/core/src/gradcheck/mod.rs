//! Central finite-difference checks of [`Graph::backward`].

mod suite;

pub use suite::{run_block, run_suite, Block, BlockReport, SuiteOptions};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compare the backward pass of `f` against central differences with step
/// `eps`, perturbing every element of every input.
///
/// `f` must build the same scalar function each time it is called; it
/// receives the graph and one leaf per input.
pub fn check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_with_hook(inputs, eps, f, |_| {})
}

/// [`check`] with a hook that may alter the analytic gradients before
/// comparison (used to exercise the failure path).
pub fn check_with_hook<F, H>(inputs: &[Tensor], eps: f64, f: F, hook: H) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    H: FnOnce(&mut [Tensor]),
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &leaves)?;
    let mut grads = g.backward(loss)?;
    let mut analytic: Vec<Tensor> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    hook(&mut analytic);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &leaves)?;
        Ok(g.value(out).item())
    };

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            work[ti].data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].data()[k];
            let err = rel_error(a, numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.entries == 1 {
                report.max_rel_error = err;
                report.worst = (ti, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
