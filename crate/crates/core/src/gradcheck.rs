//! Central finite-difference verification of graph gradients.

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Leaf index and element offset of the worst entry.
    pub worst: (usize, usize),
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(leaves: &[Tensor], f: &F, track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| if track { g.input(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    Ok((g, vars, out))
}

/// Compares reverse-mode gradients of the scalar `f(leaves)` with central
/// differences of step `h`. At most `per_leaf` evenly spaced elements of
/// each leaf are probed.
pub fn check_gradients<F>(leaves: &[Tensor], f: F, h: f64, per_leaf: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = evaluate(leaves, &f, true)?;
    let grads = g.backward(out);
    let mut work = leaves.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: (0, 0),
    };
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        let n = leaf.len();
        let step = n.div_ceil(per_leaf.max(1)).max(1);
        for idx in (0..n).step_by(step) {
            let orig = leaf.data()[idx];
            work[li].data_mut()[idx] = orig + h;
            let plus = {
                let (g, _, o) = evaluate(&work, &f, false)?;
                g.value(o).item()
            };
            work[li].data_mut()[idx] = orig - h;
            let minus = {
                let (g, _, o) = evaluate(&work, &f, false)?;
                g.value(o).item()
            };
            work[li].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[idx], numeric, 1e-6);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (li, idx);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
