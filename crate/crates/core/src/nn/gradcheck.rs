//! Central finite-difference gradient checking.

use super::graph::Var;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest analytic gradient magnitude among the checked coordinates.
    pub max_abs_grad: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `d f / d inputs` at `samples` coordinates spread evenly over all inputs.
///
/// `f` maps leaf variables to a scalar. Coordinates are chosen with a fixed
/// stride so the check is deterministic.
pub fn check<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], samples: usize, step: f64, floor: f64) -> GradCheck
where
    F: Fn(&[Var]) -> Var,
{
    let leaves: Vec<Var> = inputs.iter().map(|(s, d)| Var::leaf(s, d.clone())).collect();
    let out = f(&leaves);
    out.backward();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.len()]))
        .collect();

    let total: usize = inputs.iter().map(|(_, d)| d.len()).sum();
    let picks = samples.min(total);
    let stride = (total / picks.max(1)).max(1);
    let mut coords = Vec::with_capacity(picks);
    let mut flat = 0;
    while coords.len() < picks && flat < total {
        coords.push(flat);
        flat += stride;
    }

    let eval = |which: usize, pos: usize, delta: f64| -> f64 {
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, (s, d))| {
                let mut d = d.clone();
                if i == which {
                    d[pos] += delta;
                }
                Var::constant(s, d)
            })
            .collect();
        f(&vars).item()
    };

    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_grad: f64 = 0.0;
    for &c in &coords {
        let mut which = 0;
        let mut pos = c;
        while pos >= inputs[which].1.len() {
            pos -= inputs[which].1.len();
            which += 1;
        }
        let num = (eval(which, pos, step) - eval(which, pos, -step)) / (2.0 * step);
        let e = rel_err(analytic[which][pos], num, floor);
        if std::env::var_os("GRADCHECK_TRACE").is_some() {
            eprintln!("input {which} pos {pos}: analytic {:e} numeric {num:e} rel {e:e}", analytic[which][pos]);
        }
        max_rel_err = max_rel_err.max(e);
        max_abs_grad = max_abs_grad.max(analytic[which][pos].abs());
    }
    GradCheck {
        checked: coords.len(),
        max_rel_err,
        max_abs_grad,
    }
}
