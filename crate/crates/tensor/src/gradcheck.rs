//! Central finite-difference gradient checking in `f64`.

use crate::{Array, Graph, Var};

/// Summary of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over all probed coordinates.
    pub max_rel_error: f64,
    /// Number of probed coordinates.
    pub probes: usize,
    /// (input index, flat coordinate, analytic, numeric) of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar `f(inputs)` against central
/// differences with step `eps`, probing at most `max_probes` coordinates per
/// input (evenly strided).
pub fn check<F>(inputs: &[Array<f64>], eps: f64, floor: f64, max_probes: usize, f: F) -> GradCheck
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let analytic: Vec<Array<f64>> = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
        let loss = f(&g, &vars);
        let grads = g.backward(loss);
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };
    let eval = |xs: &[Array<f64>]| -> f64 {
        let g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|a| g.constant(a.clone())).collect();
        f(&g, &vars).item()
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        probes: 0,
        worst: None,
    };
    let mut work: Vec<Array<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        if n == 0 {
            continue;
        }
        let stride = n.div_ceil(max_probes.max(1)).max(1);
        for flat in (0..n).step_by(stride) {
            let orig = input.as_slice_memory_order().expect("contiguous input")[flat];
            work[i].as_slice_memory_order_mut().unwrap()[flat] = orig + eps;
            let up = eval(&work);
            work[i].as_slice_memory_order_mut().unwrap()[flat] = orig - eps;
            let down = eval(&work);
            work[i].as_slice_memory_order_mut().unwrap()[flat] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].as_standard_layout().as_slice().unwrap()[flat];
            let err = relative_error(a, numeric, floor);
            report.probes += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, flat, a, numeric));
            }
        }
    }
    report
}
