//! Central finite-difference checks of [`Graph`] gradients.

use crate::{Graph, Result, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `d loss / d input` from [`Graph::backward`] against central
/// differences with step `h` for every element of every input.
///
/// `build` receives the graph and one `Var` per input and returns the scalar loss.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input_with_grad(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[which].dims());
        let analytic = grads.get(*var).unwrap_or(&zeros).clone();
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[which].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
