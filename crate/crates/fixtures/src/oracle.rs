//! Reference computations on unsharded data, independent of the fabric.

use nalgebra::{Matrix3, Vector3};

use crate::generate::ShbeRow;

#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome {
    /// Coefficients after the last update.
    pub beta: [f64; 3],
    pub iterations: u32,
    /// Loss evaluated at the model entering each iteration.
    pub losses: Vec<f64>,
}

fn normal_equations(rows: &[ShbeRow]) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let mut gram = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    let mut yty = 0.0;
    for r in rows {
        let x = Vector3::from(r.features());
        gram += x * x.transpose();
        xty += x * r.switch_prob;
        yty += r.switch_prob * r.switch_prob;
    }
    (gram, xty, yty)
}

/// Closed-form ordinary least squares.
pub fn least_squares(rows: &[ShbeRow]) -> [f64; 3] {
    let (gram, xty, _) = normal_equations(rows);
    let beta = gram.lu().solve(&xty).expect("full-rank design");
    [beta[0], beta[1], beta[2]]
}

/// The iterative model loop run centrally: damped Newton steps from zero,
/// stopping at `max_iterations` or once the loss's relative change falls
/// below `rtol`.
pub fn standalone_loop(rows: &[ShbeRow], step_size: f64, max_iterations: u32, rtol: f64) -> LoopOutcome {
    let (gram, xty, yty) = normal_equations(rows);
    let n = rows.len() as f64;
    let inverse = gram.try_inverse().expect("full-rank design");
    let mut beta = Vector3::zeros();
    let mut losses: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let grad = gram * beta - xty;
        let sse = (beta.transpose() * gram * beta)[0] - 2.0 * beta.dot(&xty) + yty;
        losses.push(sse / (2.0 * n));
        beta -= step_size * (inverse * grad);
        if let [.., prev, last] = losses[..] {
            if (last - prev).abs() / prev.abs().max(1e-12) < rtol {
                break;
            }
        }
    }
    LoopOutcome {
        beta: [beta[0], beta[1], beta[2]],
        iterations,
        losses,
    }
}
