use serde::{Deserialize, Serialize};

use crate::domain::StoppingCondition;

/// Guards the relative-change denominator against zero baselines.
pub const EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop when the iteration bound is reached or the coordinator metric's
/// relative change `|m_k - m_{k-1}| / max(|m_{k-1}|, eps)` drops below the
/// tolerance. A non-finite change never counts as converged.
pub fn evaluate_stop(history: &[f64], stop: &StoppingCondition) -> StopDecision {
    let k = history.len();
    if k >= stop.max_iterations as usize {
        return StopDecision::Stop;
    }
    if k >= 2 {
        let (prev, last) = (history[k - 2], history[k - 1]);
        let change = (last - prev).abs() / prev.abs().max(EPSILON);
        if change < stop.relative_tolerance {
            return StopDecision::Stop;
        }
    }
    StopDecision::Continue
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cond(max_iterations: u32, rtol: f64) -> StoppingCondition {
        StoppingCondition {
            max_iterations,
            metric_name: "loss".into(),
            relative_tolerance: rtol,
        }
    }

    #[test]
    fn examples() {
        assert_eq!(evaluate_stop(&[10.0, 10.0], &cond(25, 1e-3)), StopDecision::Stop);
        assert_eq!(evaluate_stop(&[10.0, 5.0], &cond(25, 1e-3)), StopDecision::Continue);
        // |1.0005 - 1| / 1 = 5e-4 < 1e-3
        assert_eq!(evaluate_stop(&[1.0, 1.0005], &cond(25, 1e-3)), StopDecision::Stop);
        assert_eq!(evaluate_stop(&[3.0], &cond(1, 1e-3)), StopDecision::Stop);
        assert_eq!(evaluate_stop(&[3.0], &cond(2, 1e-3)), StopDecision::Continue);
        assert_eq!(evaluate_stop(&[0.0, 0.0], &cond(25, 1e-3)), StopDecision::Stop);
        assert_eq!(evaluate_stop(&[1.0, f64::NAN], &cond(25, 1e-3)), StopDecision::Continue);
    }

    proptest! {
        #[test]
        fn bounded_under_adversarial_metrics(
            metrics in proptest::collection::vec(prop_oneof![any::<f64>(), Just(f64::NAN), Just(f64::INFINITY)], 1..60),
            max in 1u32..30,
        ) {
            let stop = cond(max, 1e-3);
            let mut stopped_at = None;
            for k in 1..=metrics.len() {
                if evaluate_stop(&metrics[..k], &stop) == StopDecision::Stop {
                    stopped_at = Some(k);
                    break;
                }
            }
            if metrics.len() >= max as usize {
                prop_assert!(stopped_at.unwrap() <= max as usize);
            }
        }
    }
}
