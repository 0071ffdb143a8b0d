use crate::domain::TaskState;

pub const SENT_BASE: f64 = 0.40;
pub const SENT_SPAN: f64 = 0.55;

/// Progress estimate for a state. While `Sent`, the span is filled by the
/// share of planned steps finished; iterative plans count every iteration
/// up to `max_iterations` as planned.
pub fn progress_for(state: TaskState, completed: usize, planned: usize) -> f64 {
    match state {
        TaskState::Queued => 0.05,
        TaskState::Queuing => 0.15,
        TaskState::Created => 0.25,
        TaskState::Sending => 0.35,
        TaskState::Sent => {
            let share = if planned == 0 {
                0.0
            } else {
                (completed as f64 / planned as f64).min(1.0)
            };
            SENT_BASE + SENT_SPAN * share
        }
        TaskState::Complete => 1.0,
        // Terminal failures keep the caller's last value.
        TaskState::Canceled | TaskState::Failed => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_table() {
        assert_eq!(progress_for(TaskState::Queued, 0, 0), 0.05);
        assert!((progress_for(TaskState::Sent, 3, 6) - 0.675).abs() < 1e-15);
        assert!((progress_for(TaskState::Sent, 9, 6) - 0.95).abs() < 1e-15);
        assert_eq!(progress_for(TaskState::Complete, 0, 6), 1.0);
    }

    proptest! {
        #[test]
        fn monotone_along_the_checkpoint_chain(planned in 1usize..200, done in proptest::collection::vec(0usize..200, 0..20)) {
            let mut done = done;
            done.sort_unstable();
            let mut seq = vec![
                progress_for(TaskState::Queued, 0, planned),
                progress_for(TaskState::Queuing, 0, planned),
                progress_for(TaskState::Created, 0, planned),
                progress_for(TaskState::Sending, 0, planned),
            ];
            seq.extend(done.iter().map(|&d| progress_for(TaskState::Sent, d, planned)));
            seq.push(progress_for(TaskState::Complete, planned, planned));
            prop_assert!(seq.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
