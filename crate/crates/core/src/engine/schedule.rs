/// Epochs between component additions: `max(1, floor(L / floor(2γ)))`.
pub fn schedule_period(epochs_per_task: usize, capacity: usize) -> usize {
    (epochs_per_task / (2 * capacity).max(1)).max(1)
}

/// Whether the prior is updated at epoch `j` (1-based).
pub fn component_schedule(j: usize, epochs_per_task: usize, capacity: usize) -> bool {
    j % schedule_period(epochs_per_task, capacity) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(schedule_period(100, 10), 5);
        let fired: Vec<usize> = (1..=100).filter(|&j| component_schedule(j, 100, 10)).collect();
        assert_eq!(fired, (1..=20).map(|i| 5 * i).collect::<Vec<_>>());
        assert_eq!(schedule_period(50, 45), 1);
        assert!((1..=50).all(|j| component_schedule(j, 50, 45)));
        for l in 2..40 {
            if schedule_period(l, 1) >= 2 {
                assert!(!component_schedule(1, l, 1));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn firings_are_evenly_spaced(l in 1usize..400, gamma in 1usize..100) {
            let p = schedule_period(l, gamma);
            proptest::prop_assert!(p >= 1);
            let fired = (1..=l).filter(|&j| component_schedule(j, l, gamma)).count();
            proptest::prop_assert_eq!(fired, l / p);
            proptest::prop_assert!(fired <= l);
        }
    }
}
