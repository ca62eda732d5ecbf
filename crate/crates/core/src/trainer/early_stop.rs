/// True when the last `window` losses fail to improve on the best earlier loss by more than
/// `threshold` (relative): `min(last window) > (1 - threshold) * min(before window)`.
/// Needs at least `window + 1` entries. A `window` of zero never stops.
pub fn should_stop(history: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    let (before, recent) = history.split_at(history.len() - window);
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    min(recent) > (1.0 - threshold) * min(before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decreasing_two_percent_keeps_going() {
        let h: Vec<f64> = (0..60).map(|i| 0.98f64.powi(i)).collect();
        assert!(!should_stop(&h, 20, 0.01));
    }

    #[test]
    fn flat_for_twenty_one_epochs_stops() {
        assert!(should_stop(&[1.0; 21], 20, 0.01));
        assert!(!should_stop(&[1.0; 20], 20, 0.01));
    }

    #[test]
    fn short_history_never_stops() {
        assert!(!should_stop(&[], 20, 0.01));
        assert!(!should_stop(&[5.0, 5.0], 20, 0.01));
    }

    proptest! {
        #[test]
        fn depends_only_on_history(h in proptest::collection::vec(0.0f64..10.0, 0..50), w in 1usize..25) {
            let a = should_stop(&h, w, 0.01);
            let b = should_stop(&h.clone(), w, 0.01);
            prop_assert_eq!(a, b);
            if h.len() <= w {
                prop_assert!(!a);
            }
        }
    }
}
