use std::collections::VecDeque;

/// Default suppression window for 1024-bin position distributions.
pub const DEFAULT_WINDOW_LOC: usize = 100;
/// Default window for the 128-bin angle band (100 scaled by 128/1024).
pub const DEFAULT_WINDOW_SEG: usize = 12;

/// One-dimensional non-maximum suppression.
///
/// Returns, in increasing order, every index `i` with
/// `values[i] >= values[j]` for all `j` in `[i - w, i + w]` (clipped to the
/// slice). Plateaus keep all of their points. NaN entries never survive and
/// do not suppress their neighbors.
///
/// Works equally on probabilities or log-probabilities. Runs in `O(len)`
/// using a monotone deque over the sliding window.
pub fn nms_1d(values: &[f64], window: usize) -> Vec<usize> {
    let n = values.len();
    let key = |i: usize| {
        let v = values[i];
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut survivors = Vec::new();
    // Indices with strictly decreasing keys; front is the window maximum.
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, &vi) in values.iter().enumerate() {
        let hi = i.saturating_add(window).min(n - 1);
        while next <= hi {
            let v = key(next);
            while dq.back().is_some_and(|&b| key(b) <= v) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(window);
        while dq.front().is_some_and(|&f| f < lo) {
            dq.pop_front();
        }
        let max = key(*dq.front().expect("window contains i"));
        if !vi.is_nan() && vi >= max {
            survivors.push(i);
        }
    }
    survivors
}

/// Sets every non-maximum entry to `-inf`. Returns the number of survivors.
pub fn suppress_non_maxima(values: &mut [f64], window: usize) -> usize {
    let survivors = nms_1d(values, window);
    let mut keep = survivors.iter().peekable();
    for (i, v) in values.iter_mut().enumerate() {
        if keep.peek() == Some(&&i) {
            keep.next();
        } else {
            *v = f64::NEG_INFINITY;
        }
    }
    survivors.len()
}
