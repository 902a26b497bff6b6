//! Arithmetic-operation tally and order-independent reductions.
//!
//! The tally is a thread-local counter bumped by every numeric kernel on the
//! inference path (dense products, activations, softmax, gauge rows, sums). It
//! lets tests check that inference cost depends only on the problem size and
//! never on the input values.

use std::cell::Cell;

thread_local! {
    static TALLY: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn tally(n: usize) {
    TALLY.with(|t| t.set(t.get().wrapping_add(n as u64)));
}

/// Runs `f` and returns its result together with the number of tallied operations.
pub fn count_ops<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = TALLY.with(Cell::get);
    let out = f();
    let after = TALLY.with(Cell::get);
    (out, after.wrapping_sub(before))
}

/// Sum whose result is bitwise independent of the order of `values`.
///
/// The terms are put in canonical order by an odd-even transposition network
/// (fixed compare-exchange schedule, so the op count depends only on the
/// length) and then added left to right.
pub fn symmetric_sum(values: &[f64]) -> f64 {
    let n = values.len();
    match n {
        0 => return 0.0,
        1 => return values[0],
        _ => {}
    }
    let mut buf = values.to_vec();
    for round in 0..n {
        let mut i = round % 2;
        while i + 1 < n {
            if buf[i].total_cmp(&buf[i + 1]).is_gt() {
                buf.swap(i, i + 1);
            }
            i += 2;
        }
    }
    tally(n * n / 2 + n);
    buf.iter().sum()
}

/// `symmetric_sum` of `f(i)` over `0..n`.
pub fn symmetric_sum_by(n: usize, f: impl FnMut(usize) -> f64) -> f64 {
    let terms: Vec<f64> = (0..n).map(f).collect();
    symmetric_sum(&terms)
}
