//! Direct detailed-balance verification of replica-exchange kernels.

use crate::rbm::BinaryState;

/// Largest violation of `π(x, y) a(x, y) = π(y, x) a(y, x)` over all state pairs, where
/// `π(x, y) = p(x) q(y)` and `a = min(1, exp(log_ratio(x, y)))` accepts the exchange
/// `(x, y) → (y, x)`. `p` and `q` are normalized tables indexed like `states`.
pub fn swap_balance_violation<F>(p: &[f64], q: &[f64], states: &[BinaryState], log_ratio: F) -> f64
where
    F: Fn(&BinaryState, &BinaryState) -> f64,
{
    let mut worst = 0.0f64;
    for (x, sx) in states.iter().enumerate() {
        for (y, sy) in states.iter().enumerate() {
            let forward = p[x] * q[y] * log_ratio(sx, sy).exp().min(1.0);
            let backward = p[y] * q[x] * log_ratio(sy, sx).exp().min(1.0);
            worst = worst.max((forward - backward).abs());
        }
    }
    worst
}
