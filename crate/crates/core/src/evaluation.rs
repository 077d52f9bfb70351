//! Exact test log-likelihood, the variational DBN lower bound and swap-rate reports.

use crate::error::{Error, Result, Side};
use crate::numeric::{bernoulli_entropy, log_sum_exp, softplus};
use crate::rbm::{BinaryState, RbmParams, Units, DEFAULT_CAP_BITS};
use crate::rng::RngStream;
use crate::samplers::{validate_stack, SwapStats};

/// Largest hidden layer for which posterior expectations are enumerated.
pub const EXACT_HIDDEN_CAP_BITS: usize = 20;

/// Posterior samples per datum in the Monte Carlo bound.
pub const DEFAULT_MC_SAMPLES: usize = 100;

/// Mean over `test` of `log p(v) = -F(v) - log Z`, in nats per sample.
pub fn exact_test_ll(params: &RbmParams, test: &[BinaryState]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let log_z = params.exact_log_z()?;
    let mut total = 0.0;
    for v in test {
        total -= params.free_energy_v(v)?;
    }
    Ok(total / test.len() as f64 - log_z)
}

/// Factorial distribution over all `2^n` states in index order (bit `j` is unit `j`).
fn factorial_table(p: &[f64]) -> Vec<f64> {
    let mut table = Vec::with_capacity(1 << p.len());
    table.push(1.0);
    for &pj in p {
        let half = table.len();
        for k in 0..half {
            table.push(table[k] * pj);
            table[k] *= 1.0 - pj;
        }
    }
    table
}

/// `S(h) = Σᵢ softplus(cᵢ + (Wh)ᵢ)` for every hidden state, so that
/// `log p(v | h) = vᵀc + (Wᵀv)·h - S(h)`.
fn visible_log_normalizers(layer: &RbmParams) -> Vec<f64> {
    BinaryState::enumerate(layer.n_hidden())
        .map(|h| {
            layer
                .visible_input_at(1.0, &h)
                .into_iter()
                .map(softplus)
                .sum()
        })
        .collect()
}

/// `E_Q[log p(x | h) + upper(h)] + H(Q)` with `Q = p(h | x)` factorial.
fn bound_term<U: Units + ?Sized>(layer: &RbmParams, x: &U, upper_minus_s: &[f64]) -> f64 {
    let pre = layer.hidden_input_at(1.0, x);
    let q: Vec<f64> = pre.iter().map(|&a| crate::numeric::sigmoid(a)).collect();
    let linear: f64 = (0..layer.n_visible())
        .map(|i| x.value(i) * layer.visible_bias()[i])
        .sum::<f64>()
        + pre
            .iter()
            .zip(layer.hidden_bias())
            .zip(&q)
            .map(|((a, b), qj)| (a - b) * qj)
            .sum::<f64>();
    let expectation: f64 = factorial_table(&q)
        .iter()
        .zip(upper_minus_s)
        .map(|(w, t)| w * t)
        .sum();
    let entropy: f64 = q.iter().map(|&p| bernoulli_entropy(p)).sum();
    linear + expectation + entropy
}

/// `log p_top(h)` for every visible state of the top layer.
fn top_log_marginal(top: &RbmParams) -> Result<Vec<f64>> {
    let log_z = top.exact_log_z()?;
    Ok(BinaryState::enumerate(top.n_visible())
        .map(|h| -top.free_energy_v_unchecked(1.0, &h) - log_z)
        .collect())
}

fn check_exact_bound_caps(layers: &[RbmParams]) -> Result<()> {
    let m = layers.len();
    for layer in &layers[..m - 1] {
        if layer.n_hidden() > EXACT_HIDDEN_CAP_BITS {
            return Err(Error::EnumerationCap {
                bits: layer.n_hidden(),
                cap_bits: EXACT_HIDDEN_CAP_BITS,
            });
        }
    }
    for layer in &layers[1..m - 1] {
        let bits = layer.n_visible() + layer.n_hidden();
        if bits > DEFAULT_CAP_BITS {
            return Err(Error::EnumerationCap {
                bits,
                cap_bits: DEFAULT_CAP_BITS,
            });
        }
    }
    Ok(())
}

/// Per-state bound tables `T(h₁)` for the DBN formed by `layers[1..]`, already
/// reduced by the bottom layer's `S(h₁)`.
fn upper_tables(layers: &[RbmParams]) -> Result<Vec<f64>> {
    let m = layers.len();
    let mut upper = top_log_marginal(&layers[m - 1])?;
    for k in (1..m - 1).rev() {
        let layer = &layers[k];
        let s = visible_log_normalizers(layer);
        let upper_minus_s: Vec<f64> = upper.iter().zip(&s).map(|(u, s)| u - s).collect();
        upper = BinaryState::enumerate(layer.n_visible())
            .map(|x| bound_term(layer, &x, &upper_minus_s))
            .collect();
    }
    let s = visible_log_normalizers(&layers[0]);
    Ok(upper.iter().zip(&s).map(|(u, s)| u - s).collect())
}

/// Variational lower bound on the DBN log-likelihood, per datum.
///
/// With the factorial recognition distributions `Q(hₖ | hₖ₋₁) = pₖ(hₖ | hₖ₋₁)`,
/// the bound for `M = 2` is
/// `Σ_{h} Q(h | v) [log p₂(h) + log p₁(v | h)] + H(Q(h | v))`, with `log p₂` the
/// top RBM's exact visible marginal. Deeper stacks recurse, replacing `log p₂(h)`
/// by the bound of the stack above. Expectations are enumerated.
pub fn dbn_lower_bound_terms(layers: &[RbmParams], test: &[BinaryState]) -> Result<Vec<f64>> {
    validate_stack(layers)?;
    test.iter()
        .try_for_each(|v| layers[0].check(Side::Visible, v.len()))?;
    if layers.len() == 1 {
        let log_z = layers[0].exact_log_z()?;
        return Ok(test
            .iter()
            .map(|v| -layers[0].free_energy_v_unchecked(1.0, v) - log_z)
            .collect());
    }
    check_exact_bound_caps(layers)?;
    let table = upper_tables(layers)?;
    Ok(test.iter().map(|v| bound_term(&layers[0], v, &table)).collect())
}

/// Mean of [`dbn_lower_bound_terms`], nats per sample. With one layer this is
/// [`exact_test_ll`].
pub fn dbn_lower_bound(layers: &[RbmParams], test: &[BinaryState]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if layers.len() == 1 {
        return exact_test_ll(&layers[0], test);
    }
    let terms = dbn_lower_bound_terms(layers, test)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// A bound estimate with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub exact: bool,
}

/// Monte Carlo form of the same bound: `S` upward chains `hₖ ~ Q(hₖ | hₖ₋₁)` per
/// datum, each scoring `log p(v, h₁, …) − log Q(h₁, … | v)`. Only the top layer's
/// partition function is enumerated.
pub fn dbn_lower_bound_mc(
    layers: &[RbmParams],
    test: &[BinaryState],
    samples_per_datum: usize,
    rng: &mut RngStream,
) -> Result<BoundEstimate> {
    validate_stack(layers)?;
    if test.is_empty() || samples_per_datum == 0 {
        return Err(Error::EmptyBatch);
    }
    let m = layers.len();
    let top = &layers[m - 1];
    let log_z = top.exact_log_z()?;
    let mut per_datum = Vec::with_capacity(test.len());
    for v in test {
        layers[0].check(Side::Visible, v.len())?;
        let mut acc = 0.0;
        for _ in 0..samples_per_datum {
            let mut x = v.clone();
            let mut score = 0.0;
            for layer in &layers[..m - 1] {
                let pre = layer.hidden_input_at(1.0, &x);
                let h = BinaryState::from_bits(
                    pre.iter().map(|&a| rng.bernoulli(crate::numeric::sigmoid(a)) as u8),
                );
                // log Q(h | x) from logits, stable at saturation
                score -= pre
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| if h.get(j) { -softplus(-a) } else { -softplus(a) })
                    .sum::<f64>();
                let vis_pre = layer.visible_input_at(1.0, &h);
                score += vis_pre
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| if x.get(i) { -softplus(-a) } else { -softplus(a) })
                    .sum::<f64>();
                x = h;
            }
            score += -top.free_energy_v_unchecked(1.0, &x) - log_z;
            acc += score;
        }
        per_datum.push(acc / samples_per_datum as f64);
    }
    let n = per_datum.len() as f64;
    let mean = per_datum.iter().sum::<f64>() / n;
    let var = if per_datum.len() > 1 {
        per_datum.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(BoundEstimate {
        mean,
        standard_error: (var / n).sqrt(),
        exact: false,
    })
}

/// Exact enumeration where the caps allow it, otherwise Monte Carlo if permitted.
pub fn dbn_lower_bound_auto(
    layers: &[RbmParams],
    test: &[BinaryState],
    allow_monte_carlo: bool,
    rng: &mut RngStream,
) -> Result<BoundEstimate> {
    match dbn_lower_bound(layers, test) {
        Ok(mean) => Ok(BoundEstimate {
            mean,
            standard_error: 0.0,
            exact: true,
        }),
        Err(Error::EnumerationCap { .. }) if allow_monte_carlo && layers.len() > 1 => {
            dbn_lower_bound_mc(layers, test, DEFAULT_MC_SAMPLES, rng)
        }
        Err(e) => Err(e),
    }
}

/// `log p(v)` of the DBN by summing the full joint. Test oracle for small stacks.
pub fn dbn_exact_log_likelihood(layers: &[RbmParams], v: &BinaryState) -> Result<f64> {
    validate_stack(layers)?;
    layers[0].check(Side::Visible, v.len())?;
    let m = layers.len();
    for layer in layers {
        if layer.n_visible() + layer.n_hidden() > DEFAULT_CAP_BITS {
            return Err(Error::EnumerationCap {
                bits: layer.n_visible() + layer.n_hidden(),
                cap_bits: DEFAULT_CAP_BITS,
            });
        }
    }
    // log p over the top layer's visibles, then pushed down one directed layer at a time
    let mut log_marg = top_log_marginal(&layers[m - 1])?;
    for k in (1..m - 1).rev() {
        let layer = &layers[k];
        log_marg = BinaryState::enumerate(layer.n_visible())
            .map(|x| {
                let terms: Vec<f64> = BinaryState::enumerate(layer.n_hidden())
                    .zip(&log_marg)
                    .map(|(h, lp)| lp + log_cond_v(layer, &x, &h))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
    }
    if m == 1 {
        return layers[0].exact_log_prob_v(v);
    }
    let terms: Vec<f64> = BinaryState::enumerate(layers[0].n_hidden())
        .zip(&log_marg)
        .map(|(h, lp)| lp + log_cond_v(&layers[0], v, &h))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `log p(v | h)` of one layer.
fn log_cond_v(layer: &RbmParams, v: &BinaryState, h: &BinaryState) -> f64 {
    layer
        .visible_input_at(1.0, h)
        .iter()
        .enumerate()
        .map(|(i, &a)| if v.get(i) { -softplus(-a) } else { -softplus(a) })
        .sum()
}

/// Aggregate posterior of every layer's input over `test`: layer 0 gets the
/// empirical data distribution, layer `ℓ` the mixture `mean_v Q(h_ℓ | v)` of the
/// upward conditionals. `None` for layers beyond the enumeration caps.
pub fn aggregate_posteriors(layers: &[RbmParams], test: &[BinaryState]) -> Result<Vec<Option<Vec<f64>>>> {
    validate_stack(layers)?;
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = vec![None];
    if layers.len() == 1 {
        return Ok(out);
    }
    let n = test.len() as f64;
    let first = &layers[0];
    if first.n_hidden() > EXACT_HIDDEN_CAP_BITS {
        out.resize(layers.len(), None);
        return Ok(out);
    }
    let mut q = vec![0.0; 1 << first.n_hidden()];
    for v in test {
        first.check(Side::Visible, v.len())?;
        let p = first.cond_h_given_v(v)?;
        for (acc, w) in q.iter_mut().zip(factorial_table(p.as_slice())) {
            *acc += w / n;
        }
    }
    out.push(Some(q));
    for layer in &layers[1..layers.len() - 1] {
        let below = out.last().unwrap().as_ref();
        let next = match below {
            Some(below) if layer.n_visible() + layer.n_hidden() <= DEFAULT_CAP_BITS => {
                let mut q = vec![0.0; 1 << layer.n_hidden()];
                for (x, &w) in BinaryState::enumerate(layer.n_visible()).zip(below) {
                    if w == 0.0 {
                        continue;
                    }
                    let p = layer.cond_h_given_v(&x)?;
                    for (acc, t) in q.iter_mut().zip(factorial_table(p.as_slice())) {
                        *acc += w * t;
                    }
                }
                Some(q)
            }
            _ => None,
        };
        out.push(next);
    }
    Ok(out)
}

/// Exact test log-likelihood of every layer of a stack.
///
/// Layer 0 is scored on the test set itself. Layer `ℓ > 0` is scored as the
/// expected log-probability `Σₓ q_ℓ(x) log p_ℓ(x)` under the aggregate posterior
/// of the test set, or `None` when that distribution cannot be enumerated.
pub fn layer_test_lls(layers: &[RbmParams], test: &[BinaryState]) -> Result<Vec<Option<f64>>> {
    let posteriors = aggregate_posteriors(layers, test)?;
    let mut out = vec![Some(exact_test_ll(&layers[0], test)?)];
    for (layer, q) in layers.iter().zip(&posteriors).skip(1) {
        let value = match q {
            Some(q) => match layer.exact_log_z() {
                Ok(log_z) => Some(
                    BinaryState::enumerate(layer.n_visible())
                        .zip(q)
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(x, w)| w * (-layer.free_energy_v_unchecked(1.0, &x) - log_z))
                        .sum(),
                ),
                Err(Error::EnumerationCap { .. }) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        out.push(value);
    }
    Ok(out)
}

/// Per-pair acceptance rates of the current window; `None` where nothing was proposed.
pub fn swap_report(stats: &SwapStats) -> Vec<Option<f64>> {
    stats.window().iter().map(|c| c.rate()).collect()
}

/// Per-pair acceptance rates since the start of the run.
pub fn swap_report_cumulative(stats: &SwapStats) -> Vec<Option<f64>> {
    stats.cumulative().iter().map(|c| c.rate()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn rng(stream: u64) -> RngStream {
        RngStream::new(31, stream)
    }

    #[test]
    fn zero_model_scores_uniform() {
        let p = RbmParams::zeros(784, 10);
        let test = vec![BinaryState::zeros(784); 3];
        let ll = exact_test_ll(&p, &test).unwrap();
        assert!((ll + 784.0 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn decoupled_model_matches_bernoulli_likelihood() {
        let c = vec![0.3, -1.2, 2.0];
        let p = RbmParams::new(3, 2, vec![0.0; 6], c.clone(), vec![0.5, -0.5]).unwrap();
        let mut r = rng(1);
        let test: Vec<_> = (0..50).map(|_| BinaryState::random(3, &mut r)).collect();
        let closed: f64 = test
            .iter()
            .map(|v| {
                (0..3)
                    .map(|i| {
                        let q = crate::numeric::sigmoid(c[i]);
                        if v.get(i) {
                            q.ln()
                        } else {
                            (1.0 - q).ln()
                        }
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 50.0;
        assert!((exact_test_ll(&p, &test).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn test_ll_matches_log_prob_oracle() {
        let mut r = rng(2);
        let p = RbmParams::random(4, 4, 2.0, &mut r);
        let test: Vec<_> = (0..100).map(|_| BinaryState::random(4, &mut r)).collect();
        let oracle: f64 = test.iter().map(|v| p.exact_log_prob_v(v).unwrap()).sum::<f64>() / 100.0;
        assert!((exact_test_ll(&p, &test).unwrap() - oracle).abs() <= 1e-10);
    }

    #[test]
    fn hidden_permutation_leaves_likelihood_unchanged() {
        let mut r = rng(3);
        let p = RbmParams::random(5, 4, 1.5, &mut r);
        let perm = [2usize, 0, 3, 1];
        let mut w = vec![0.0; 20];
        for i in 0..5 {
            for j in 0..4 {
                w[i * 4 + perm[j]] = p.weight(i, j);
            }
        }
        let mut b = vec![0.0; 4];
        for j in 0..4 {
            b[perm[j]] = p.hidden_bias()[j];
        }
        let q = RbmParams::new(5, 4, w, p.visible_bias().to_vec(), b).unwrap();
        let test: Vec<_> = (0..40).map(|_| BinaryState::random(5, &mut r)).collect();
        let (a, b) = (exact_test_ll(&p, &test).unwrap(), exact_test_ll(&q, &test).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn factorial_table_indexing() {
        let t = factorial_table(&[0.2, 0.7]);
        let expect = [0.8 * 0.3, 0.2 * 0.3, 0.8 * 0.7, 0.2 * 0.7];
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_layer_bound_is_test_ll() {
        let mut r = rng(4);
        let p = RbmParams::random(6, 3, 1.0, &mut r);
        let test: Vec<_> = (0..30).map(|_| BinaryState::random(6, &mut r)).collect();
        let a = dbn_lower_bound(std::slice::from_ref(&p), &test).unwrap();
        assert_eq!(a, exact_test_ll(&p, &test).unwrap());
    }

    #[test]
    fn bound_is_below_exact_dbn_likelihood() {
        let mut r = rng(5);
        for _ in 0..50 {
            let layers = vec![RbmParams::random(4, 3, 2.0, &mut r), RbmParams::random(3, 3, 2.0, &mut r)];
            for v in BinaryState::enumerate(4) {
                let bound = dbn_lower_bound_terms(&layers, std::slice::from_ref(&v)).unwrap()[0];
                let exact = dbn_exact_log_likelihood(&layers, &v).unwrap();
                assert!(bound <= exact + 1e-9, "{bound} > {exact}");
            }
        }
    }

    #[test]
    fn three_layer_bound_is_valid_and_exact_dbn_normalizes() {
        let mut r = rng(6);
        for _ in 0..20 {
            let layers = vec![
                RbmParams::random(4, 3, 1.5, &mut r),
                RbmParams::random(3, 3, 1.5, &mut r),
                RbmParams::random(3, 2, 1.5, &mut r),
            ];
            let total: f64 = BinaryState::enumerate(4)
                .map(|v| dbn_exact_log_likelihood(&layers, &v).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
            for v in BinaryState::enumerate(4) {
                let bound = dbn_lower_bound_terms(&layers, std::slice::from_ref(&v)).unwrap()[0];
                assert!(bound <= dbn_exact_log_likelihood(&layers, &v).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn bound_is_tight_when_the_posterior_is_deterministic() {
        // saturated recognition weights make Q a point mass, so the bound is log p(v, h*)
        let lower = RbmParams::new(2, 2, vec![40.0, 0.0, 0.0, 40.0], vec![-20.0; 2], vec![-20.0; 2]).unwrap();
        let upper = RbmParams::random(2, 2, 1.0, &mut rng(7));
        let layers = vec![lower, upper];
        for v in BinaryState::enumerate(2) {
            let bound = dbn_lower_bound_terms(&layers, std::slice::from_ref(&v)).unwrap()[0];
            let exact = dbn_exact_log_likelihood(&layers, &v).unwrap();
            assert!(bound <= exact + 1e-9);
            assert!(exact - bound < 1e-6, "{exact} vs {bound}");
        }
    }

    #[test]
    fn monte_carlo_bound_agrees_with_enumeration() {
        let mut r = rng(8);
        let layers = vec![
            RbmParams::random(5, 4, 1.0, &mut r),
            RbmParams::random(4, 3, 1.0, &mut r),
            RbmParams::random(3, 3, 1.0, &mut r),
        ];
        let test: Vec<_> = (0..200).map(|_| BinaryState::random(5, &mut r)).collect();
        let exact = dbn_lower_bound(&layers, &test).unwrap();
        let mc = dbn_lower_bound_mc(&layers, &test, 400, &mut r).unwrap();
        // per-datum noise averages out; compare against the exact mean
        assert!((mc.mean - exact).abs() < 0.05, "{} vs {exact}", mc.mean);
    }

    #[test]
    fn wide_hidden_layers_need_monte_carlo() {
        let layers = vec![RbmParams::zeros(3, 22), RbmParams::zeros(22, 2)];
        let test = vec![BinaryState::zeros(3)];
        assert!(matches!(dbn_lower_bound(&layers, &test), Err(Error::EnumerationCap { .. })));
        let est = dbn_lower_bound_auto(&layers, &test, true, &mut rng(9)).unwrap();
        assert!(!est.exact);
        assert!(dbn_lower_bound_auto(&layers, &test, false, &mut rng(9)).is_err());
    }

    #[test]
    fn aggregate_posterior_is_normalized_and_layer_lls_finite() {
        let mut r = rng(10);
        let layers = vec![
            RbmParams::random(6, 4, 1.0, &mut r),
            RbmParams::random(4, 3, 1.0, &mut r),
            RbmParams::random(3, 2, 1.0, &mut r),
        ];
        let test: Vec<_> = (0..25).map(|_| BinaryState::random(6, &mut r)).collect();
        let post = aggregate_posteriors(&layers, &test).unwrap();
        assert!(post[0].is_none());
        for q in &post[1..] {
            let s: f64 = q.as_ref().unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let lls = layer_test_lls(&layers, &test).unwrap();
        assert_eq!(lls.len(), 3);
        assert!(lls.iter().all(|x| x.unwrap().is_finite() && x.unwrap() < 0.0));
    }

    #[test]
    fn swap_reports() {
        let mut s = SwapStats::new(2, 10);
        assert_eq!(swap_report(&s), vec![None, None]);
        s.record(0, true);
        s.record(0, true);
        s.record(1, true);
        s.record(1, false);
        s.record(1, false);
        s.record(1, true);
        assert_eq!(swap_report(&s), vec![Some(1.0), Some(0.5)]);
        assert_eq!(swap_report_cumulative(&s), vec![Some(1.0), Some(0.5)]);
    }
}
