//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::path::Path;
use std::time::Instant;

use deeptemper::experiment::run::{build_data, ExperimentData, CHECKPOINT_FILE, METRICS_FILE};
use deeptemper::experiment::{checkpoint, run_cell, Cell, ExperimentConfig, Method, ModelState};
use deeptemper::metrics::{read_metrics, MetricsRow};
use deeptemper::verify::{self, CheckResult, Status, VerifyOptions};

struct Outcome {
    id: u32,
    pass: bool,
    summary: String,
}

fn from_checks(id: u32, checks: &[CheckResult]) -> Outcome {
    let pass = checks.iter().all(|c| c.status == Status::Pass);
    let summary = match checks {
        [only] => only.to_string().trim_start_matches(&format!("{} ", only.status)).to_string(),
        _ => checks.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "),
    };
    Outcome { id, pass, summary }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const LEARNING_RATE: f64 = 1e-3;

struct Sweep {
    rows: Vec<Vec<MetricsRow>>,
    swap_rates: Vec<Option<f64>>,
}

/// Runs the desk profile for every seed and collects each cell's metrics.
fn sweep(cfg: &ExperimentConfig, data: &ExperimentData, root: &Path) -> Sweep {
    let mut rows = Vec::new();
    let mut swap_rates = Vec::new();
    for &seed in &SEEDS {
        let cell = Cell {
            seed,
            learning_rate: LEARNING_RATE,
        };
        let out = run_cell(cfg, root, data, &cell, false, None).expect("cell runs");
        rows.push(read_metrics(&out.dir.join(METRICS_FILE)).expect("metrics readable").1);
        let ck = checkpoint::load(&out.dir.join(CHECKPOINT_FILE)).expect("checkpoint readable");
        let rate = match &ck.state.model {
            ModelState::Deep(ens) => {
                let c = ens.swap_stats().cumulative();
                let (p, a) = c.iter().fold((0, 0), |(p, a), x| (p + x.proposed, a + x.accepted));
                (p > 0).then(|| a as f64 / p as f64)
            }
            ModelState::Rbm(_) => None,
        };
        swap_rates.push(rate);
    }
    Sweep { rows, swap_rates }
}

fn layer_series(rows: &[MetricsRow], layer: usize) -> Vec<&MetricsRow> {
    rows.iter().filter(|r| r.layer == layer).collect()
}

fn final_ll(rows: &[MetricsRow]) -> f64 {
    layer_series(rows, 1).last().unwrap().test_ll_nats.unwrap()
}

fn final_bound(rows: &[MetricsRow], layer: usize) -> f64 {
    layer_series(rows, layer).last().unwrap().dbn_bound_nats.unwrap()
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

fn main() {
    let started = Instant::now();
    let opts = VerifyOptions::default();
    let mut outcomes = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let mut o = f();
        o.summary = format!("{} [{:.1}s]", o.summary, t.elapsed().as_secs_f64());
        println!("criterion {:>2}: {} {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.summary);
        outcomes.push(o);
    };

    timed(&mut || from_checks(1, &[verify::oracle_equivalence(&opts, 100)]));
    timed(&mut || from_checks(2, &[verify::balance_pt(&opts, 20), verify::balance_dt(&opts, 20)]));
    timed(&mut || {
        let (cast_tv, _) = verify::cast_frozen(&opts);
        from_checks(
            3,
            &[
                verify::stationarity_sml(&opts),
                verify::stationarity_pt(&opts),
                CheckResult::at_most("stationarity, CAST (M=5, X=10) coupled chains", cast_tv, 0.02, "1e6 iterations, TV"),
                verify::stationarity_dt(&opts),
            ],
        )
    });
    timed(&mut || from_checks(4, &[verify::gradient_check(&opts, 10)]));
    timed(&mut || from_checks(5, &[verify::degeneracy(&opts, 10_000)]));
    timed(&mut || {
        let (bound, collapse) = verify::bound_checks(&opts, 200);
        from_checks(6, &[bound, collapse])
    });

    let dir = tempfile::tempdir().expect("temp dir");
    let dt_cfg = ExperimentConfig::desk(Method::Dt);
    let data = build_data(&dt_cfg).expect("dataset");
    let mut dt_cfg_pre = dt_cfg.clone();
    dt_cfg_pre.pretrain.enabled = true;
    let dt = sweep(&dt_cfg, &data, &dir.path().join("joint"));

    timed(&mut || {
        let sml = sweep(&ExperimentConfig::desk(Method::Sml), &data, dir.path());
        let dt_final: Vec<f64> = dt.rows.iter().map(|r| final_ll(r)).collect();
        let sml_final: Vec<f64> = sml.rows.iter().map(|r| final_ll(r)).collect();
        let gap = median(&dt_final) - median(&sml_final);
        let stable = dt
            .rows
            .iter()
            .filter(|rows| {
                let series = layer_series(rows, 1);
                let best = series.iter().map(|r| r.test_ll_nats.unwrap()).fold(f64::MIN, f64::max);
                best - series.last().unwrap().test_ll_nats.unwrap() <= 10.0
            })
            .count();
        Outcome {
            id: 7,
            pass: gap >= 5.0 && stable >= 4,
            summary: format!(
                "median DT − median SML = {gap:.2} nats (need ≥ 5); DT final [{}], SML final [{}]; DT non-divergent on {stable}/5 (need ≥ 4)",
                fmt_list(&dt_final),
                fmt_list(&sml_final)
            ),
        }
    });

    timed(&mut || {
        let in_range = dt.swap_rates.iter().all(|r| r.is_some_and(|x| x > 0.05 && x < 0.95));
        let logged = dt
            .rows
            .iter()
            .all(|rows| rows.iter().filter(|r| r.iteration > 0).all(|r| r.swap_rates.len() == 1 && r.swap_rates[0].is_some()));
        let rates: Vec<f64> = dt.swap_rates.iter().map(|r| r.unwrap_or(f64::NAN)).collect();
        Outcome {
            id: 9,
            pass: in_range && logged,
            summary: format!(
                "DT average swap acceptance per seed [{}] (need inside (0.05, 0.95)); per-window rate logged on every evaluation row: {logged}",
                rates.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
            ),
        }
    });

    timed(&mut || {
        let mut ten = ExperimentConfig::desk(Method::Cast);
        ten.cast.as_mut().unwrap().ratio = 10;
        let mut one = ten.clone();
        one.cast.as_mut().unwrap().ratio = 1;
        let a: Vec<f64> = sweep(&ten, &data, &dir.path().join("cast_10")).rows.iter().map(|r| final_ll(r)).collect();
        let b: Vec<f64> = sweep(&one, &data, &dir.path().join("cast_1")).rows.iter().map(|r| final_ll(r)).collect();
        let gap = median(&a) - median(&b);
        Outcome {
            id: 8,
            pass: gap >= 2.0,
            summary: format!(
                "median CAST 1:10 − median CAST 1:1 = {gap:.2} nats (need ≥ 2); 1:10 final [{}], 1:1 final [{}]",
                fmt_list(&a),
                fmt_list(&b)
            ),
        }
    });

    timed(&mut || {
        let pre = sweep(&dt_cfg_pre, &data, &dir.path().join("pretrained"));
        let joint: Vec<f64> = dt.rows.iter().map(|r| final_bound(r, 2)).collect();
        let pretrained: Vec<f64> = pre.rows.iter().map(|r| final_bound(r, 2)).collect();
        let wins = joint.iter().zip(&pretrained).filter(|(j, p)| p <= j).count();
        Outcome {
            id: 10,
            pass: wins >= 3,
            summary: format!(
                "pretrained bound ≤ joint-only bound on {wins}/5 seeds (need ≥ 3); pretrained [{}], joint-only [{}]",
                fmt_list(&pretrained),
                fmt_list(&joint)
            ),
        }
    });

    timed(&mut || {
        let (_, weight_err) = verify::cast_frozen(&opts);
        from_checks(
            11,
            &[CheckResult::at_most(
                "CAST weights vs tempered log-partition differences",
                weight_err,
                0.1,
                "4×4, M=5, 1e6 steps, nats",
            )],
        )
    });

    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
