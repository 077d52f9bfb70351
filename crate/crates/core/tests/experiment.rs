use std::path::Path;

use deeptemper::experiment::run::{
    build_data, cell_dir, evaluate_checkpoint, generate_data, CHECKPOINT_FILE, METRICS_FILE, TEST_SET_FILE,
};
use deeptemper::experiment::{checkpoint, run_cell, Cell, ExperimentConfig, Method};
use deeptemper::metrics::read_metrics;
use deeptemper::Error;

fn small(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(method);
    cfg.dataset.height = 4;
    cfg.dataset.width = 4;
    cfg.dataset.test_size = 200;
    cfg.layer_sizes[0] = 16;
    for n in cfg.layer_sizes.iter_mut().skip(1) {
        *n = 4;
    }
    cfg.train.total_updates = 300;
    cfg.train.eval_interval = 50;
    if let Some(pt) = cfg.pt.as_mut() {
        pt.n_temperatures = 4;
    }
    if let Some(cast) = cfg.cast.as_mut() {
        cast.n_temperatures = 4;
        cast.ratio = 2;
    }
    cfg
}

const CELL: Cell = Cell {
    seed: 3,
    learning_rate: 0.01,
};

fn run(cfg: &ExperimentConfig, root: &Path) -> Vec<u8> {
    let data = build_data(cfg).unwrap();
    let out = run_cell(cfg, root, &data, &CELL, false, None).unwrap();
    std::fs::read(out.dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn every_method_runs_and_reruns_identically() {
    for method in [Method::Sml, Method::Pt, Method::Cast, Method::Dt] {
        let cfg = small(method);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = run(&cfg, a.path());
        assert_eq!(first, run(&cfg, b.path()), "{method}");
        let (n_pairs, rows) = read_metrics(&cell_dir(a.path(), method, &CELL).join(METRICS_FILE)).unwrap();
        assert_eq!(n_pairs, cfg.n_swap_pairs());
        let n_layers = cfg.n_layers();
        assert_eq!(rows.len(), 7 * n_layers);
        assert!(rows.iter().all(|r| r.test_ll_nats.unwrap() < 0.0));
        for r in &rows {
            for x in r.swap_rates.iter().flatten() {
                assert!((0.0..=1.0).contains(x));
            }
        }
    }
}

#[test]
fn zero_updates_give_only_the_initial_row() {
    let mut cfg = small(Method::Sml);
    cfg.train.total_updates = 0;
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path());
    let (_, rows) = read_metrics(&cell_dir(dir.path(), Method::Sml, &CELL).join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].iteration, 0);
}

#[test]
fn single_layer_dt_writes_the_sml_csv() {
    let sml = small(Method::Sml);
    let mut dt = small(Method::Dt);
    dt.layer_sizes = vec![16, 4];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(&sml, a.path()), run(&dt, b.path()));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for method in [Method::Dt, Method::Cast, Method::Pt] {
        let cfg = small(method);
        let data = build_data(&cfg).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let full = run_cell(&cfg, a.path(), &data, &CELL, false, None).unwrap();

        let partial = run_cell(&cfg, b.path(), &data, &CELL, false, Some(120)).unwrap();
        // rows written after the last checkpoint are dropped on resume
        let resumed = run_cell(&cfg, b.path(), &data, &CELL, true, None).unwrap();
        assert_eq!(resumed.resumed_from, Some(100));
        assert_eq!(partial.dir, resumed.dir);
        assert_eq!(
            std::fs::read(full.dir.join(METRICS_FILE)).unwrap(),
            std::fs::read(resumed.dir.join(METRICS_FILE)).unwrap()
        );
        let ck_a = checkpoint::load(&full.dir.join(CHECKPOINT_FILE)).unwrap();
        let ck_b = checkpoint::load(&resumed.dir.join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ck_a, ck_b);
    }
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let cfg = small(Method::Sml);
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path());
    let path = cell_dir(dir.path(), Method::Sml, &CELL).join(CHECKPOINT_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 9;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::CheckpointVersion { found: 9, .. })));
    let data = build_data(&cfg).unwrap();
    assert!(run_cell(&cfg, dir.path(), &data, &CELL, true, None).is_err());
}

#[test]
fn evaluating_a_checkpoint_reproduces_its_last_rows() {
    let cfg = small(Method::Dt);
    let dir = tempfile::tempdir().unwrap();
    let data = build_data(&cfg).unwrap();
    let out = run_cell(&cfg, dir.path(), &data, &CELL, false, None).unwrap();
    let again = evaluate_checkpoint(&cfg, &out.dir.join(CHECKPOINT_FILE), &data.test).unwrap();
    assert_eq!(again, out.final_rows);
    let twice = evaluate_checkpoint(&cfg, &out.dir.join(CHECKPOINT_FILE), &data.test).unwrap();
    assert_eq!(again, twice);
}

#[test]
fn generated_data_is_byte_stable() {
    let mut cfg = small(Method::Sml);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_data(&cfg, a.path()).unwrap();
    generate_data(&cfg, b.path()).unwrap();
    for f in [TEST_SET_FILE, "modes_spec.json", "config.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    cfg.dataset.test_size = 0;
    let c = tempfile::tempdir().unwrap();
    let data = generate_data(&cfg, c.path()).unwrap();
    assert_eq!(std::fs::read(c.path().join(TEST_SET_FILE)).unwrap().len(), 13);
    assert!(run_cell(&cfg, c.path(), &data, &CELL, false, None).is_err());
}
