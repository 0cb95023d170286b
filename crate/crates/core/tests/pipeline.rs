use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ngram_lab::eval::EvalReport;
use ngram_lab::pipeline::{read_rows, render_report, replay_cell, run, ExperimentConfig, RunOptions, BEST_CLASSIC};

fn quiet() -> RunOptions {
    RunOptions { jobs: 1, only_cells: None, quiet: true }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const DESK: &str = r#"
seed = 11
replicates = 1
n_train = 5000
n_test = 3000

[[lms]]
family = "general"
orders = [2]
alphabet_sizes = [8]

[estimators]
n_hat = ["n"]
"#;

#[test]
fn desk_run_has_one_row_per_method_and_hyperparameter() {
    let out = tempfile::tempdir().unwrap();
    let summary = run(&config(DESK), out.path(), &quiet()).unwrap();
    assert!(summary.all_complete());
    assert_eq!(summary.computed, 1);
    let rows = read_rows(&out.path().join("results.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    let keys: HashSet<_> = rows.iter().map(|r| (r.cell.clone(), r.method.clone(), r.hyperparameter.map(f64::to_bits))).collect();
    assert_eq!(keys.len(), rows.len());
    for name in ["manifest.json", "regression.json", "report.csv", "report.txt"] {
        assert!(out.path().join(name).exists(), "{name}");
    }
    // one dev-selected setting per method
    assert_eq!(rows.iter().filter(|r| r.dev_selected).count(), 4);
    assert!(rows.iter().all(|r| r.kl_hat_finite.is_finite() && r.n_test == 3000));
}

#[test]
fn n_hat_grid_fits_three_orders_per_method() {
    let cfg = config(
        r#"
seed = 2
replicates = 1
n_train = 400
n_test = 200
[[lms]]
family = "general"
orders = [4]
alphabet_sizes = [3]
[estimators]
n_hat = ["n-2", "n", "2n"]
"#,
    );
    let out = tempfile::tempdir().unwrap();
    run(&cfg, out.path(), &quiet()).unwrap();
    let rows = read_rows(&out.path().join("results.csv")).unwrap();
    for method in ["mle", "add_lambda", "absolute_discounting", "witten_bell"] {
        let orders: HashSet<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.n_hat).collect();
        assert_eq!(orders, HashSet::from([2, 4, 8]), "{method}");
    }
    let models = fs::read_dir(out.path().join("cells/general-n4-s3-r0/models")).unwrap().count();
    assert_eq!(models, 3 * 8);
}

const SMALL: &str = r#"
seed = 5
replicates = 3
n_train = 600
n_test = 400
[[lms]]
family = "general"
orders = [2]
alphabet_sizes = [4]
[[lms]]
family = "dense"
orders = [3]
alphabet_sizes = [8]
ranks = [2]
[estimators]
n_hat = ["n-1", "n"]
"#;

#[test]
fn rerun_is_free_and_corruption_is_repaired() {
    let cfg = config(SMALL);
    let out = tempfile::tempdir().unwrap();
    let first = run(&cfg, out.path(), &quiet()).unwrap();
    assert_eq!((first.computed, first.cached), (6, 0));
    let before = snapshot(out.path());

    let again = run(&cfg, out.path(), &quiet()).unwrap();
    assert_eq!((again.computed, again.cached, again.requeued), (0, 6, 0));
    assert_eq!(snapshot(out.path()), before);

    let victim = out.path().join("cells/general-n2-s4-r1/scores/truth.txt");
    let text = fs::read_to_string(&victim).unwrap();
    fs::write(&victim, &text[..text.len() / 2]).unwrap();
    fs::remove_file(out.path().join("cells/dense-n3-s8-R2-r0/cell.json")).unwrap();
    fs::create_dir_all(out.path().join("cells/.tmp-general-n2-s4-r0")).unwrap();
    let repaired = run(&cfg, out.path(), &quiet()).unwrap();
    assert_eq!((repaired.computed, repaired.cached, repaired.requeued), (2, 4, 2));
    assert_eq!(snapshot(out.path()), before);
}

#[test]
fn aggregates_match_a_recomputation_from_eval_reports() {
    let out = tempfile::tempdir().unwrap();
    run(&config(SMALL), out.path(), &quiet()).unwrap();
    let rows = read_rows(&out.path().join("results.csv")).unwrap();
    let report = render_report(&rows);

    let mut by_group: BTreeMap<(String, usize, usize, String), Vec<f64>> = BTreeMap::new();
    let mut best: BTreeMap<(String, usize, usize, String), f64> = BTreeMap::new();
    for r in &rows {
        let id = match r.hyperparameter {
            Some(h) => format!("{}-{h}-n{}", r.method, r.n_hat),
            None => format!("{}-n{}", r.method, r.n_hat),
        };
        let path = out.path().join("cells").join(&r.cell).join("reports").join(format!("{id}.json"));
        let raw: EvalReport = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let config = (r.family.to_string(), r.n, r.n_hat, r.cell.clone());
        let slot = best.entry(config).or_insert(f64::INFINITY);
        *slot = slot.min(raw.kl_hat);
        if r.dev_selected {
            by_group.entry((r.family.to_string(), r.n, r.n_hat, r.method.clone())).or_default().push(raw.kl_hat);
        }
    }
    for ((family, n, n_hat, _cell), kl) in best {
        by_group.entry((family, n, n_hat, BEST_CLASSIC.to_string())).or_default().push(kl);
    }
    assert_eq!(by_group.len(), report.aggregates.len());
    for a in &report.aggregates {
        let xs = &by_group[&(a.family.to_string(), a.n, a.n_hat, a.estimator.clone())];
        assert_eq!(xs.len(), a.replicates);
        if a.n_infinite > 0 {
            assert!(xs.iter().any(|x| x.is_infinite()));
            continue;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt();
        assert_eq!(a.mean, mean);
        assert_eq!(a.sd, sd);
    }
}

#[test]
fn replayed_cell_is_bit_identical() {
    let out = tempfile::tempdir().unwrap();
    run(&config(SMALL), out.path(), &quiet()).unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    for key in ["general-n2-s4-r2", "dense-n3-s8-R2-r1"] {
        let dir = replay_cell(&out.path().join("manifest.json"), key, elsewhere.path()).unwrap();
        assert_eq!(snapshot(&dir), snapshot(&out.path().join("cells").join(key)));
    }
}
