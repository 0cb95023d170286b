//! Runs every headline acceptance criterion and prints one PASS/FAIL line each.

mod common;

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ngram_lab::classic::{ClassicLm, CountTable, Smoothing};
use ngram_lab::corpus::{sample_strings, Corpus, Split};
use ngram_lab::eval::{empirical_kl, exact_cross_entropy, exact_entropy, exact_kl, score_corpus};
use ngram_lab::gen::{generate_general, generate_representation, GeneralLmSpec, RepLmSpec};
use ngram_lab::lm::{constant_lm, well_formed_histories, Alphabet, History, LanguageModel, SymbolString};
use ngram_lab::neural::{gradcheck, GradcheckKind, LogLinearModel, NeuralNGramModel, NeuralShape};
use ngram_lab::pipeline::{read_rows, replay_cell, run, ExperimentConfig, NeuralSettings, ResultRow, RunOptions};
use ngram_lab::seeding;
use ngram_lab::stats::ols_fit;
use rand::Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_secs, format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64()))
}

fn corpus(strings: Vec<SymbolString>, split: Split) -> Corpus {
    Corpus { strings, split, lm_id: "lm".into(), seed: 0 }
}

fn normalization() -> Check {
    let start = Instant::now();
    let mut rng = seeding::rng(2024);
    let (mut gen_cases, mut classic_cases, mut neural_cases) = (0usize, 0usize, 0usize);
    while gen_cases < 4000 {
        let order = rng.random_range(2..=4);
        let sigma = rng.random_range(1..=5);
        let seed = rng.random();
        let lm = match rng.random_range(0..3) {
            0 => generate_general(&GeneralLmSpec::new(order, sigma, seed)),
            1 => generate_representation(&RepLmSpec::sparse(order, sigma, seed)),
            _ => generate_representation(&RepLmSpec::dense(order, sigma, rng.random_range(1..=sigma), seed)),
        }
        .map_err(|e| e.to_string())?;
        let a = lm.alphabet();
        for h in well_formed_histories(a, order - 1) {
            let d = lm.conditional(History::new(a, order, &h).unwrap()).unwrap().unwrap();
            ensure((d.sum() - 1.0).abs() < 1e-9, format!("generated LM sums to {}", d.sum()))?;
            ensure(d.prob(a.eos_outcome()) == 1.0 / 40.0, "EOS probability is not 1/40")?;
            gen_cases += 1;
        }
    }
    let methods = [
        Smoothing::Mle,
        Smoothing::AddLambda { lambda: 0.1 },
        Smoothing::AbsoluteDiscounting { delta: 0.8 },
        Smoothing::WittenBell,
    ];
    let (mut seen, mut unseen) = (0usize, 0usize);
    while classic_cases < 4000 {
        let sigma = rng.random_range(1..=4);
        let n_hat = rng.random_range(1..=4);
        let truth = generate_general(&GeneralLmSpec::new(2, sigma, rng.random())).unwrap();
        let strings = sample_strings(&truth, rng.random_range(0..30), rng.random(), 10_000).unwrap();
        let a = truth.alphabet();
        let table = Arc::new(CountTable::count_strings(a, &strings, n_hat).unwrap());
        for h in well_formed_histories(a, n_hat - 1) {
            let observed = table.mle(&h, 0).is_some();
            for m in methods {
                let lm = ClassicLm::new(table.clone(), m, n_hat).unwrap();
                match lm.conditional(History::new(a, n_hat, &h).unwrap()).unwrap() {
                    Some(d) => ensure((d.sum() - 1.0).abs() < 1e-9, format!("{m} sums to {}", d.sum()))?,
                    None => ensure(m == Smoothing::Mle && !observed, format!("{m} undefined on an observed history"))?,
                }
                classic_cases += 1;
            }
            if observed {
                seen += 1;
            } else {
                unseen += 1;
            }
        }
    }
    while neural_cases < 2000 {
        let sigma = rng.random_range(1..=5);
        let order = rng.random_range(1..=3);
        let a = Alphabet::new(sigma).unwrap();
        let ll = LogLinearModel::random(a, order, 4.0, rng.random()).unwrap();
        let shape = NeuralShape { embed_dim: 6, hidden: 10, dropout: 0.5, bias: true };
        let nn = NeuralNGramModel::init(a, order, shape, rng.random()).unwrap();
        let mut drop_rng = seeding::rng(rng.random());
        for h in well_formed_histories(a, order - 1) {
            let hist = History::new(a, order, &h).unwrap();
            for d in [
                ll.forward(hist).unwrap(),
                nn.forward(hist, None).unwrap(),
                nn.forward(hist, Some(&mut drop_rng)).unwrap(),
            ] {
                ensure((d.sum() - 1.0).abs() < 1e-7, format!("neural forward sums to {}", d.sum()))?;
                neural_cases += 1;
            }
        }
    }
    let total = gen_cases + classic_cases + neural_cases;
    ensure(total >= 10_000, "fewer than 10⁴ cases")?;
    ensure(unseen > 0 && seen > 0, "classic cases missed observed or unobserved histories")?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "{total} distributions (gen {gen_cases}, classic {classic_cases} over {seen} seen / {unseen} unseen histories, neural {neural_cases}) in {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn backoff_fixture() -> Check {
    let a = Alphabet::new(2).unwrap();
    let strings = vec![SymbolString::new(a, vec![0, 1]).unwrap(), SymbolString::new(a, vec![0]).unwrap()];
    let table = CountTable::count_strings(a, &strings, 2).unwrap();
    let got = [table.add_lambda(1.0, &[0], 1), table.absolute_discounting(0.5, &[0], 1), table.witten_bell(&[0], 1)];
    let want = [0.4, 0.35, 0.375];
    for (g, w) in got.iter().zip(want) {
        ensure((g - w).abs() < 1e-12, format!("{g} vs {w}"))?;
    }
    Ok(format!("add-λ {} / AD {} / WB {}", got[0], got[1], got[2]))
}

fn exact_oracle_suite() -> Check {
    let start = Instant::now();
    let geometric = |p: f64| constant_lm(Alphabet::new(1).unwrap(), 2, &[1.0 - p, p]).unwrap();
    let h = exact_entropy(&geometric(0.5)).map_err(|e| e.to_string())?;
    ensure((h - 2.0 * LN_2).abs() < 1e-10, format!("geometric entropy {h}"))?;
    let mut worst_identity: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for seed in 0..100u64 {
        let order = 2 + (seed % 3) as usize;
        let sigma = 2 + (seed % 3) as usize;
        let p = generate_general(&GeneralLmSpec::new(order, sigma, seed)).unwrap();
        let q = generate_general(&GeneralLmSpec { alpha: 1.0, ..GeneralLmSpec::new(order, sigma, 500 + seed) }).unwrap();
        let self_kl = exact_kl(&p, &p).unwrap();
        ensure(self_kl.abs() < 1e-12, format!("KL(p‖p) = {self_kl}"))?;
        let kl = exact_kl(&p, &q).unwrap();
        let identity = exact_cross_entropy(&p, &q).unwrap() - exact_entropy(&p).unwrap() - kl;
        worst_identity = worst_identity.max(identity.abs());
        min_kl = min_kl.min(kl);
    }
    ensure(worst_identity < 1e-10, format!("cross-entropy identity off by {worst_identity}"))?;
    ensure(min_kl >= 0.0, format!("negative KL {min_kl}"))?;
    within(start.elapsed(), 60)?;
    Ok(format!("H = 2 ln 2 ± {:.1e}; identity ≤ {worst_identity:.1e}; min KL over 100 pairs {min_kl:.4}", (h - 2.0 * LN_2).abs()))
}

fn monte_carlo_consistency() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    for seed in 0..2u64 {
        let p = generate_general(&GeneralLmSpec::new(2, 4, 40 + seed)).unwrap();
        let q = generate_general(&GeneralLmSpec { alpha: 1.0, ..GeneralLmSpec::new(2, 4, 80 + seed) }).unwrap();
        let (h, kl) = (exact_entropy(&p).unwrap(), exact_kl(&p, &q).unwrap());
        for m in [1_000usize, 10_000, 100_000] {
            let test = corpus(sample_strings(&p, m, 7 * m as u64 + seed, 100_000).unwrap(), Split::Test);
            let sp = score_corpus(&p, &test, "p").unwrap();
            let nll: Vec<f64> = sp.logprobs.iter().map(|l| -l).collect();
            let (h_hat, h_se) = common::mean_and_stderr(&nll);
            let r = empirical_kl(&sp, &score_corpus(&q, &test, "q").unwrap()).unwrap();
            let (zh, zk) = ((h_hat - h).abs() / h_se, (r.kl_hat - kl).abs() / r.stderr);
            ensure(zh < 3.0 && zk < 3.0, format!("seed {seed} M={m}: entropy off by {zh:.2} se, KL off by {zk:.2} se"))?;
            lines.push(format!("M={m}: {zh:.2}/{zk:.2}"));
        }
    }
    within(start.elapsed(), 300)?;
    Ok(format!("|Δ|/se for entropy/KL, two LM pairs: {}", lines.join(", ")))
}

fn mle_kl(alpha: f64, seed: u64, m: usize) -> f64 {
    let p = generate_general(&GeneralLmSpec { alpha, ..GeneralLmSpec::new(2, 4, seed) }).unwrap();
    let train = corpus(sample_strings(&p, m, 1000 + seed, 100_000).unwrap(), Split::Train);
    let table = Arc::new(CountTable::count(p.alphabet(), &train, 2).unwrap());
    exact_kl(&p, &ClassicLm::new(table, Smoothing::Mle, 2).unwrap()).unwrap()
}

fn estimator_consistency() -> Check {
    let sizes = [1_000usize, 10_000, 100_000];
    let mut inversions = 0;
    let mut at_max = Vec::new();
    for seed in 0..5u64 {
        let kls: Vec<f64> = sizes.iter().map(|&m| mle_kl(1.0, seed, m)).collect();
        inversions += kls.windows(2).filter(|w| w[1] > w[0]).count();
        at_max.push(kls[2]);
    }
    let worst = at_max.iter().cloned().fold(0.0, f64::max);
    ensure(worst < 0.02, format!("KL at 10⁵ strings reaches {worst}"))?;
    ensure(inversions <= 1, format!("{inversions} inversions"))?;
    let sparse_truth = mle_kl(0.1, 0, 100_000);
    Ok(format!(
        "Dirichlet(1) truths: max KL at 10⁵ = {worst:.5}, {inversions} inversions; Dirichlet(0.1) truth gives KL = {sparse_truth} (unseen transitions)"
    ))
}

fn gradient_checks() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        for kind in [GradcheckKind::LogLinear, GradcheckKind::Neural] {
            let e = gradcheck(kind, seed).map_err(|e| e.to_string())?;
            ensure(e < 1e-4, format!("{kind:?} seed {seed}: relative error {e}"))?;
            worst = worst.max(e);
        }
    }
    within(start.elapsed(), 120)?;
    Ok(format!("max relative error {worst:.2e} over 5 seeds × 2 models"))
}

fn best_classic(rows: &[ResultRow], cell: &str) -> f64 {
    rows.iter().filter(|r| r.cell == cell && r.is_classic()).map(|r| r.kl_hat).fold(f64::INFINITY, f64::min)
}

fn neural_kl(rows: &[ResultRow], cell: &str) -> f64 {
    rows.iter().find(|r| r.cell == cell && r.method == "neural").map(|r| r.kl_hat).unwrap_or(f64::NAN)
}

fn trend_config(lms: &str, classic: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!(
        "seed = 1234\nreplicates = 3\nn_train = 20000\nn_test = 5000\n{lms}\n[estimators]\nn_hat = [\"n\"]\nclassic = {classic}\n"
    ))
    .unwrap();
    cfg.estimators.neural = Some(NeuralSettings::desk());
    cfg
}

fn majority(wins: &[bool]) -> bool {
    wins.iter().filter(|&&w| w).count() * 2 > wins.len()
}

fn trend_classic_neural(out: &Path) -> Check {
    let start = Instant::now();
    let cfg = trend_config(
        "[[lms]]\nfamily = \"general\"\norders = [4]\nalphabet_sizes = [8]\n[[lms]]\nfamily = \"dense\"\norders = [4]\nalphabet_sizes = [16]\nranks = [8]",
        true,
    );
    let summary = run(&cfg, out, &RunOptions { jobs: 1, only_cells: None, quiet: true }).map_err(|e| e.to_string())?;
    ensure(summary.all_complete(), format!("failed cells: {:?}", summary.failed))?;
    let rows = read_rows(&out.join("results.csv")).map_err(|e| e.to_string())?;
    let mut general = Vec::new();
    let mut dense = Vec::new();
    let mut detail = Vec::new();
    for r in 0..3 {
        let g = format!("general-n4-s8-r{r}");
        let d = format!("dense-n4-s16-R8-r{r}");
        let (gc, gn) = (best_classic(&rows, &g), neural_kl(&rows, &g));
        let (dc, dn) = (best_classic(&rows, &d), neural_kl(&rows, &d));
        general.push(gc < gn);
        dense.push(dn < dc);
        detail.push(format!("r{r}: general classic {gc:.2} vs neural {gn:.2}; dense neural {dn:.2} vs classic {dc:.2}"));
    }
    within(start.elapsed(), 1800)?;
    let text = format!("{} ({:.0}s)", detail.join(" | "), start.elapsed().as_secs_f64());
    ensure(majority(&general) && majority(&dense), text.clone())?;
    Ok(text)
}

fn trend_dense_sparse(out: &Path) -> Check {
    let cfg = trend_config(
        "[[lms]]\nfamily = \"sparse\"\norders = [4]\nalphabet_sizes = [64]\n[[lms]]\nfamily = \"dense\"\norders = [4]\nalphabet_sizes = [64]\nranks = [16]",
        false,
    );
    let summary = run(&cfg, out, &RunOptions { jobs: 1, only_cells: None, quiet: true }).map_err(|e| e.to_string())?;
    ensure(summary.all_complete(), format!("failed cells: {:?}", summary.failed))?;
    let rows = read_rows(&out.join("results.csv")).map_err(|e| e.to_string())?;
    let mut wins = Vec::new();
    let mut detail = Vec::new();
    for r in 0..3 {
        let (dn, sn) = (neural_kl(&rows, &format!("dense-n4-s64-R16-r{r}")), neural_kl(&rows, &format!("sparse-n4-s64-r{r}")));
        wins.push(dn < sn);
        detail.push(format!("r{r}: dense {dn:.2} vs sparse {sn:.2}"));
    }
    let text = detail.join(" | ");
    ensure(majority(&wins), text.clone())?;
    Ok(text)
}

fn ols_suite() -> Check {
    let mut worst_beta: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut insignificant = 0;
    let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    for trial in 0..100u64 {
        let mut rng = seeding::rng(seeding::derive(trial, "ols"));
        let mut cols = vec![Vec::new(); 3];
        let mut y = Vec::new();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            y.push(0.5 * x[0] - 0.3 * x[1] + 0.1 * rng.sample::<f64, _>(StandardNormal));
            for (c, v) in cols.iter_mut().zip(x) {
                c.push(v);
            }
        }
        let fit = ols_fit(&names, &cols, &y).map_err(|e| e.to_string())?;
        worst_beta = worst_beta
            .max((fit.coefficient("x1").unwrap().beta - 0.5).abs())
            .max((fit.coefficient("x2").unwrap().beta + 0.3).abs());
        if fit.coefficient("x3").unwrap().p > 0.05 {
            insignificant += 1;
        }
        worst_orth = worst_orth.max(fit.residuals.iter().sum::<f64>().abs());
        for c in &cols {
            worst_orth = worst_orth.max(c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum::<f64>().abs());
        }
    }
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let line: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let perfect = ols_fit(&names[..1], &[x], &line).map_err(|e| e.to_string())?;
    ensure(worst_beta < 0.02, format!("coefficient error {worst_beta}"))?;
    ensure(insignificant >= 90, format!("noise predictor insignificant in only {insignificant}/100"))?;
    ensure(worst_orth < 1e-8, format!("residual inner product {worst_orth:e}"))?;
    ensure((perfect.r2 - 1.0).abs() < 1e-12, format!("perfect-fit R² {}", perfect.r2))?;
    Ok(format!(
        "max |β̂ − β| {worst_beta:.4}; x3 insignificant in {insignificant}/100; max |Xᵀr| {worst_orth:.1e}; perfect-fit R² = {}",
        perfect.r2
    ))
}

fn reproducibility(run_dir: &Path, scratch: &Path) -> Check {
    let manifest = run_dir.join("manifest.json");
    ensure(manifest.exists(), "no trend run to replay")?;
    let mut compared = 0;
    for key in ["dense-n4-s16-R8-r1", "general-n4-s8-r2"] {
        let replayed = replay_cell(&manifest, key, scratch).map_err(|e| e.to_string())?;
        let original = run_dir.join("cells").join(key);
        let files = walk(&original);
        ensure(files == walk(&replayed), format!("{key}: file lists differ"))?;
        for f in &files {
            let (a, b) = (std::fs::read(original.join(f)).unwrap(), std::fs::read(replayed.join(f)).unwrap());
            ensure(a == b, format!("{key}/{f} differs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} files across 2 cells (one with a trained neural model) byte-identical"))
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let classic_dir = scratch.path().join("classic");
    let rep_dir = scratch.path().join("representations");
    let replay_dir = scratch.path().join("replay");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        ("normalization suite", Box::new(normalization)),
        ("backoff hand-oracle", Box::new(backoff_fixture)),
        ("exact-oracle suite", Box::new(exact_oracle_suite)),
        ("Monte-Carlo consistency", Box::new(monte_carlo_consistency)),
        ("estimator consistency", Box::new(estimator_consistency)),
        ("gradient checks", Box::new(gradient_checks)),
        ("trend: classic vs neural", Box::new(|| trend_classic_neural(&classic_dir))),
        ("trend: dense vs sparse", Box::new(|| trend_dense_sparse(&rep_dir))),
        ("OLS suite", Box::new(ols_suite)),
        ("reproducibility", Box::new(|| reproducibility(&classic_dir, &replay_dir))),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
