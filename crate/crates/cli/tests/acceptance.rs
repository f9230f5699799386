//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delaylab::base::{kl_threshold, kl_ucb_index};
use delaylab::delayed_ucb::{DelayedUcb, IndexKind};
use delaylab::environments::BernoulliBandit;
use delaylab::labkit::bounds::{bold_regret_bound, outstanding_bound, ucb1_regret_bound};
use delaylab::labkit::montecarlo::{monte_carlo_with, run_single};
use delaylab::labkit::regret::pseudo_regret;
use delaylab::labkit::reorder::{reorder_distribution_check, Verdict};
use delaylab::labkit::validate::{check_pool_law, check_qpmd_lemma, check_zero_delay};
use delaylab::labkit::AggregateStats;
use delaylab::protocol::run_episode;
use delaylab::{DelayModel, ExperimentConfig, MetaKind, RunTrace, Streams};

struct Outcome {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

/// Every QPM-D run of the suite goes through here.
#[derive(Default)]
struct QpmdLedger {
    runs: usize,
    violations: Vec<String>,
}

impl QpmdLedger {
    fn check(&mut self, config: &ExperimentConfig, output: &delaylab::labkit::RunOutput) {
        if config.learner.meta != MetaKind::Qpmd {
            return;
        }
        self.runs += 1;
        if let Some(v) = check_qpmd_lemma(output) {
            self.violations.push(format!("{}: {v}", config.learner.label()));
        }
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn config(text: &str) -> ExperimentConfig {
    config_in(text, Path::new("."))
}

fn config_in(text: &str, dir: &Path) -> ExperimentConfig {
    ExperimentConfig::from_json_str(text, dir).unwrap_or_else(|e| panic!("bad config: {e}\n{text}"))
}

fn bernoulli(means: &str, delay: &str, learner: &str, horizon: usize, runs: usize, seed: u64) -> ExperimentConfig {
    config(&format!(
        r#"{{
        "environment": {{"kind": "bernoulli", "means": {means}}},
        "delay": {delay},
        "learner": {learner},
        "horizon": {horizon}, "runs": {runs}, "seed": {seed}
    }}"#
    ))
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

/// Brute-force `G_t` straight from its definition.
fn outstanding_oracle(delays: &[u64], t: usize) -> usize {
    (1..t).filter(|&s| s as u64 + delays[s - 1] >= t as u64).count()
}

fn running_max(xs: &[usize]) -> Vec<usize> {
    xs.iter()
        .scan(0, |m, &x| {
            *m = (*m).max(x);
            Some(*m)
        })
        .collect()
}

fn pool_law() -> Outcome {
    let start = Instant::now();
    let c = bernoulli(
        "[0.7, 0.5, 0.4]",
        r#"{"kind": "geometric", "mean": 5}"#,
        r#"{"meta": "bold", "base": "exp3"}"#,
        1000,
        200,
        101,
    );
    let mut failures = Vec::new();
    let mut checked_steps = 0;
    let stats = monte_carlo_with(&c, jobs(), |out| {
        let trace = &out.trace;
        let law = running_max(&trace.outstanding);
        for (t, (d, g)) in trace.diagnostics.iter().zip(&law).enumerate() {
            checked_steps += 1;
            if d.pool_size != Some(g + 1) {
                failures.push(format!("run {} t {}", out.run_index, t + 1));
            }
        }
        if let Some(v) = check_pool_law(trace, out.run_index) {
            failures.push(v.to_string());
        }
        Ok(())
    })
    .unwrap();
    let elapsed = start.elapsed();
    Outcome {
        id: 1,
        title: "BOLD pool size equals peak outstanding + 1",
        pass: failures.is_empty() && stats.runs == 200 && checked_steps == 200_000 && within(elapsed, 5),
        detail: format!(
            "{} runs, {checked_steps} steps, {} violations, mean pool {:.2}, {:.2?}",
            stats.runs,
            failures.len(),
            stats.mean_pool_size.unwrap_or(f64::NAN),
            elapsed
        ),
    }
}

fn constant_delay_cycle() -> Outcome {
    let start = Instant::now();
    let c = bernoulli(
        "[0.7, 0.5]",
        r#"{"kind": "constant", "value": 5}"#,
        r#"{"meta": "bold", "base": "ucb1"}"#,
        1000,
        1,
        7,
    );
    let out = run_single(&c, 0).unwrap();
    let mismatches = out
        .trace
        .diagnostics
        .iter()
        .enumerate()
        .filter(|(i, d)| d.instance != Some(i % 6))
        .count();
    let pool = out.learner.pool_size;
    let elapsed = start.elapsed();
    Outcome {
        id: 2,
        title: "constant delay 5 cycles through exactly 6 instances",
        pass: pool == Some(6) && mismatches == 0 && within(elapsed, 1),
        detail: format!("pool {pool:?}, {mismatches} off-cycle steps, {elapsed:.2?}"),
    }
}

fn outstanding_lemma() -> Outcome {
    let start = Instant::now();
    let c = bernoulli(
        "[0.7, 0.5]",
        r#"{"kind": "geometric", "mean": 5}"#,
        r#"{"meta": "none", "base": "ucb1"}"#,
        10_000,
        1000,
        303,
    );
    let stats = monte_carlo_with(&c, jobs(), |_| Ok(())).unwrap();
    let n = 1e4f64;
    let oracle = 5.0 + 2.0 * n.ln() + (4.0 * 5.0 * n.ln()).sqrt() + 1.0;
    let bound = outstanding_bound(n, 5.0);
    let elapsed = start.elapsed();
    Outcome {
        id: 3,
        title: "mean peak outstanding count within the i.i.d. budget",
        pass: (bound - oracle).abs() < 1e-9
            && stats.mean_g_star <= bound
            && within(elapsed, 30),
        detail: format!(
            "mean G*_n = {:.3} (se {:.3}) <= {bound:.3}, {elapsed:.2?}",
            stats.mean_g_star, stats.g_star_stderr
        ),
    }
}

fn qpmd_lemma(ledger: &mut QpmdLedger) {
    for base in ["ucb1", "kl-ucb", "exp3"] {
        for delay in [
            r#"{"kind": "geometric", "mean": 5}"#,
            r#"{"kind": "constant", "value": 13}"#,
            r#"{"kind": "uniform", "lo": 0, "hi": 40}"#,
            r#"{"kind": "per_action", "models": {"0": {"kind": "constant", "value": 2}, "1": {"kind": "geometric", "mean": 30}, "2": {"kind": "constant", "value": 0}}}"#,
        ] {
            let c = bernoulli(
                "[0.6, 0.5, 0.45]",
                delay,
                &format!(r#"{{"meta": "qpmd", "base": "{base}"}}"#),
                2000,
                50,
                404,
            );
            monte_carlo_with(&c, jobs(), |out| {
                ledger.check(&c, out);
                Ok(())
            })
            .unwrap();
        }
    }
}

struct FinalRegrets {
    stats: AggregateStats,
    finals: Vec<f64>,
}

fn final_regrets(c: &ExperimentConfig) -> FinalRegrets {
    let means = c.environment.means().unwrap().to_vec();
    let mut finals = Vec::new();
    let stats = monte_carlo_with(c, jobs(), |out| {
        let counts: Vec<f64> = out.trace.play_counts().iter().map(|&x| x as f64).collect();
        finals.push(pseudo_regret(&counts, &means)?);
        Ok(())
    })
    .unwrap();
    FinalRegrets { stats, finals }
}

fn ucb_setting(delay: u64) -> ExperimentConfig {
    bernoulli(
        "[0.7, 0.5]",
        &format!(r#"{{"kind": "constant", "value": {delay}}}"#),
        r#"{"meta": "none", "base": "ucb1"}"#,
        10_000,
        500,
        505,
    )
}

fn delayed_ucb1_bound(delayed: &FinalRegrets, elapsed: Duration) -> Outcome {
    let stats = &delayed.stats;
    let n = 1e4f64;
    let gstar = &stats.mean_arm_g_star;
    let bound = ucb1_regret_bound(n, &[0.0, 0.2], gstar).unwrap();
    let oracle = 8.0 * n.ln() / 0.2 + 3.5 * 0.2 + 0.2 * gstar[1];
    let mean = stats.final_regret();
    let se = stats.final_stderr();
    Outcome {
        id: 5,
        title: "Delayed-UCB1 regret within its bound",
        pass: (bound - oracle).abs() < 1e-9 && mean <= bound + 3.0 * se && within(elapsed, 60),
        detail: format!(
            "mean regret {mean:.3} (se {se:.3}) <= {bound:.3}, E[G*_i,n] = ({:.2}, {:.2}), {elapsed:.2?}",
            gstar[0], gstar[1]
        ),
    }
}

fn adversarial_matrix(dir: &Path, n: usize) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut text = String::new();
    for t in 0..n {
        let phase = (t / 2500) % 2 == 0;
        let noise = |rng: &mut ChaCha8Rng| rng.random_range(-0.15..0.15);
        let a = if phase { 0.75 } else { 0.3 } + noise(&mut rng);
        let b = if phase { 0.3 } else { 0.7 } + noise(&mut rng);
        let c = 0.5 + noise(&mut rng);
        let _ = writeln!(text, "{:.4},{:.4},{:.4}", a, b, c);
    }
    let path = dir.join("adversarial.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn additive_vs_multiplicative(delayed: &FinalRegrets) -> Outcome {
    let undelayed = final_regrets(&ucb_setting(0));
    let diffs: Vec<f64> = delayed
        .finals
        .iter()
        .zip(&undelayed.finals)
        .map(|(a, b)| a - b)
        .collect();
    let r = diffs.len() as f64;
    let mean_diff = diffs.iter().sum::<f64>() / r;
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (r - 1.0);
    let se_diff = (var / r).sqrt();
    let additive = 0.2 * 20.0;
    let stochastic_ok = mean_diff <= additive + 3.0 * se_diff;

    let dir = tempfile::tempdir().unwrap();
    let n = 21_000usize;
    let k = 3.0f64;
    adversarial_matrix(dir.path(), n);
    let m = n as f64 / 21.0;
    let eta = (8.0 * k.ln() / m).sqrt();
    let c = config_in(
        &format!(
            r#"{{
            "environment": {{"kind": "matrix", "path": "adversarial.csv", "feedback": "full"}},
            "delay": {{"kind": "constant", "value": 20}},
            "learner": {{"meta": "bold", "base": "hedge", "eta": {eta}}},
            "horizon": {n}, "runs": 100, "seed": 607
        }}"#
        ),
        dir.path(),
    );
    let stats = monte_carlo_with(&c, jobs(), |_| Ok(())).unwrap();
    let f = |m: f64| (m * k.ln()).sqrt();
    let bound = bold_regret_bound(f, 20.0, n as f64).unwrap();
    let oracle = 21.0 * (m * k.ln()).sqrt();
    let realized = stats.final_regret();
    let se = stats.final_stderr();
    let adversarial_ok = (bound - oracle).abs() < 1e-9 && realized <= bound + 3.0 * se;
    Outcome {
        id: 6,
        title: "delay costs additively in stochastic and multiplicatively in adversarial runs",
        pass: stochastic_ok && adversarial_ok,
        detail: format!(
            "regret(20) - regret(0) = {mean_diff:.3} (se {se_diff:.3}) <= {additive}; \
             BOLD+Hedge realized {realized:.2} (se {se:.2}) <= {bound:.2}, pool {:.0}",
            stats.mean_pool_size.unwrap_or(f64::NAN)
        ),
    }
}

/// `d(p, q)` for Bernoulli laws, with `0 ln 0 = 0`.
fn kl_oracle(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Largest point of the `1e-6` grid above `mu` that is feasible, found
/// coarse to fine (the constraint is monotone in `q`).
fn grid_oracle(mu: f64, s: usize, t: f64) -> f64 {
    let threshold = {
        let l = t.ln();
        (l + 3.0 * l.max(1.0).ln()).max(0.0)
    };
    let feasible = |q: f64| q <= 1.0 && s as f64 * kl_oracle(mu, q) <= threshold;
    let mut j: u64 = 0;
    for step in [100_000u64, 10_000, 1000, 100, 10, 1] {
        while feasible(mu + (j + step) as f64 * 1e-6) {
            j += step;
        }
    }
    mu + j as f64 * 1e-6
}

fn kl_ucb_certificate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let tol = 1e-9;
    let mut worst: f64 = 0.0;
    let mut certificate_failures = 0;
    for case in 0..1000 {
        let mu = match case % 50 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        };
        let s = rng.random_range(1..=2000usize);
        let t = rng.random_range(1..=1_000_000usize) as f64;
        let q = kl_ucb_index(mu, s, t, tol).unwrap();
        worst = worst.max((q - grid_oracle(mu, s, t)).abs());
        let threshold = kl_threshold(t);
        let inside = s as f64 * kl_oracle(mu, q) <= threshold + 1e-12;
        let tight = q == 1.0 || q + tol > 1.0 || s as f64 * kl_oracle(mu, q + tol) > threshold;
        if !(inside && tight && q >= mu && q <= 1.0) {
            certificate_failures += 1;
        }
    }
    Outcome {
        id: 7,
        title: "KL-UCB bisection matches the grid oracle and its certificate",
        pass: worst <= 1e-5 && certificate_failures == 0,
        detail: format!("1000 triples, max |bisection - grid| = {worst:.2e}, {certificate_failures} certificate failures"),
    }
}

fn reordering(ledger: &mut QpmdLedger) -> Outcome {
    let c = bernoulli(
        "[0.7, 0.4]",
        r#"{"kind": "geometric", "mean": 5}"#,
        r#"{"meta": "qpmd", "base": "exp3", "gamma": 0.3}"#,
        20_000,
        50,
        808,
    );
    let mut traces: Vec<RunTrace> = Vec::new();
    monte_carlo_with(&c, jobs(), |out| {
        ledger.check(&c, out);
        traces.push(out.trace.clone());
        Ok(())
    })
    .unwrap();
    let report = reorder_distribution_check(&traces, c.environment.means().unwrap()).unwrap();
    let enough = report.arms.iter().all(|a| a.samples >= 100_000);
    let pass = enough && report.arms.iter().all(|a| a.verdict == Verdict::Pass);
    let detail = report
        .arms
        .iter()
        .map(|a| {
            format!(
                "arm {}: N={} mean {:.4} vs {} (+-{:.4}), r1 {:.4} (+-{:.4})",
                a.arm, a.samples, a.mean, a.expected_mean, a.mean_tolerance, a.autocorrelation, a.autocorrelation_tolerance
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        id: 8,
        title: "observed feedback per arm stays i.i.d. with the arm's law",
        pass,
        detail,
    }
}

fn zero_delay_equivalence(ledger: &mut QpmdLedger) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    adversarial_matrix(dir.path(), 1500);
    let mut configs = Vec::new();
    for learner in [
        r#"{"meta": "none", "base": "ucb1"}"#,
        r#"{"meta": "none", "base": "kl-ucb"}"#,
        r#"{"meta": "bold", "base": "ucb1"}"#,
        r#"{"meta": "bold", "base": "kl-ucb"}"#,
        r#"{"meta": "bold", "base": "exp3"}"#,
        r#"{"meta": "qpmd", "base": "ucb1"}"#,
        r#"{"meta": "qpmd", "base": "kl-ucb"}"#,
        r#"{"meta": "qpmd", "base": "exp3"}"#,
    ] {
        configs.push(bernoulli(
            "[0.6, 0.55, 0.3, 0.5]",
            r#"{"kind": "constant", "value": 0}"#,
            learner,
            1500,
            5,
            909,
        ));
    }
    for meta in ["bold", "qpmd"] {
        configs.push(config_in(
            &format!(
                r#"{{
                "environment": {{"kind": "matrix", "path": "adversarial.csv", "feedback": "full"}},
                "delay": {{"kind": "constant", "value": 0}},
                "learner": {{"meta": "{meta}", "base": "hedge", "eta": 0.1}},
                "horizon": 1500, "runs": 5, "seed": 910
            }}"#
            ),
            dir.path(),
        ));
    }
    let mut failures = Vec::new();
    for c in &configs {
        for run in 0..c.runs {
            if let Some(v) = check_zero_delay(c, run).unwrap() {
                failures.push(format!("{}: {v}", c.learner.label()));
            }
            ledger.check(c, &run_single(c, run).unwrap());
        }
    }
    Outcome {
        id: 9,
        title: "zero delay reproduces the non-delayed learner step for step",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} learners x 5 runs identical", configs.len())
        } else {
            failures.join("; ")
        },
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut mismatches = 0;
    let mut total_steps = 0;
    let mut nonzero = 0;
    for case in 0..1000u64 {
        let n = rng.random_range(1..=50usize);
        let delays = match case % 5 {
            0 => DelayModel::Geometric { mean: rng.random_range(0.5..20.0) },
            1 => DelayModel::Uniform { lo: 0, hi: rng.random_range(0..60) },
            2 => DelayModel::Constant { value: rng.random_range(0..10) },
            3 => DelayModel::Empirical {
                values: (0..5).map(|_| rng.random_range(0..30)).collect(),
            },
            _ => DelayModel::PerAction {
                models: [
                    (0, DelayModel::Constant { value: rng.random_range(0..8) }),
                    (1, DelayModel::Geometric { mean: 4.0 }),
                ]
                .into_iter()
                .collect(),
            },
        };
        let mut env = BernoulliBandit::new(vec![0.6, 0.4]).unwrap();
        let mut learner = DelayedUcb::new(2, IndexKind::Ucb1);
        let trace = run_episode(&mut env, &mut learner, &delays, n, Streams::derive(1010, case)).unwrap();
        for t in 1..=n {
            total_steps += 1;
            let g = outstanding_oracle(&trace.delays, t);
            nonzero += usize::from(g > 0);
            if trace.outstanding[t - 1] != g {
                mismatches += 1;
            }
        }
    }
    Outcome {
        id: 10,
        title: "engine outstanding count equals the brute-force definition",
        pass: mismatches == 0 && nonzero > 0,
        detail: format!("1000 sequences, {total_steps} steps ({nonzero} with G_t > 0), {mismatches} mismatches"),
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("repro.json");
    std::fs::write(
        &config_path,
        r#"{
        "environment": {"kind": "bernoulli", "means": [0.7, 0.5, 0.45]},
        "delay": {"kind": "geometric", "mean": 5},
        "learner": {"meta": "bold", "base": "exp3"},
        "horizon": 2000, "runs": 24, "seed": 1111,
        "output": {"diagnostics": true},
        "bounds": ["outstanding", "bold", "bold-iid"]
    }"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    let mut statuses = Vec::new();
    for (i, jobs) in ["1", "1", "3", "8"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_delaylab"))
            .args(["run", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .env("DELAYLAB_LOG", "quiet")
            .status()
            .unwrap();
        statuses.push(status.success());
        outputs.push(
            ["trace.csv", "aggregate.csv", "summary.json"]
                .map(|f| std::fs::read(out.join(f)).unwrap_or_default()),
        );
    }
    let identical = outputs.iter().all(|o| o == &outputs[0]);
    let nonempty = outputs[0].iter().all(|f| !f.is_empty());
    Outcome {
        id: 11,
        title: "run output is byte-identical across repeats and worker counts",
        pass: statuses.iter().all(|&s| s) && identical && nonempty,
        detail: format!("4 invocations (jobs 1, 1, 3, 8), identical = {identical}"),
    }
}

fn main() -> ExitCode {
    let mut ledger = QpmdLedger::default();
    let mut outcomes = vec![pool_law(), constant_delay_cycle(), outstanding_lemma()];

    let start = Instant::now();
    let delayed = final_regrets(&ucb_setting(20));
    let ucb_elapsed = start.elapsed();
    let ucb_bound = delayed_ucb1_bound(&delayed, ucb_elapsed);
    let contrast = additive_vs_multiplicative(&delayed);
    let certificate = kl_ucb_certificate();
    let reorder = reordering(&mut ledger);
    let zero = zero_delay_equivalence(&mut ledger);
    qpmd_lemma(&mut ledger);
    outcomes.push(Outcome {
        id: 4,
        title: "QPM-D base lags the real play counts by at most the peak outstanding count",
        pass: ledger.violations.is_empty() && ledger.runs > 0,
        detail: if ledger.violations.is_empty() {
            format!("{} QPM-D runs checked", ledger.runs)
        } else {
            format!("{} of {} runs violate: {}", ledger.violations.len(), ledger.runs, ledger.violations[0])
        },
    });
    outcomes.extend([ucb_bound, contrast, certificate, reorder, zero, oracle_equivalence(), reproducibility()]);
    outcomes.sort_by_key(|o| o.id);

    for o in &outcomes {
        println!(
            "{} [{:>2}] {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
