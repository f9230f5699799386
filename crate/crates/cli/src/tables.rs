//! Bound tables computed without simulating.
//!
//! Expected peak outstanding counts are replaced by an upper estimate: the
//! largest possible delay when delays are bounded, the i.i.d. budget
//! `B(t, E[tau]) + 1` otherwise. Every arm gets the same value since
//! `G_{i,t} <= G_t`.

use std::fmt::Write as _;

use delaylab::labkit::bounds::outstanding_bound;
use delaylab::labkit::BoundKind;
use delaylab::{Error, ExperimentConfig};

/// Upper estimate of `E[G*_t]`.
pub fn g_star_surrogate(config: &ExperimentConfig, t: usize) -> Result<f64, Error> {
    if let Some(max) = config.delay.max_delay() {
        return Ok((max as f64).min(t.saturating_sub(1) as f64));
    }
    let mean = config.delay.mean().ok_or_else(|| {
        Error::InvalidParameter("unbounded delays without a single mean".into())
    })?;
    Ok(outstanding_bound(t as f64, mean))
}

pub fn requested_kinds(config: &ExperimentConfig) -> Vec<BoundKind> {
    if !config.bounds.is_empty() {
        return config.bounds.clone();
    }
    BoundKind::NAMES
        .iter()
        .filter_map(|name| BoundKind::parse(name))
        .filter(|kind| kind.check_applicable(config).is_ok())
        .collect()
}

fn table_steps(n: usize, rows: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (1..=rows).map(|j| (j * n).div_ceil(rows)).collect();
    steps.dedup();
    steps
}

pub fn bound_table(config: &ExperimentConfig, rows: usize) -> Result<String, Error> {
    let kinds = requested_kinds(config);
    let k = config.environment.num_actions();
    let mut out = format!("# {} on {k} actions\n", config.learner.label());
    let _ = write!(out, "{:>10} {:>12}", "t", "gstar");
    for kind in &kinds {
        let _ = write!(out, " {:>14}", kind.name());
    }
    out.push('\n');
    for t in table_steps(config.horizon, rows) {
        let g = g_star_surrogate(config, t)?;
        let _ = write!(out, "{t:>10} {g:>12.4}");
        for kind in &kinds {
            let value = kind.evaluate(config, t as f64, g, &vec![g; k])?;
            let _ = write!(out, " {value:>14.4}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use delaylab::labkit::bounds::ucb1_regret_bound;
    use std::path::Path;

    fn config(delay: &str, bounds: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(
            &format!(
                r#"{{
                "environment": {{"kind": "bernoulli", "means": [0.7, 0.5]}},
                "delay": {delay},
                "learner": {{"meta": "none", "base": "ucb1"}},
                "horizon": 1000, "runs": 1, "seed": 1, "bounds": {bounds}
            }}"#
            ),
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn steps_end_at_horizon() {
        assert_eq!(table_steps(1000, 4), vec![250, 500, 750, 1000]);
        assert_eq!(table_steps(3, 10), vec![1, 2, 3]);
    }

    #[test]
    fn surrogate_uses_max_delay_or_budget() {
        let c = config(r#"{"kind": "constant", "value": 20}"#, "[]");
        assert_eq!(g_star_surrogate(&c, 5).unwrap(), 4.0);
        assert_eq!(g_star_surrogate(&c, 500).unwrap(), 20.0);
        let c = config(r#"{"kind": "geometric", "mean": 5}"#, "[]");
        assert_eq!(g_star_surrogate(&c, 100).unwrap(), outstanding_bound(100.0, 5.0));
    }

    #[test]
    fn default_table_lists_applicable_bounds() {
        let c = config(r#"{"kind": "constant", "value": 20}"#, "[]");
        let table = bound_table(&c, 2).unwrap();
        let header = table.lines().nth(1).unwrap();
        assert!(header.contains("outstanding") && header.contains("delayed-ucb1"));
        assert!(!header.contains("bold"));
        let last: Vec<f64> = table
            .lines()
            .last()
            .unwrap()
            .split_whitespace()
            .map(|x| x.parse().unwrap())
            .collect();
        let expected = ucb1_regret_bound(1000.0, &[0.0, 0.2], &[20.0, 20.0]).unwrap();
        assert!((last[3] - expected).abs() < 1e-3);
    }
}
