//! Fixtures shared by the benchmarks.

use std::path::Path;

use delaylab::ExperimentConfig;

/// A single-run Bernoulli experiment with geometric delays.
pub fn geometric_config(meta: &str, base: &str, mean_delay: f64, horizon: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
        "environment": {{"kind": "bernoulli", "means": [0.7, 0.6, 0.5, 0.4, 0.3]}},
        "delay": {{"kind": "geometric", "mean": {mean_delay}}},
        "learner": {{"meta": "{meta}", "base": "{base}"}},
        "horizon": {horizon}, "runs": 1, "seed": 2024
    }}"#
    );
    ExperimentConfig::from_json_str(&text, Path::new(".")).expect("fixture config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        for (meta, base) in [("bold", "exp3"), ("qpmd", "ucb1"), ("none", "kl-ucb")] {
            let c = geometric_config(meta, base, 10.0, 100);
            assert_eq!(c.horizon, 100);
        }
    }
}
