//! Experiment configuration: a single JSON document, validated up front.
//!
//! ```json
//! {
//!   "environment": {"kind": "bernoulli", "means": [0.7, 0.5]},
//!   "delay": {"kind": "constant", "value": 5},
//!   "learner": {"meta": "none", "base": "ucb1"},
//!   "horizon": 1000,
//!   "runs": 10,
//!   "seed": 1
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::base::{BaseSpec, DEFAULT_KL_TOLERANCE};
use crate::environments::{
    BernoulliBandit, DelayModel, Environment, FeedbackKind, MatrixEnvironment, RewardMatrix,
};
use crate::labkit::bounds::{BoundKind, KlUcbConstants};
use crate::protocol::FaultInjection;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// The config file (or a file it references) cannot be read.
    Io { path: PathBuf, message: String },
    /// A key is missing, has the wrong type or an invalid value.
    Schema { key: String, message: String },
    /// Keys are individually valid but cannot be combined.
    Incompatible(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => {
                write!(f, "cannot read {}: {message}", path.display())
            }
            ConfigError::Schema { key, message } => write!(f, "config key `{key}`: {message}"),
            ConfigError::Incompatible(message) => write!(f, "incompatible config: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type Parsed<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentSpec {
    Bernoulli {
        means: Vec<f64>,
    },
    Matrix {
        path: PathBuf,
        matrix: RewardMatrix,
        feedback: FeedbackKind,
    },
}

impl EnvironmentSpec {
    pub fn num_actions(&self) -> usize {
        match self {
            EnvironmentSpec::Bernoulli { means } => means.len(),
            EnvironmentSpec::Matrix { matrix, .. } => matrix.num_actions(),
        }
    }

    pub fn feedback_kind(&self) -> FeedbackKind {
        match self {
            EnvironmentSpec::Bernoulli { .. } => FeedbackKind::Bandit,
            EnvironmentSpec::Matrix { feedback, .. } => *feedback,
        }
    }

    pub fn means(&self) -> Option<&[f64]> {
        match self {
            EnvironmentSpec::Bernoulli { means } => Some(means),
            EnvironmentSpec::Matrix { .. } => None,
        }
    }

    pub fn build(&self) -> Box<dyn Environment + Send> {
        match self {
            EnvironmentSpec::Bernoulli { means } => {
                Box::new(BernoulliBandit::new(means.clone()).expect("validated means"))
            }
            EnvironmentSpec::Matrix {
                matrix, feedback, ..
            } => Box::new(MatrixEnvironment::new(matrix.clone(), *feedback)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    /// White-box delayed index policy (base must be ucb1 or kl-ucb).
    None,
    Bold,
    Qpmd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub meta: MetaKind,
    pub base: BaseSpec,
    /// Keep stepping QPM-D after the horizon until its base learner has been
    /// queried `horizon` times, and report the base's action counts then.
    pub extended_run: bool,
}

impl LearnerSpec {
    pub fn label(&self) -> String {
        match self.meta {
            MetaKind::None => format!("delayed-{}", self.base.name()),
            MetaKind::Bold => format!("bold+{}", self.base.name()),
            MetaKind::Qpmd => format!("qpmd+{}", self.base.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub delay: DelayModel,
    pub learner: LearnerSpec,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Adds instance / pool / queue columns to the trace CSV.
    pub trace_diagnostics: bool,
    pub bounds: Vec<BoundKind>,
    pub klucb_constants: KlUcbConstants,
    pub faults: FaultInjection,
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Parsed<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base_dir)
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Parsed<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Schema {
            key: "<root>".into(),
            message: format!("not valid JSON: {e}"),
        })?;
        let root = Obj::root(&value)?;
        root.only(&[
            "environment",
            "delay",
            "learner",
            "horizon",
            "runs",
            "seed",
            "output",
            "bounds",
            "klucb_bound",
            "fault_injection",
        ])?;

        let horizon = root.req_count("horizon")?;
        let runs = root.req_count("runs")?;
        let seed = root.req_u64("seed")?;
        let environment = parse_environment(&root.req_obj("environment")?, base_dir)?;
        let delay = parse_delay(&root.req_obj("delay")?, environment.num_actions())?;
        let learner = parse_learner(&root.req_obj("learner")?, &environment, horizon)?;

        let (output_dir, trace_diagnostics) = match root.opt_obj("output")? {
            Some(out) => {
                out.only(&["dir", "diagnostics"])?;
                (
                    out.opt_str("dir")?.map(|d| base_dir.join(d)),
                    out.opt_bool("diagnostics")?.unwrap_or(false),
                )
            }
            None => (None, false),
        };

        let bounds = match root.get("bounds") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let key = format!("bounds[{i}]");
                    let name = item.as_str().ok_or_else(|| schema(&key, "expected a string"))?;
                    BoundKind::parse(name).ok_or_else(|| {
                        schema(
                            &key,
                            &format!(
                                "unknown bound {name:?}; expected one of {}",
                                BoundKind::NAMES.join(", ")
                            ),
                        )
                    })
                })
                .collect::<Parsed<Vec<_>>>()?,
            Some(_) => return Err(schema("bounds", "expected an array of bound names")),
        };

        let mut klucb_constants = KlUcbConstants::default();
        if let Some(kl) = root.opt_obj("klucb_bound")? {
            kl.only(&["epsilon", "c1", "c2", "beta"])?;
            if let Some(v) = kl.opt_f64("epsilon")? {
                if v < 0.0 {
                    return Err(schema(&kl.key("epsilon"), "must be nonnegative"));
                }
                klucb_constants.epsilon = v;
            }
            for (name, slot) in [
                ("c1", &mut klucb_constants.c1),
                ("c2", &mut klucb_constants.c2),
                ("beta", &mut klucb_constants.beta),
            ] {
                if let Some(v) = kl.opt_f64(name)? {
                    if v < 0.0 {
                        return Err(schema(&kl.key(name), "must be nonnegative"));
                    }
                    *slot = v;
                }
            }
        }

        let mut faults = FaultInjection::default();
        if let Some(f) = root.opt_obj("fault_injection")? {
            f.only(&["drop_feedback_origin"])?;
            faults.drop_feedback_origin = f
                .opt_u64("drop_feedback_origin")?
                .map(|v| v as usize);
        }

        let config = ExperimentConfig {
            environment,
            delay,
            learner,
            horizon,
            runs,
            seed,
            output_dir,
            trace_diagnostics,
            bounds,
            klucb_constants,
            faults,
        };
        config.check_compatibility()?;
        Ok(config)
    }

    fn check_compatibility(&self) -> Parsed<()> {
        let env_kind = self.environment.feedback_kind();
        let base = &self.learner.base;
        if base.feedback_kind() != env_kind {
            return Err(ConfigError::Incompatible(format!(
                "{} needs {:?} feedback but the environment provides {:?} feedback",
                base.name(),
                base.feedback_kind(),
                env_kind
            )));
        }
        if self.learner.meta == MetaKind::None
            && !matches!(base, BaseSpec::Ucb1 | BaseSpec::KlUcb { .. })
        {
            return Err(ConfigError::Incompatible(format!(
                "meta `none` runs a delayed index policy; base {} needs meta bold or qpmd",
                base.name()
            )));
        }
        if let EnvironmentSpec::Matrix { matrix, path, .. } = &self.environment {
            if matrix.horizon() < self.horizon {
                return Err(ConfigError::Incompatible(format!(
                    "reward matrix {} has {} rows, horizon is {}",
                    path.display(),
                    matrix.horizon(),
                    self.horizon
                )));
            }
        }
        if self.learner.extended_run
            && (self.learner.meta != MetaKind::Qpmd || self.environment.means().is_none())
        {
            return Err(ConfigError::Incompatible(
                "extended_run needs meta qpmd in a bernoulli environment".into(),
            ));
        }
        for bound in &self.bounds {
            bound
                .check_applicable(self)
                .map_err(ConfigError::Incompatible)?;
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        runs: Option<usize>,
        out: Option<PathBuf>,
    ) -> Parsed<Self> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(runs) = runs {
            if runs == 0 {
                return Err(schema("runs", "must be at least 1"));
            }
            self.runs = runs;
        }
        if let Some(out) = out {
            self.output_dir = Some(out);
        }
        Ok(self)
    }
}

fn schema(key: &str, message: &str) -> ConfigError {
    ConfigError::Schema {
        key: key.to_string(),
        message: message.to_string(),
    }
}

/// A JSON object together with its key path, for error messages.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    fn root(value: &'a Value) -> Parsed<Self> {
        match value {
            Value::Object(map) => Ok(Obj {
                map,
                path: String::new(),
            }),
            _ => Err(schema("<root>", "expected a JSON object")),
        }
    }

    fn key(&self, name: &str) -> String {
        if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.path)
        }
    }

    fn get(&self, name: &str) -> Option<&'a Value> {
        self.map.get(name)
    }

    fn only(&self, allowed: &[&str]) -> Parsed<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(unknown) => Err(schema(&self.key(unknown), "unknown key")),
            None => Ok(()),
        }
    }

    fn req(&self, name: &str) -> Parsed<&'a Value> {
        self.get(name)
            .ok_or_else(|| schema(&self.key(name), "missing required key"))
    }

    fn opt_obj(&self, name: &str) -> Parsed<Option<Obj<'a>>> {
        match self.get(name) {
            None => Ok(None),
            Some(Value::Object(map)) => Ok(Some(Obj {
                map,
                path: self.key(name),
            })),
            Some(_) => Err(schema(&self.key(name), "expected an object")),
        }
    }

    fn req_obj(&self, name: &str) -> Parsed<Obj<'a>> {
        self.opt_obj(name)?
            .ok_or_else(|| schema(&self.key(name), "missing required key"))
    }

    fn req_str(&self, name: &str) -> Parsed<&'a str> {
        self.req(name)?
            .as_str()
            .ok_or_else(|| schema(&self.key(name), "expected a string"))
    }

    fn opt_str(&self, name: &str) -> Parsed<Option<&'a str>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| schema(&self.key(name), "expected a string")),
        }
    }

    fn opt_bool(&self, name: &str) -> Parsed<Option<bool>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| schema(&self.key(name), "expected true or false")),
        }
    }

    fn opt_f64(&self, name: &str) -> Parsed<Option<f64>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| schema(&self.key(name), "expected a number")),
        }
    }

    fn req_f64(&self, name: &str) -> Parsed<f64> {
        self.req(name)?;
        Ok(self.opt_f64(name)?.expect("present"))
    }

    fn opt_u64(&self, name: &str) -> Parsed<Option<u64>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| schema(&self.key(name), "expected a nonnegative integer")),
        }
    }

    fn req_u64(&self, name: &str) -> Parsed<u64> {
        self.req(name)?;
        Ok(self.opt_u64(name)?.expect("present"))
    }

    /// A positive integer.
    fn req_count(&self, name: &str) -> Parsed<usize> {
        let v = self.req_u64(name)?;
        if v == 0 {
            return Err(schema(&self.key(name), "must be at least 1"));
        }
        Ok(v as usize)
    }

    fn req_f64_list(&self, name: &str) -> Parsed<Vec<f64>> {
        let key = self.key(name);
        let items = self
            .req(name)?
            .as_array()
            .ok_or_else(|| schema(&key, "expected an array of numbers"))?;
        items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .ok_or_else(|| schema(&format!("{key}[{i}]"), "expected a number"))
            })
            .collect()
    }

    fn req_u64_list(&self, name: &str) -> Parsed<Vec<u64>> {
        let key = self.key(name);
        let items = self
            .req(name)?
            .as_array()
            .ok_or_else(|| schema(&key, "expected an array of integers"))?;
        items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_u64().ok_or_else(|| {
                    schema(&format!("{key}[{i}]"), "expected a nonnegative integer")
                })
            })
            .collect()
    }
}

fn parse_environment(env: &Obj<'_>, base_dir: &Path) -> Parsed<EnvironmentSpec> {
    match env.req_str("kind")? {
        "bernoulli" => {
            env.only(&["kind", "means"])?;
            let means = env.req_f64_list("means")?;
            if means.is_empty() {
                return Err(schema(&env.key("means"), "needs at least one arm"));
            }
            if let Some(i) = means.iter().position(|m| !(0.0..=1.0).contains(m)) {
                return Err(schema(
                    &format!("{}[{i}]", env.key("means")),
                    "must lie in [0, 1]",
                ));
            }
            Ok(EnvironmentSpec::Bernoulli { means })
        }
        "matrix" => {
            env.only(&["kind", "path", "feedback"])?;
            let path = base_dir.join(env.req_str("path")?);
            let feedback = match env.opt_str("feedback")?.unwrap_or("bandit") {
                "bandit" => FeedbackKind::Bandit,
                "full" => FeedbackKind::Full,
                _ => return Err(schema(&env.key("feedback"), "expected \"bandit\" or \"full\"")),
            };
            let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let matrix = RewardMatrix::from_csv_str(&text)
                .map_err(|e| schema(&env.key("path"), &e.to_string()))?;
            Ok(EnvironmentSpec::Matrix {
                path,
                matrix,
                feedback,
            })
        }
        other => Err(schema(
            &env.key("kind"),
            &format!("unknown environment {other:?}; expected \"bernoulli\" or \"matrix\""),
        )),
    }
}

fn parse_delay(delay: &Obj<'_>, num_actions: usize) -> Parsed<DelayModel> {
    let model = match delay.req_str("kind")? {
        "constant" => {
            delay.only(&["kind", "value"])?;
            DelayModel::Constant {
                value: delay.req_u64("value")?,
            }
        }
        "geometric" => {
            delay.only(&["kind", "mean"])?;
            let mean = delay.req_f64("mean")?;
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(schema(&delay.key("mean"), "must be positive"));
            }
            DelayModel::Geometric { mean }
        }
        "uniform" => {
            delay.only(&["kind", "lo", "hi"])?;
            let lo = delay.req_u64("lo")?;
            let hi = delay.req_u64("hi")?;
            if lo > hi {
                return Err(schema(&delay.key("hi"), "must be at least lo"));
            }
            DelayModel::Uniform { lo, hi }
        }
        "empirical" => {
            delay.only(&["kind", "values"])?;
            let values = delay.req_u64_list("values")?;
            if values.is_empty() {
                return Err(schema(&delay.key("values"), "must not be empty"));
            }
            DelayModel::Empirical { values }
        }
        "per_action" => {
            delay.only(&["kind", "models"])?;
            let models_obj = delay.req_obj("models")?;
            let mut models = BTreeMap::new();
            for name in models_obj.map.keys() {
                let action: usize = name
                    .parse()
                    .map_err(|_| schema(&models_obj.key(name), "keys must be action indices"))?;
                if action >= num_actions {
                    return Err(schema(&models_obj.key(name), "no such action"));
                }
                let sub = models_obj.req_obj(name)?;
                if sub.req_str("kind")? == "per_action" {
                    return Err(schema(&sub.key("kind"), "per_action models cannot nest"));
                }
                models.insert(action, parse_delay(&sub, num_actions)?);
            }
            if let Some(missing) = (0..num_actions).find(|a| !models.contains_key(a)) {
                return Err(schema(
                    &models_obj.key(&missing.to_string()),
                    "missing delay model for this action",
                ));
            }
            DelayModel::PerAction { models }
        }
        other => {
            return Err(schema(
                &delay.key("kind"),
                &format!(
                    "unknown delay kind {other:?}; expected constant, geometric, uniform, empirical or per_action"
                ),
            ))
        }
    };
    Ok(model)
}

fn parse_learner(learner: &Obj<'_>, env: &EnvironmentSpec, horizon: usize) -> Parsed<LearnerSpec> {
    learner.only(&["meta", "base", "gamma", "eta", "kl_tolerance", "extended_run"])?;
    let meta = match learner.req_str("meta")? {
        "none" => MetaKind::None,
        "bold" => MetaKind::Bold,
        "qpmd" => MetaKind::Qpmd,
        other => {
            return Err(schema(
                &learner.key("meta"),
                &format!("unknown meta learner {other:?}; expected none, bold or qpmd"),
            ))
        }
    };
    let k = env.num_actions() as f64;
    let n = horizon as f64;
    let base = match learner.req_str("base")? {
        "ucb1" => BaseSpec::Ucb1,
        "kl-ucb" => {
            let tolerance = learner.opt_f64("kl_tolerance")?.unwrap_or(DEFAULT_KL_TOLERANCE);
            if tolerance.is_nan() || tolerance <= 0.0 {
                return Err(schema(&learner.key("kl_tolerance"), "must be positive"));
            }
            BaseSpec::KlUcb { tolerance }
        }
        "exp3" => {
            // tuned for a known horizon when not given
            let default = (k * k.ln().max(1e-12) / ((std::f64::consts::E - 1.0) * n))
                .sqrt()
                .min(1.0);
            let gamma = learner.opt_f64("gamma")?.unwrap_or(default);
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(schema(&learner.key("gamma"), "must lie in (0, 1]"));
            }
            BaseSpec::Exp3 { gamma }
        }
        "hedge" => {
            let default = (8.0 * k.ln().max(1e-12) / n).sqrt();
            let eta = learner.opt_f64("eta")?.unwrap_or(default);
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(schema(&learner.key("eta"), "must be positive"));
            }
            BaseSpec::Hedge { eta }
        }
        other => {
            return Err(schema(
                &learner.key("base"),
                &format!("unknown base learner {other:?}; expected ucb1, kl-ucb, exp3 or hedge"),
            ))
        }
    };
    Ok(LearnerSpec {
        meta,
        base,
        extended_run: learner.opt_bool("extended_run")?.unwrap_or(false),
    })
}
