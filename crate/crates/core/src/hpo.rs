//! Deterministic hyperparameter search over the OSR search spaces:
//! exhaustive grid enumeration and seeded uniform random search, maximizing
//! a validation objective with a stable lexicographic tie rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OpenSetView, Split};
use crate::error::{OsrError, Result};
use crate::eval::split_accuracy;
use crate::openmax::{calibrate_openmax, DistanceKind, Method, MethodSpec, OpenMaxParams};

/// One parameter's domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

/// A sampled or enumerated parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
}

impl ParamValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ParamValue::Int(v) => v as f64,
            ParamValue::Float(v) => v,
        }
    }

    pub fn as_int(self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(v),
            ParamValue::Float(_) => None,
        }
    }

    fn total_cmp(&self, other: &ParamValue) -> std::cmp::Ordering {
        match (self, other) {
            (ParamValue::Int(a), ParamValue::Int(b)) => a.cmp(b),
            _ => self.as_f64().total_cmp(&other.as_f64()),
        }
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
        }
    }
}

/// The tunable parameters of one OSR method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub method: Method,
    pub parameters: Vec<ParamSpec>,
}

impl SearchSpace {
    /// Structural checks: unique names, ordered bounds, and the exact
    /// parameter set the method defines.
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.parameters.len() {
            return Err(OsrError::InvalidConfig(
                "duplicate parameter names in search space".into(),
            ));
        }
        for p in &self.parameters {
            let ordered = match p.kind {
                ParamKind::Continuous { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
                ParamKind::Integer { lo, hi } => lo <= hi,
            };
            if !ordered {
                return Err(OsrError::InvalidConfig(format!(
                    "parameter {:?} has lo > hi or non-finite bounds",
                    p.name
                )));
            }
        }
        let expected: &[&str] = match self.method {
            Method::SoftmaxThreshold => &["softmax_threshold"],
            Method::OpenMax => &["weibull_tail", "weibull_alpha", "weibull_threshold"],
            Method::Softmax => &[],
        };
        let got: Vec<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        if got != expected {
            return Err(OsrError::InvalidConfig(format!(
                "search space for {} must have parameters {expected:?}, got {got:?}",
                self.method
            )));
        }
        Ok(())
    }

    /// Replace one parameter's bounds, keeping its kind.
    pub fn set_bounds(&mut self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let param = self
            .parameters
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| {
                OsrError::InvalidConfig(format!("no parameter {name:?} in search space"))
            })?;
        param.kind = match param.kind {
            ParamKind::Continuous { .. } => ParamKind::Continuous { lo, hi },
            ParamKind::Integer { .. } => ParamKind::Integer {
                lo: lo.round() as i64,
                hi: hi.round() as i64,
            },
        };
        self.validate()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// True when every value lies inside its parameter's bounds.
    pub fn contains(&self, values: &[ParamValue]) -> bool {
        values.len() == self.parameters.len()
            && self
                .parameters
                .iter()
                .zip(values)
                .all(|(p, v)| match p.kind {
                    ParamKind::Continuous { lo, hi } => {
                        let x = v.as_f64();
                        x >= lo && x <= hi
                    }
                    ParamKind::Integer { lo, hi } => {
                        matches!(v, ParamValue::Int(x) if *x >= lo && *x <= hi)
                    }
                })
    }
}

/// The paper's search ranges: threshold 0.50-0.95 for softmax thresholding;
/// tail 20-400, alpha 1-3, rejection threshold 0.60-0.99 for OpenMax.
pub fn default_space(method: Method) -> Result<SearchSpace> {
    let parameters = match method {
        Method::SoftmaxThreshold => vec![ParamSpec {
            name: "softmax_threshold".into(),
            kind: ParamKind::Continuous { lo: 0.50, hi: 0.95 },
        }],
        Method::OpenMax => vec![
            ParamSpec {
                name: "weibull_tail".into(),
                kind: ParamKind::Integer { lo: 20, hi: 400 },
            },
            ParamSpec {
                name: "weibull_alpha".into(),
                kind: ParamKind::Integer { lo: 1, hi: 3 },
            },
            ParamSpec {
                name: "weibull_threshold".into(),
                kind: ParamKind::Continuous { lo: 0.60, hi: 0.99 },
            },
        ],
        Method::Softmax => {
            return Err(OsrError::InvalidConfig(
                "softmax has no hyperparameters to tune".into(),
            ))
        }
    };
    Ok(SearchSpace { method, parameters })
}

/// What one objective evaluation produced: a score, or a recoverable
/// per-trial failure (scored as negative infinity, never aborting).
#[derive(Debug, Clone)]
pub enum TrialEval {
    Score(f64),
    Failed(String),
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub seed: u64,
    /// Values in the space's parameter order.
    pub params: Vec<(String, ParamValue)>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

impl TrialRecord {
    /// JSON-lines form: `{"trial", "params", "objective", "status"}`.
    pub fn to_json_line(&self) -> serde_json::Value {
        let params: serde_json::Map<String, serde_json::Value> = self
            .params
            .iter()
            .map(|(name, value)| (name.clone(), serde_json::to_value(value).unwrap()))
            .collect();
        serde_json::json!({
            "trial": self.trial_index,
            "params": params,
            "objective": self.objective,
            "status": if self.objective.is_some() { "ok" } else { "failed" },
        })
    }
}

/// Render a full trial log as JSON-lines text.
pub fn trial_log_to_string(log: &[TrialRecord]) -> String {
    let mut out = String::new();
    for record in log {
        out.push_str(&record.to_json_line().to_string());
        out.push('\n');
    }
    out
}

/// The winning configuration of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub seed: u64,
    pub params: Vec<(String, ParamValue)>,
    pub objective: f64,
}

/// Best trial plus the complete ordered log.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub log: Vec<TrialRecord>,
}

fn param_tuple_less(a: &[(String, ParamValue)], b: &[(String, ParamValue)]) -> bool {
    for ((_, va), (_, vb)) in a.iter().zip(b) {
        match va.total_cmp(vb) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Argmax over the log with ties broken by the lexicographically smallest
/// parameter tuple; independent of evaluation order.
fn best_of_log(log: &[TrialRecord]) -> Result<TrialResult> {
    let mut best: Option<&TrialRecord> = None;
    for record in log {
        let Some(objective) = record.objective else {
            continue;
        };
        let better = match best {
            None => true,
            Some(current) => {
                let cur_obj = current.objective.unwrap();
                objective > cur_obj
                    || (objective == cur_obj && param_tuple_less(&record.params, &current.params))
            }
        };
        if better {
            best = Some(record);
        }
    }
    let best = best.ok_or(OsrError::SearchExhausted { trials: log.len() })?;
    Ok(TrialResult {
        trial_index: best.trial_index,
        seed: best.seed,
        params: best.params.clone(),
        objective: best.objective.unwrap(),
    })
}

fn grid_values(kind: ParamKind, resolution: usize) -> Vec<ParamValue> {
    match kind {
        ParamKind::Integer { lo, hi } => {
            let span = (hi - lo + 1) as usize;
            if span <= resolution {
                (lo..=hi).map(ParamValue::Int).collect()
            } else {
                let mut values = Vec::with_capacity(resolution);
                for i in 0..resolution {
                    let t = i as f64 / (resolution - 1) as f64;
                    let v = lo + ((hi - lo) as f64 * t).round() as i64;
                    if values.last() != Some(&ParamValue::Int(v)) {
                        values.push(ParamValue::Int(v));
                    }
                }
                values
            }
        }
        ParamKind::Continuous { lo, hi } => {
            if resolution == 1 || lo == hi {
                vec![ParamValue::Float(lo)]
            } else {
                (0..resolution)
                    .map(|i| {
                        let t = i as f64 / (resolution - 1) as f64;
                        ParamValue::Float(lo + (hi - lo) * t)
                    })
                    .collect()
            }
        }
    }
}

fn run_objective<F>(
    objective: &mut F,
    space: &SearchSpace,
    trial_index: usize,
    seed: u64,
    values: Vec<ParamValue>,
) -> Result<TrialRecord>
where
    F: FnMut(&[ParamValue]) -> Result<TrialEval>,
{
    debug_assert!(space.contains(&values));
    let named: Vec<(String, ParamValue)> = space
        .parameters
        .iter()
        .map(|p| p.name.clone())
        .zip(values.iter().copied())
        .collect();
    match objective(&values) {
        Ok(TrialEval::Score(objective)) => Ok(TrialRecord {
            trial_index,
            seed,
            params: named,
            objective: Some(objective),
            error: None,
        }),
        Ok(TrialEval::Failed(message)) => Ok(TrialRecord {
            trial_index,
            seed,
            params: named,
            objective: None,
            error: Some(message),
        }),
        Err(e) => Err(OsrError::ObjectiveFailed {
            params: named
                .iter()
                .map(|(n, v)| format!("{n}={v}"))
                .collect::<Vec<_>>()
                .join(", "),
            source: Box::new(e),
        }),
    }
}

/// Evaluate the full Cartesian grid, `resolution` points per parameter
/// (integer spans narrower than the resolution are enumerated exactly).
/// The last parameter varies fastest; the trial log is complete and ordered.
pub fn grid_search<F>(
    space: &SearchSpace,
    mut objective: F,
    resolution: usize,
) -> Result<SearchOutcome>
where
    F: FnMut(&[ParamValue]) -> Result<TrialEval>,
{
    space.validate()?;
    if resolution < 1 {
        return Err(OsrError::InvalidConfig(
            "grid resolution must be at least 1".into(),
        ));
    }
    let axes: Vec<Vec<ParamValue>> = space
        .parameters
        .iter()
        .map(|p| grid_values(p.kind, resolution))
        .collect();

    let mut log = Vec::new();
    let mut cursor = vec![0usize; axes.len()];
    let mut trial_index = 0usize;
    'grid: loop {
        let values: Vec<ParamValue> = cursor.iter().zip(&axes).map(|(&i, axis)| axis[i]).collect();
        log.push(run_objective(
            &mut objective,
            space,
            trial_index,
            0,
            values,
        )?);
        trial_index += 1;
        // odometer increment, last axis fastest
        for k in (0..axes.len()).rev() {
            cursor[k] += 1;
            if cursor[k] < axes[k].len() {
                continue 'grid;
            }
            cursor[k] = 0;
        }
        break;
    }
    let best = best_of_log(&log)?;
    Ok(SearchOutcome { best, log })
}

/// Uniformly sample `n_trials` configurations. Trial `t` draws from a
/// ChaCha stream keyed by `(seed, t)`, so the log is a pure function of
/// the seed and is byte-identical across runs.
pub fn random_search<F>(
    space: &SearchSpace,
    mut objective: F,
    n_trials: usize,
    seed: u64,
) -> Result<SearchOutcome>
where
    F: FnMut(&[ParamValue]) -> Result<TrialEval>,
{
    space.validate()?;
    if n_trials < 1 {
        return Err(OsrError::InvalidConfig(
            "random search needs at least 1 trial".into(),
        ));
    }
    let mut log = Vec::with_capacity(n_trials);
    for trial_index in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial_index as u64);
        let values: Vec<ParamValue> = space
            .parameters
            .iter()
            .map(|p| match p.kind {
                ParamKind::Continuous { lo, hi } => ParamValue::Float(if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }),
                ParamKind::Integer { lo, hi } => ParamValue::Int(rng.random_range(lo..=hi)),
            })
            .collect();
        log.push(run_objective(
            &mut objective,
            space,
            trial_index,
            seed,
            values,
        )?);
    }
    let best = best_of_log(&log)?;
    Ok(SearchOutcome { best, log })
}

/// Search strategy and budget for [`tune_osr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Budget is the per-parameter grid resolution.
    Grid { resolution: usize },
    /// Budget is the number of sampled trials.
    Random { trials: usize },
}

/// Everything `tune_osr` needs besides the data view.
#[derive(Debug, Clone)]
pub struct TuneConfig {
    pub method: Method,
    pub space: SearchSpace,
    pub strategy: SearchStrategy,
    pub seed: u64,
    pub calibration_split: Split,
    pub validation_split: Split,
    pub distance: DistanceKind,
    pub clamp_tail: bool,
}

/// Best trial, full log, and the decision rule rebuilt at the winning
/// configuration.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: TrialResult,
    pub log: Vec<TrialRecord>,
    pub artifact: MethodSpec,
}

fn is_calibration_error(e: &OsrError) -> bool {
    matches!(
        e,
        OsrError::Calibration { .. }
            | OsrError::InsufficientTail { .. }
            | OsrError::DegenerateTail { .. }
            | OsrError::NoConvergence { .. }
            | OsrError::NoCorrectSamples { .. }
    )
}

fn openmax_params(
    space: &SearchSpace,
    values: &[ParamValue],
    config: &TuneConfig,
) -> Result<OpenMaxParams> {
    let get = |name: &str| -> Result<ParamValue> {
        space
            .position(name)
            .map(|i| values[i])
            .ok_or_else(|| OsrError::InvalidConfig(format!("missing parameter {name:?}")))
    };
    Ok(OpenMaxParams {
        tail_size: get("weibull_tail")?.as_int().unwrap_or(0).max(0) as usize,
        alpha: get("weibull_alpha")?.as_int().unwrap_or(0).max(0) as usize,
        threshold: get("weibull_threshold")?.as_f64(),
        distance: config.distance,
        clamp_tail: config.clamp_tail,
    })
}

/// Tune one OSR method by maximizing open-set accuracy on the validation
/// split. OpenMax trials recalibrate with the trial's tail and alpha and
/// apply the trial's rejection threshold; calibration failures score as
/// failed trials rather than aborting the search.
pub fn tune_osr(view: &OpenSetView, config: &TuneConfig) -> Result<TuneOutcome> {
    config.space.validate()?;
    if config.space.method != config.method {
        return Err(OsrError::InvalidConfig(format!(
            "search space is for {}, tuning {}",
            config.space.method, config.method
        )));
    }
    if view.split_indices(config.validation_split).is_empty() {
        return Err(OsrError::InvalidConfig(format!(
            "validation split {} is empty",
            config.validation_split
        )));
    }
    if config.method == Method::OpenMax {
        let alpha = config
            .space
            .parameters
            .iter()
            .find(|p| p.name == "weibull_alpha")
            .map(|p| p.kind);
        if let Some(ParamKind::Integer { lo, hi }) = alpha {
            let k = view.known_count() as i64;
            if lo < 1 || hi > k {
                return Err(OsrError::InvalidConfig(format!(
                    "weibull_alpha bounds [{lo}, {hi}] outside [1, {k}] for {k} known classes"
                )));
            }
        }
    }

    let spec_for = |values: &[ParamValue]| -> Result<MethodSpec> {
        match config.method {
            Method::SoftmaxThreshold => {
                let theta = values[0].as_f64();
                Ok(MethodSpec::SoftmaxThreshold { theta })
            }
            Method::OpenMax => {
                let params = openmax_params(&config.space, values, config)?;
                Ok(MethodSpec::OpenMax(calibrate_openmax(
                    view,
                    config.calibration_split,
                    &params,
                )?))
            }
            Method::Softmax => Err(OsrError::InvalidConfig(
                "softmax has no hyperparameters to tune".into(),
            )),
        }
    };

    let objective = |values: &[ParamValue]| -> Result<TrialEval> {
        match spec_for(values) {
            Ok(spec) => Ok(TrialEval::Score(split_accuracy(
                view,
                config.validation_split,
                &spec,
            )?)),
            Err(e) if is_calibration_error(&e) => Ok(TrialEval::Failed(e.to_string())),
            Err(e) => Err(e),
        }
    };

    let outcome = match config.strategy {
        SearchStrategy::Grid { resolution } => grid_search(&config.space, objective, resolution)?,
        SearchStrategy::Random { trials } => {
            random_search(&config.space, objective, trials, config.seed)?
        }
    };

    let best_values: Vec<ParamValue> = outcome.best.params.iter().map(|(_, v)| *v).collect();
    let artifact = spec_for(&best_values)?;
    Ok(TuneOutcome {
        best: outcome.best,
        log: outcome.log,
        artifact,
    })
}
