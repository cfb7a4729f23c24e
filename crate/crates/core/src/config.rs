//! JSON configuration.
//!
//! Every stage is written as `["AlgorithmName", {parameters}]`, for example
//!
//! ```json
//! {
//!     "trust_propagation": ["LipschiTrust", {"pretrust_value": 0.8, "decay": 0.8,
//!                                            "sink_vouch": 5.0, "error": 1e-08}],
//!     "scaling": ["ScalingCompose", [["Mehestan", {...}], ["QuantileZeroShift", {...}]]]
//! }
//! ```
//!
//! Experiment files wrap a generative model and a pipeline and name the swept
//! parameters by dotted paths such as `pipeline.scaling.scalings.0.lipschitz`.
//! Inside a `[name, params]` pair, path segments address `params` directly;
//! `scalings` addresses the step list of `ScalingCompose`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::aggregation::AggregationParams;
use crate::error::{Error, Result, Stage};
use crate::generative::{
    GenerativeConfig, KnaryGbt, NormalEntityModel, NormalUserModel, SimpleEngagementModel,
};
use crate::preference::GbtParams;
use crate::scaling::{MehestanParams, ZeroShiftParams};
use crate::voting::OvertrustParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschiTrustParams {
    pub pretrust_value: f64,
    pub decay: f64,
    pub sink_vouch: f64,
    pub error: f64,
}

impl Default for LipschiTrustParams {
    fn default() -> Self {
        LipschiTrustParams {
            pretrust_value: 0.8,
            decay: 0.8,
            sink_vouch: 5.0,
            error: 1e-8,
        }
    }
}

impl LipschiTrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pretrust_value > 0.0 && self.pretrust_value <= 1.0) {
            return Err(Error::config("pretrust_value must lie in (0, 1]"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("decay must lie in (0, 1)"));
        }
        if !(self.sink_vouch > 0.0 && self.sink_vouch.is_finite()) {
            return Err(Error::config("sink_vouch must be positive"));
        }
        if !(self.error > 0.0) {
            return Err(Error::config("trust error must be positive"));
        }
        Ok(())
    }
}

/// Uniform-root GBT parameters; the prior is given either as a standard
/// deviation (`α = 1/σ²`) or directly as a weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGbtParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_std_dev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weight: Option<f64>,
    pub comparison_max: f64,
    pub convergence_error: f64,
    pub cumulant_generating_function_error: f64,
}

impl Default for UniformGbtParams {
    fn default() -> Self {
        UniformGbtParams {
            prior_std_dev: Some(7.0),
            prior_weight: None,
            comparison_max: 10.0,
            convergence_error: 1e-5,
            cumulant_generating_function_error: 1e-5,
        }
    }
}

impl UniformGbtParams {
    pub fn to_gbt(&self) -> Result<GbtParams> {
        let prior_weight = match (self.prior_std_dev, self.prior_weight) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either prior_std_dev or prior_weight, not both"))
            }
            (Some(sd), None) if sd > 0.0 && sd.is_finite() => 1.0 / (sd * sd),
            (Some(sd), None) => return Err(Error::config(format!("prior_std_dev must be positive, got {sd}"))),
            (None, Some(w)) => w,
            (None, None) => return Err(Error::config("UniformGBT needs prior_std_dev or prior_weight")),
        };
        let params = GbtParams {
            prior_weight,
            comparison_max: self.comparison_max,
            convergence_error: self.convergence_error,
            cgf_error: self.cumulant_generating_function_error,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquashParams {
    pub score_max: f64,
}

impl Default for SquashParams {
    fn default() -> Self {
        SquashParams { score_max: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingStep {
    Mehestan(MehestanParams),
    QuantileZeroShift(ZeroShiftParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub trust_propagation: LipschiTrustParams,
    pub voting_rights: OvertrustParams,
    pub preference_learning: UniformGbtParams,
    pub scaling: Vec<ScalingStep>,
    pub aggregation: AggregationParams,
    pub post_process: SquashParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            trust_propagation: LipschiTrustParams::default(),
            voting_rights: OvertrustParams::default(),
            preference_learning: UniformGbtParams::default(),
            scaling: vec![
                ScalingStep::Mehestan(MehestanParams::default()),
                ScalingStep::QuantileZeroShift(ZeroShiftParams::default()),
            ],
            aggregation: AggregationParams::default(),
            post_process: SquashParams::default(),
        }
    }
}

fn config_err(context: &str, e: impl std::fmt::Display) -> Error {
    Error::config(format!("{context}: {e}"))
}

/// Splits `["Name", payload]` (or `["Name"]`) into its parts.
fn tagged<'a>(value: &'a Value, context: &str) -> Result<(&'a str, Option<&'a Value>)> {
    let items = value
        .as_array()
        .ok_or_else(|| Error::config(format!("{context}: expected [\"Name\", {{...}}]")))?;
    let name = items
        .first()
        .and_then(Value::as_str)
        .ok_or_else(|| Error::config(format!("{context}: missing algorithm name")))?;
    if items.len() > 2 {
        return Err(Error::config(format!("{context}: too many elements")));
    }
    Ok((name, items.get(1)))
}

fn params<T: DeserializeOwned>(payload: Option<&Value>, context: &str) -> Result<T> {
    let value = payload.cloned().unwrap_or_else(|| json!({}));
    serde_json::from_value(value).map_err(|e| config_err(context, e))
}

fn expect_name(context: &str, found: &str, expected: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::config(format!("{context}: unknown algorithm {found:?} (expected {expected:?})")))
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, context: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::config(format!("{context}: missing key {key:?}")))
}

fn reject_unknown(obj: &Map<String, Value>, known: &[&str], context: &str) -> Result<()> {
    match obj.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{context}: unknown key {k:?}"))),
        None => Ok(()),
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("config structs serialize")
}

impl PipelineConfig {
    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("pipeline must be a JSON object"))?;
        let stages = [
            "trust_propagation",
            "voting_rights",
            "preference_learning",
            "scaling",
            "aggregation",
            "post_process",
        ];
        reject_unknown(obj, &stages, "pipeline")?;

        let (name, p) = tagged(field(obj, "trust_propagation", "pipeline")?, "trust_propagation")?;
        expect_name("trust_propagation", name, "LipschiTrust")?;
        let trust_propagation: LipschiTrustParams = params(p, "LipschiTrust")?;

        let (name, p) = tagged(field(obj, "voting_rights", "pipeline")?, "voting_rights")?;
        expect_name("voting_rights", name, "AffineOvertrust")?;
        let voting_rights: OvertrustParams = params(p, "AffineOvertrust")?;

        let (name, p) = tagged(field(obj, "preference_learning", "pipeline")?, "preference_learning")?;
        expect_name("preference_learning", name, "UniformGBT")?;
        let preference_learning: UniformGbtParams = params(p, "UniformGBT")?;

        let scaling = parse_scaling(field(obj, "scaling", "pipeline")?)?;

        let (name, p) = tagged(field(obj, "aggregation", "pipeline")?, "aggregation")?;
        expect_name("aggregation", name, "QuantileStandardizedQrMedian")?;
        let aggregation: AggregationParams = params(p, "QuantileStandardizedQrMedian")?;

        let (name, p) = tagged(field(obj, "post_process", "pipeline")?, "post_process")?;
        expect_name("post_process", name, "Squash")?;
        let post_process: SquashParams = params(p, "Squash")?;

        let config = PipelineConfig {
            trust_propagation,
            voting_rights,
            preference_learning,
            scaling,
            aggregation,
            post_process,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        let steps: Vec<Value> = self
            .scaling
            .iter()
            .map(|step| match step {
                ScalingStep::Mehestan(p) => json!(["Mehestan", to_value(p)]),
                ScalingStep::QuantileZeroShift(p) => json!(["QuantileZeroShift", to_value(p)]),
            })
            .collect();
        json!({
            "trust_propagation": ["LipschiTrust", to_value(&self.trust_propagation)],
            "voting_rights": ["AffineOvertrust", to_value(&self.voting_rights)],
            "preference_learning": ["UniformGBT", to_value(&self.preference_learning)],
            "scaling": ["ScalingCompose", steps],
            "aggregation": ["QuantileStandardizedQrMedian", to_value(&self.aggregation)],
            "post_process": ["Squash", to_value(&self.post_process)],
        })
    }

    /// Checks every stage's parameters; failures name their stage.
    pub fn validate(&self) -> Result<()> {
        self.trust_propagation
            .validate()
            .map_err(|e| e.in_stage(Stage::TrustPropagation))?;
        self.voting_rights.validate().map_err(|e| e.in_stage(Stage::VotingRights))?;
        self.preference_learning
            .to_gbt()
            .map_err(|e| e.in_stage(Stage::PreferenceLearning))?;
        for step in &self.scaling {
            match step {
                ScalingStep::Mehestan(p) => p.validate(),
                ScalingStep::QuantileZeroShift(p) => p.validate(),
            }
            .map_err(|e| e.in_stage(Stage::Scaling))?;
        }
        self.aggregation.validate().map_err(|e| e.in_stage(Stage::Aggregation))?;
        if !(self.post_process.score_max > 0.0 && self.post_process.score_max.is_finite()) {
            return Err(Error::config("score_max must be positive").in_stage(Stage::PostProcess));
        }
        Ok(())
    }

    /// Reads either a bare pipeline object or any document with a
    /// `pipeline` key.
    pub fn from_document(doc: &Value) -> Result<Self> {
        match doc.get("pipeline") {
            Some(p) => PipelineConfig::from_value(p),
            None => PipelineConfig::from_value(doc),
        }
    }
}

fn parse_scaling(value: &Value) -> Result<Vec<ScalingStep>> {
    let (name, payload) = tagged(value, "scaling")?;
    match name {
        "ScalingCompose" => {
            let steps = payload
                .and_then(Value::as_array)
                .ok_or_else(|| Error::config("ScalingCompose expects a list of scalings"))?;
            steps.iter().map(parse_scaling_step).collect()
        }
        _ => Ok(vec![parse_scaling_step(value)?]),
    }
}

fn parse_scaling_step(value: &Value) -> Result<ScalingStep> {
    let (name, p) = tagged(value, "scaling step")?;
    match name {
        "Mehestan" => Ok(ScalingStep::Mehestan(params(p, "Mehestan")?)),
        "QuantileZeroShift" => Ok(ScalingStep::QuantileZeroShift(params(p, "QuantileZeroShift")?)),
        other => Err(Error::config(format!("scaling: unknown algorithm {other:?}"))),
    }
}

/// Parses a `generative_model` object.
pub fn generative_from_value(value: &Value, n_users: usize, n_entities: usize, seed: u64) -> Result<GenerativeConfig> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::config("generative_model must be a JSON object"))?;
    let keys = ["user_model", "vouch_model", "entity_model", "engagement_model", "comparison_model"];
    reject_unknown(obj, &keys, "generative_model")?;

    let (name, p) = tagged(field(obj, "user_model", "generative_model")?, "user_model")?;
    expect_name("user_model", name, "NormalUserModel")?;
    let user: NormalUserModel = params(p, "NormalUserModel")?;

    let (name, p) = tagged(field(obj, "vouch_model", "generative_model")?, "vouch_model")?;
    expect_name("vouch_model", name, "ErdosRenyiVouchModel")?;
    if p.is_some_and(|v| v.as_object().is_none_or(|o| !o.is_empty())) {
        return Err(Error::config("ErdosRenyiVouchModel takes no parameters"));
    }

    let (name, p) = tagged(field(obj, "entity_model", "generative_model")?, "entity_model")?;
    expect_name("entity_model", name, "NormalEntityModel")?;
    let entity: NormalEntityModel = params(p, "NormalEntityModel")?;

    let (name, p) = tagged(field(obj, "engagement_model", "generative_model")?, "engagement_model")?;
    expect_name("engagement_model", name, "SimpleEngagementModel")?;
    let engagement: SimpleEngagementModel = params(p, "SimpleEngagementModel")?;

    let (name, p) = tagged(field(obj, "comparison_model", "generative_model")?, "comparison_model")?;
    expect_name("comparison_model", name, "KnaryGBT")?;
    let comparison: KnaryGbt = params(p, "KnaryGBT")?;

    let config = GenerativeConfig {
        n_users,
        n_entities,
        seed,
        user,
        entity,
        engagement,
        comparison,
    };
    config.validate()?;
    Ok(config)
}

pub fn generative_to_value(config: &GenerativeConfig) -> Value {
    json!({
        "user_model": ["NormalUserModel", to_value(&config.user)],
        "vouch_model": ["ErdosRenyiVouchModel"],
        "entity_model": ["NormalEntityModel", to_value(&config.entity)],
        "engagement_model": ["SimpleEngagementModel", to_value(&config.engagement)],
        "comparison_model": ["KnaryGBT", to_value(&config.comparison)],
    })
}

/// Sets the value at a dotted `path`.
///
/// Intermediate segments must exist; the last one may add a key to an
/// object, in which case the caller is expected to re-parse the document.
pub fn set_path(doc: &mut Value, path: &str, new_value: Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config(format!("malformed parameter path {path:?}")));
    }
    set_segments(doc, &segments, path, new_value)
}

fn set_segments(node: &mut Value, segments: &[&str], path: &str, new_value: Value) -> Result<()> {
    let seg = segments[0];
    let unresolved = || Error::config(format!("parameter path {path:?} does not resolve at {seg:?}"));
    let node = match wrapper(node, seg) {
        Wrapper::None => node,
        Wrapper::Payload => &mut node[1],
        Wrapper::Invalid => return Err(unresolved()),
    };
    if segments.len() == 1 {
        return match node {
            Value::Object(obj) => {
                obj.insert(seg.to_string(), new_value);
                Ok(())
            }
            Value::Array(items) => {
                let slot = seg
                    .parse::<usize>()
                    .ok()
                    .and_then(|k| items.get_mut(k))
                    .ok_or_else(unresolved)?;
                *slot = new_value;
                Ok(())
            }
            _ => Err(unresolved()),
        };
    }
    let next = match node {
        Value::Object(obj) => obj.get_mut(seg),
        Value::Array(items) if seg == "scalings" => items.get_mut(1),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
        _ => None,
    };
    set_segments(next.ok_or_else(unresolved)?, &segments[1..], path, new_value)
}

enum Wrapper {
    None,
    Payload,
    Invalid,
}

/// How `seg` sees through a `[name, params]` wrapper: object parameters are
/// addressed directly, a step list only through `scalings`.
fn wrapper(node: &Value, seg: &str) -> Wrapper {
    let Value::Array(items) = node else {
        return Wrapper::None;
    };
    if !items.first().is_some_and(Value::is_string) {
        return Wrapper::None;
    }
    match items.get(1) {
        Some(Value::Array(_)) if seg == "scalings" => Wrapper::None,
        Some(Value::Object(_)) if items.len() == 2 => Wrapper::Payload,
        _ => Wrapper::Invalid,
    }
}

/// Parameter sweep description; `generative_model` and `pipeline` stay raw so
/// that dotted paths can be patched before parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ylegend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xlegend: Option<String>,
    pub xparameter: String,
    pub xvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zparameter: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zlegends: Option<Vec<String>>,
    pub n_users: usize,
    pub n_entities: usize,
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    pub generative_model: Value,
    pub pipeline: Value,
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err("experiment", e))?;
        ExperimentConfig::from_value(&value)
    }
}

/// One fully resolved run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub generative: GenerativeConfig,
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    pub fn from_value(value: &Value) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_value(value.clone()).map_err(|e| config_err("experiment", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        to_value(self)
    }

    /// `zvalues`, or a single placeholder cell when there is no z axis.
    pub fn z_axis(&self) -> Vec<Option<f64>> {
        if self.zparameter.is_some() && !self.zvalues.is_empty() {
            self.zvalues.iter().map(|&z| Some(z)).collect()
        } else {
            vec![None]
        }
    }

    /// Checks every grid cell resolves before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.xvalues.is_empty() {
            return Err(Error::config("xvalues must not be empty"));
        }
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds must be positive"));
        }
        if self.zparameter.is_some() && self.zvalues.is_empty() {
            return Err(Error::config("zparameter given without zvalues"));
        }
        for &x in &self.xvalues {
            for z in self.z_axis() {
                self.resolve(x, z, 0)?;
            }
        }
        Ok(())
    }

    /// Configuration of the cell `(x, z)` for seed offset `seed_index`.
    pub fn resolve(&self, x: f64, z: Option<f64>, seed_index: u64) -> Result<ResolvedRun> {
        let mut doc = json!({
            "generative_model": self.generative_model,
            "pipeline": self.pipeline,
        });
        set_path(&mut doc, &self.xparameter, json!(x))?;
        if let (Some(path), Some(z)) = (&self.zparameter, z) {
            set_path(&mut doc, path, json!(z))?;
        }
        let generative = generative_from_value(
            &doc["generative_model"],
            self.n_users,
            self.n_entities,
            self.seed.wrapping_add(seed_index),
        )?;
        let pipeline = PipelineConfig::from_value(&doc["pipeline"])?;
        Ok(ResolvedRun { generative, pipeline })
    }
}

/// Reads the generation settings from either a standalone document
/// (`n_users`, `n_entities`, optional `seed`, `generative_model`) or an
/// experiment file.
pub fn generate_config_from_document(doc: &Value) -> Result<GenerativeConfig> {
    if doc.get("xparameter").is_some() {
        let exp = ExperimentConfig::from_value(doc)?;
        return generative_from_value(&exp.generative_model, exp.n_users, exp.n_entities, exp.seed);
    }
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::config("generation config must be a JSON object"))?;
    reject_unknown(obj, &["n_users", "n_entities", "seed", "generative_model", "pipeline"], "generation config")?;
    let count = |key: &str| -> Result<usize> {
        field(obj, key, "generation config")?
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| Error::config(format!("{key} must be a nonnegative integer")))
    };
    let seed = match obj.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::config("seed must be a nonnegative integer"))?,
    };
    generative_from_value(
        field(obj, "generative_model", "generation config")?,
        count("n_users")?,
        count("n_entities")?,
        seed,
    )
}
