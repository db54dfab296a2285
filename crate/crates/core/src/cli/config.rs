//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! Keys are field paths of [`TrainConfig`] (`stages`, `weights.w_td`,
//! `td.mode`, ...) and of [`ProblemSpec`] prefixed with `spec.`
//! (`spec.sigma`, `spec.dt`, ...). [`RunConfig::echo`] prints every key in
//! the same grammar, so an echo can be fed back as a config file.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scenario::{PenaltyShape, ProblemSpec, ScenarioName};
use crate::trainer::TrainConfig;

/// A problem together with the training configuration used to solve it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn penalty_name(p: PenaltyShape) -> &'static str {
    match p {
        PenaltyShape::Indicator => "indicator",
        PenaltyShape::Hinge => "hinge",
    }
}

impl RunConfig {
    /// Built-in problem with the default training budget.
    pub fn new(scenario: ScenarioName) -> Result<Self> {
        Ok(RunConfig {
            spec: ProblemSpec::by_name(scenario)?,
            train: TrainConfig::default(),
        })
    }

    /// Sets one field by its path.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.spec;
        match key {
            "stages" => t.stages = parse(key, value)?,
            "steps_per_stage" | "steps" => t.steps_per_stage = parse(key, value)?,
            "k" => t.k = parse(key, value)?,
            "batch_on" => t.batch_on = parse(key, value)?,
            "batch_off" => t.batch_off = parse(key, value)?,
            "buffer_capacity" => t.buffer_capacity = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "lr_policy" => t.lr_policy = parse(key, value)?,
            "lr_value" => t.lr_value = parse(key, value)?,
            "lr_fm" => t.lr_fm = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "weights.w_ipf" => t.weights.w_ipf = parse(key, value)?,
            "weights.w_td" => t.weights.w_td = parse(key, value)?,
            "weights.w_fm" => t.weights.w_fm = parse(key, value)?,
            "td.mode" => t.td.mode = parse(key, value)?,
            "td.cross" => t.td.cross = parse(key, value)?,
            "td.policy_grad" => t.td.policy_grad = parse(key, value)?,
            "fm_coupling" => t.fm_coupling = parse(key, value)?,
            "fm_points" => t.fm_points = parse(key, value)?,
            "eval_n" => t.eval_n = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "spec.sigma" => s.sigma = parse(key, value)?,
            "spec.horizon" => s.horizon = parse(key, value)?,
            "spec.dt" => s.dt = parse(key, value)?,
            "spec.entropy_weight" => s.entropy_weight = parse(key, value)?,
            "spec.obstacle_weight" => s.obstacle_weight = parse(key, value)?,
            "spec.penalty" => s.penalty = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file's text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(Error::Config(format!("line {}: `{key}` has no value", n + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    /// Every key with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let s = &self.spec;
        vec![
            ("stages", t.stages.to_string()),
            ("steps_per_stage", t.steps_per_stage.to_string()),
            ("k", t.k.to_string()),
            ("batch_on", t.batch_on.to_string()),
            ("batch_off", t.batch_off.to_string()),
            ("buffer_capacity", t.buffer_capacity.to_string()),
            ("hidden", t.hidden.to_string()),
            ("lr_policy", t.lr_policy.to_string()),
            ("lr_value", t.lr_value.to_string()),
            ("lr_fm", t.lr_fm.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("weights.w_ipf", t.weights.w_ipf.to_string()),
            ("weights.w_td", t.weights.w_td.to_string()),
            ("weights.w_fm", t.weights.w_fm.to_string()),
            ("td.mode", t.td.mode.to_string()),
            ("td.cross", t.td.cross.to_string()),
            ("td.policy_grad", t.td.policy_grad.to_string()),
            ("fm_coupling", t.fm_coupling.to_string()),
            ("fm_points", t.fm_points.to_string()),
            ("eval_n", t.eval_n.to_string()),
            ("seed", t.seed.to_string()),
            ("spec.sigma", s.sigma.to_string()),
            ("spec.horizon", s.horizon.to_string()),
            ("spec.dt", s.dt.to_string()),
            ("spec.entropy_weight", s.entropy_weight.to_string()),
            ("spec.obstacle_weight", s.obstacle_weight.to_string()),
            ("spec.penalty", penalty_name(s.penalty).to_string()),
        ]
    }

    /// The effective configuration as a config file.
    pub fn echo(&self) -> String {
        let mut out = format!("# scenario: {}\n", self.spec.name);
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
