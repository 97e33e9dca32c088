//! Plain-text configuration: `[section]` headers followed by `key = value`
//! lines. `#` starts a comment. Later assignments win, so command-line
//! overrides can simply be applied after the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::PenaltyMode;
use crate::error::{Error, Result};
use crate::generative::{GanConfig, GanMode};
use crate::long_term::LtmConfig;
use crate::nn::Activation;
use crate::short_term::StmConfig;
use crate::toyworld::TaskId;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .trim();
                if !valid_name(name) {
                    return Err(err(format!("bad section name {name:?}")));
                }
                out.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let key = key.trim();
            if !valid_name(key) {
                return Err(err(format!("bad key {key:?}")));
            }
            let section = section
                .as_ref()
                .ok_or_else(|| err(format!("key {key:?} outside any section")))?;
            out.sections
                .get_mut(section)
                .expect("section exists")
                .insert(key.to_string(), value.trim().to_string());
        }
        Ok(out)
    }

    /// Applies `section.key=value`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let err = |message: String| Error::Config { line: 0, message };
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| err(format!("override {assignment:?} lacks '='")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| err(format!("override {path:?} must be section.key")))?;
        if !valid_name(section) || !valid_name(key) {
            return Err(err(format!("bad override target {path:?}")));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, String>)> {
        self.sections.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses one value or reports which key was wrong.
fn value<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line: 0,
        message: format!("{section}.{key}: cannot parse {raw:?}"),
    })
}

fn list<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(section, key, s))
        .collect()
}

fn render_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(section: &str, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config {
            line: 0,
            message: format!("{section}.{key}: expected on or off, found {raw:?}"),
        }),
    }
}

/// What earlier tasks are rehearsed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Generator trained on states only.
    Repr,
    /// Generator also matched on hidden activations.
    Grim,
    /// Real stored states of earlier tasks, no generator.
    Reh,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Repr => "repr",
            Method::Grim => "grim",
            Method::Reh => "reh",
        }
    }

    pub fn gan_mode(self) -> Option<GanMode> {
        match self {
            Method::Repr => Some(GanMode::Repr),
            Method::Grim => Some(GanMode::Grim),
            Method::Reh => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repr" => Ok(Method::Repr),
            "grim" => Ok(Method::Grim),
            "reh" => Ok(Method::Reh),
            _ => Err(Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

fn encode_penalty(p: PenaltyMode) -> String {
    match p {
        PenaltyMode::Exact => "exact".into(),
        PenaltyMode::RandomDirection { eps } => format!("random_direction:{eps}"),
    }
}

fn decode_penalty(raw: &str) -> Result<PenaltyMode> {
    if raw == "exact" {
        return Ok(PenaltyMode::Exact);
    }
    if raw == "random_direction" {
        return Ok(PenaltyMode::RandomDirection {
            eps: PenaltyMode::DEFAULT_EPS,
        });
    }
    if let Some(eps) = raw.strip_prefix("random_direction:") {
        return Ok(PenaltyMode::RandomDirection {
            eps: value("generative", "penalty", eps)?,
        });
    }
    Err(Error::Config {
        line: 0,
        message: format!("generative.penalty: unknown mode {raw:?}"),
    })
}

/// Everything one experiment needs, with defaults for every field.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub normalize: bool,
    pub tasks: Vec<TaskId>,
    pub seeds: Vec<u64>,
    pub frame_stack: usize,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    /// Skip training a generator after the last task, where nothing uses it.
    pub final_gan: bool,
    pub stm: StmConfig,
    pub gan: GanConfig,
    pub ltm: LtmConfig,
    /// Pure-distillation settings for relearning from generated states.
    pub scratch: LtmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let stm = StmConfig::default();
        let ltm = LtmConfig {
            hidden: stm.hidden.clone(),
            ..LtmConfig::default()
        };
        Self {
            method: Method::Grim,
            normalize: true,
            tasks: TaskId::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            frame_stack: 2,
            eval_episodes: 30,
            eval_epsilon: 0.05,
            final_gan: false,
            scratch: LtmConfig {
                alpha: 1.0,
                steps: 20_000,
                ..ltm.clone()
            },
            stm,
            gan: GanConfig::default(),
            ltm,
        }
    }
}

macro_rules! apply_keys {
    ($section:literal, $entries:expr, $target:expr, { $($key:literal => $field:ident : $kind:ident),* $(,)? }) => {{
        for (key, raw) in $entries {
            match key.as_str() {
                $($key => $target.$field = apply_keys!(@parse $kind, $section, $key, raw),)*
                other => {
                    return Err(Error::Config {
                        line: 0,
                        message: format!("unknown key {}.{}", $section, other),
                    })
                }
            }
        }
    }};
    (@parse scalar, $section:literal, $key:literal, $raw:expr) => { value($section, $key, $raw)? };
    (@parse list, $section:literal, $key:literal, $raw:expr) => { list($section, $key, $raw)? };
    (@parse flag, $section:literal, $key:literal, $raw:expr) => { on_off($section, $key, $raw)? };
    (@parse activation, $section:literal, $key:literal, $raw:expr) => { Activation::decode($raw)? };
    (@parse penalty, $section:literal, $key:literal, $raw:expr) => { decode_penalty($raw)? };
}

impl ExperimentConfig {
    /// Defaults overridden by every key in `file`. Unknown keys are errors.
    pub fn from_file(file: &ConfigFile) -> Result<Self> {
        let mut c = Self::default();
        for (section, entries) in file.sections() {
            match section {
                "experiment" => apply_keys!("experiment", entries, c, {
                    "method" => method: scalar,
                    "normalize" => normalize: flag,
                    "tasks" => tasks: list,
                    "seeds" => seeds: list,
                    "frame_stack" => frame_stack: scalar,
                    "eval_episodes" => eval_episodes: scalar,
                    "eval_epsilon" => eval_epsilon: scalar,
                    "final_gan" => final_gan: flag,
                }),
                "short_term" => apply_keys!("short_term", entries, c.stm, {
                    "frames" => frames: scalar,
                    "hidden" => hidden: list,
                    "batch_size" => batch_size: scalar,
                    "lr" => lr: scalar,
                    "momentum" => momentum: scalar,
                    "gamma" => gamma: scalar,
                    "grad_clip" => grad_clip: scalar,
                    "sync_interval" => sync_interval: scalar,
                    "train_every" => train_every: scalar,
                    "learning_starts" => learning_starts: scalar,
                    "eps_start" => eps_start: scalar,
                    "eps_end" => eps_end: scalar,
                    "eps_fraction" => eps_fraction: scalar,
                    "replay_capacity" => replay_capacity: scalar,
                    "eval_interval" => eval_interval: scalar,
                }),
                "generative" => apply_keys!("generative", entries, c.gan, {
                    "steps" => steps: scalar,
                    "batch_size" => batch_size: scalar,
                    "latent_dim" => latent_dim: scalar,
                    "gen_hidden" => gen_hidden: list,
                    "gen_output" => gen_output: activation,
                    "disc_hidden" => disc_hidden: list,
                    "disc2_hidden" => disc2_hidden: list,
                    "lr" => lr: scalar,
                    "disc_lr" => disc_lr: scalar,
                    "beta1" => beta1: scalar,
                    "beta2" => beta2: scalar,
                    "lambda" => lambda: scalar,
                    "eps_drift" => eps_drift: scalar,
                    "beta" => beta: scalar,
                    "activation_layer" => activation_layer: scalar,
                    "penalty" => penalty: penalty,
                    "log_interval" => log_interval: scalar,
                }),
                "long_term" => apply_keys!("long_term", entries, c.ltm, {
                    "steps" => steps: scalar,
                    "batch_size" => batch_size: scalar,
                    "alpha" => alpha: scalar,
                    "lr" => lr: scalar,
                    "momentum" => momentum: scalar,
                    "grad_clip" => grad_clip: scalar,
                    "norm_batches" => norm_batches: scalar,
                    "window" => window: scalar,
                }),
                "scratch" => apply_keys!("scratch", entries, c.scratch, {
                    "steps" => steps: scalar,
                    "batch_size" => batch_size: scalar,
                    "lr" => lr: scalar,
                    "momentum" => momentum: scalar,
                    "grad_clip" => grad_clip: scalar,
                    "norm_batches" => norm_batches: scalar,
                    "window" => window: scalar,
                }),
                other => {
                    return Err(Error::Config {
                        line: 0,
                        message: format!("unknown section [{other}]"),
                    })
                }
            }
        }
        // Both long-term networks share the short-term architecture so the
        // first task can be copied across.
        c.ltm.hidden = c.stm.hidden.clone();
        c.scratch.hidden = c.stm.hidden.clone();
        c.ltm.normalize = c.normalize;
        c.scratch.normalize = c.normalize;
        c.scratch.alpha = 1.0;
        c.stm.eval_episodes = c.eval_episodes;
        c.stm.eval_epsilon = c.eval_epsilon;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment.seeds must not be empty"));
        }
        if self.tasks.is_empty() {
            return Err(Error::invalid("experiment.tasks must not be empty"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::invalid("experiment.eval_episodes must be positive"));
        }
        if self.frame_stack == 0 {
            return Err(Error::invalid("experiment.frame_stack must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(Error::invalid("experiment.eval_epsilon must be in [0, 1]"));
        }
        self.stm.validate()?;
        self.gan.validate()?;
        self.ltm.validate()?;
        self.scratch.validate()
    }

    /// A config file that reproduces `self` through [`ExperimentConfig::from_file`].
    pub fn to_file(&self) -> ConfigFile {
        let mut f = ConfigFile::default();
        let mut put = |section: &str, key: &str, v: String| {
            f.set(&format!("{section}.{key}={v}")).expect("valid key");
        };
        let flag = |b: bool| if b { "on" } else { "off" }.to_string();
        put("experiment", "method", self.method.to_string());
        put("experiment", "normalize", flag(self.normalize));
        put("experiment", "tasks", render_list(&self.tasks));
        put("experiment", "seeds", render_list(&self.seeds));
        put("experiment", "frame_stack", self.frame_stack.to_string());
        put(
            "experiment",
            "eval_episodes",
            self.eval_episodes.to_string(),
        );
        put("experiment", "eval_epsilon", self.eval_epsilon.to_string());
        put("experiment", "final_gan", flag(self.final_gan));

        let s = &self.stm;
        for (k, v) in [
            ("frames", s.frames.to_string()),
            ("hidden", render_list(&s.hidden)),
            ("batch_size", s.batch_size.to_string()),
            ("lr", s.lr.to_string()),
            ("momentum", s.momentum.to_string()),
            ("gamma", s.gamma.to_string()),
            ("grad_clip", s.grad_clip.to_string()),
            ("sync_interval", s.sync_interval.to_string()),
            ("train_every", s.train_every.to_string()),
            ("learning_starts", s.learning_starts.to_string()),
            ("eps_start", s.eps_start.to_string()),
            ("eps_end", s.eps_end.to_string()),
            ("eps_fraction", s.eps_fraction.to_string()),
            ("replay_capacity", s.replay_capacity.to_string()),
            ("eval_interval", s.eval_interval.to_string()),
        ] {
            put("short_term", k, v);
        }
        let g = &self.gan;
        for (k, v) in [
            ("steps", g.steps.to_string()),
            ("batch_size", g.batch_size.to_string()),
            ("latent_dim", g.latent_dim.to_string()),
            ("gen_hidden", render_list(&g.gen_hidden)),
            ("gen_output", g.gen_output.encode()),
            ("disc_hidden", render_list(&g.disc_hidden)),
            ("disc2_hidden", render_list(&g.disc2_hidden)),
            ("lr", g.lr.to_string()),
            ("disc_lr", g.disc_lr.to_string()),
            ("beta1", g.beta1.to_string()),
            ("beta2", g.beta2.to_string()),
            ("lambda", g.lambda.to_string()),
            ("eps_drift", g.eps_drift.to_string()),
            ("beta", g.beta.to_string()),
            ("activation_layer", g.activation_layer.to_string()),
            ("penalty", encode_penalty(g.penalty)),
            ("log_interval", g.log_interval.to_string()),
        ] {
            put("generative", k, v);
        }
        for (section, l) in [("long_term", &self.ltm), ("scratch", &self.scratch)] {
            let mut entries = vec![
                ("steps", l.steps.to_string()),
                ("batch_size", l.batch_size.to_string()),
                ("lr", l.lr.to_string()),
                ("momentum", l.momentum.to_string()),
                ("grad_clip", l.grad_clip.to_string()),
                ("norm_batches", l.norm_batches.to_string()),
                ("window", l.window.to_string()),
            ];
            if section == "long_term" {
                entries.push(("alpha", l.alpha.to_string()));
            }
            for (k, v) in entries {
                put(section, k, v);
            }
        }
        f
    }
}
