//! Flat `section.key = value` configuration with typed parsing, presets, and
//! a dumpable schema. CLI flags override file values; file values override
//! preset values; presets override defaults.

use crate::lifecycle::{LifecycleSchedule, LifecycleStrategy};
use crate::losses::LossWeights;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {msg}")]
    BadValue { key: String, msg: String },
    #[error("malformed line {line}: expected `section.key = value`")]
    BadLine { line: usize },
    #[error("unknown preset {0:?} (available: paper, desk)")]
    UnknownPreset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // dataset.*
    pub dataset_n_frames: usize,
    pub dataset_eval_every: usize,
    pub dataset_resolution: usize,
    pub dataset_n_points: usize,
    pub dataset_seed: u64,
    pub dataset_shading: f64,
    pub dataset_motion_scale: f64,
    pub dataset_jaw_amplitude: f64,
    // rig.*
    pub rig_seed: u64,
    pub rig_n_expressions: usize,
    pub rig_template_vertices: usize,
    // model.*
    pub model_hidden_width: usize,
    pub model_hidden_layers: usize,
    pub model_encoding_bands: usize,
    pub model_offset_cap: f64,
    // train.*
    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_eps: f64,
    pub train_seed: u64,
    pub train_lr_decay_epochs: Vec<usize>,
    pub train_lr_decay_factor: f64,
    pub train_flame_decay_epochs: Vec<usize>,
    pub train_flame_decay_factor: f64,
    pub train_ablate_param_deform: bool,
    pub train_checkpoint_every: usize,
    // loss.*
    pub loss_rgb: f64,
    pub loss_dssim: f64,
    pub loss_flame: f64,
    pub loss_vgg: f64,
    pub loss_flame_e: f64,
    pub loss_flame_p: f64,
    pub loss_flame_w: f64,
    pub loss_background: [f64; 3],
    pub loss_perceptual_seed: u64,
    // lifecycle.*
    pub lifecycle_enabled: bool,
    pub lifecycle_r0: f64,
    pub lifecycle_decay: f64,
    pub lifecycle_radius_floor: f64,
    pub lifecycle_max_points: usize,
    pub lifecycle_scale: f64,
    pub lifecycle_prune_threshold: f64,
    pub lifecycle_strategy: LifecycleStrategy,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dataset_n_frames: 72,
            dataset_eval_every: 9,
            dataset_resolution: 128,
            dataset_n_points: 2000,
            dataset_seed: 42,
            dataset_shading: 0.25,
            dataset_motion_scale: 1.0,
            dataset_jaw_amplitude: 0.3,
            rig_seed: 42,
            rig_n_expressions: 10,
            rig_template_vertices: 500,
            model_hidden_width: 128,
            model_hidden_layers: 3,
            model_encoding_bands: 0,
            model_offset_cap: 0.5,
            train_epochs: 120,
            train_lr: 1e-4,
            train_beta1: 0.9,
            train_beta2: 0.999,
            train_eps: 1e-8,
            train_seed: 0,
            train_lr_decay_epochs: vec![80, 100],
            train_lr_decay_factor: 0.5,
            train_flame_decay_epochs: vec![20, 30, 50, 70],
            train_flame_decay_factor: 0.5,
            train_ablate_param_deform: false,
            train_checkpoint_every: 10,
            loss_rgb: 1.0,
            loss_dssim: 0.25,
            loss_flame: 1.0,
            loss_vgg: 0.1,
            loss_flame_e: 1000.0,
            loss_flame_p: 1000.0,
            loss_flame_w: 1.0,
            loss_background: [1.0, 1.0, 1.0],
            loss_perceptual_seed: 7,
            lifecycle_enabled: true,
            lifecycle_r0: 0.5,
            lifecycle_decay: 0.75,
            lifecycle_radius_floor: 0.004,
            lifecycle_max_points: 100_000,
            lifecycle_scale: 1.0,
            lifecycle_prune_threshold: 0.1,
            lifecycle_strategy: LifecycleStrategy::OpacityThreshold,
        }
    }
}

impl Config {
    /// Desk-scale preset: half-cadence lifecycle, 20k-point cap, 60 epochs,
    /// smaller field nets with frequency encoding, a tighter starting radius
    /// and a step-budget-scaled learning rate. Decay landmarks scale with the
    /// schedule.
    pub fn desk_preset() -> Self {
        Self {
            train_epochs: 60,
            train_lr: 1e-3,
            train_lr_decay_epochs: vec![40, 50],
            train_flame_decay_epochs: vec![10, 15, 25, 35],
            model_hidden_width: 32,
            model_hidden_layers: 2,
            model_encoding_bands: 4,
            lifecycle_max_points: 20_000,
            lifecycle_scale: 0.5,
            lifecycle_r0: 0.1,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper" => Ok(Self::default()),
            "desk" => Ok(Self::desk_preset()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rgb: self.loss_rgb,
            dssim: self.loss_dssim,
            flame: self.loss_flame,
            vgg: self.loss_vgg,
            flame_e: self.loss_flame_e,
            flame_p: self.loss_flame_p,
            flame_w: self.loss_flame_w,
        }
    }

    pub fn lifecycle_schedule(&self) -> LifecycleSchedule {
        let mut s = LifecycleSchedule::scaled(self.lifecycle_scale, self.lifecycle_max_points);
        s.r0 = self.lifecycle_r0;
        s.decay = self.lifecycle_decay;
        s.radius_floor = self.lifecycle_radius_floor;
        s.prune_threshold = self.lifecycle_prune_threshold;
        s.strategy = self.lifecycle_strategy;
        s
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| ConfigError::BadValue { key: key.into(), msg: msg.into() };
        macro_rules! parse {
            ($field:expr, $ty:ty) => {{
                $field = value
                    .trim()
                    .parse::<$ty>()
                    .map_err(|e| bad(key, &e.to_string()))?;
            }};
        }
        let parse_list = |value: &str| -> Result<Vec<usize>, ConfigError> {
            value
                .split_whitespace()
                .map(|v| v.parse::<usize>().map_err(|e| bad(key, &e.to_string())))
                .collect()
        };
        match key {
            "dataset.n_frames" => parse!(self.dataset_n_frames, usize),
            "dataset.eval_every" => parse!(self.dataset_eval_every, usize),
            "dataset.resolution" => parse!(self.dataset_resolution, usize),
            "dataset.n_points" => parse!(self.dataset_n_points, usize),
            "dataset.seed" => parse!(self.dataset_seed, u64),
            "dataset.shading" => parse!(self.dataset_shading, f64),
            "dataset.motion_scale" => parse!(self.dataset_motion_scale, f64),
            "dataset.jaw_amplitude" => parse!(self.dataset_jaw_amplitude, f64),
            "rig.seed" => parse!(self.rig_seed, u64),
            "rig.n_expressions" => parse!(self.rig_n_expressions, usize),
            "rig.template_vertices" => parse!(self.rig_template_vertices, usize),
            "model.hidden_width" => parse!(self.model_hidden_width, usize),
            "model.hidden_layers" => parse!(self.model_hidden_layers, usize),
            "model.encoding_bands" => parse!(self.model_encoding_bands, usize),
            "model.offset_cap" => parse!(self.model_offset_cap, f64),
            "train.epochs" => parse!(self.train_epochs, usize),
            "train.lr" => parse!(self.train_lr, f64),
            "train.beta1" => parse!(self.train_beta1, f64),
            "train.beta2" => parse!(self.train_beta2, f64),
            "train.eps" => parse!(self.train_eps, f64),
            "train.seed" => parse!(self.train_seed, u64),
            "train.lr_decay_epochs" => self.train_lr_decay_epochs = parse_list(value)?,
            "train.lr_decay_factor" => parse!(self.train_lr_decay_factor, f64),
            "train.flame_decay_epochs" => self.train_flame_decay_epochs = parse_list(value)?,
            "train.flame_decay_factor" => parse!(self.train_flame_decay_factor, f64),
            "train.ablate_param_deform" => parse!(self.train_ablate_param_deform, bool),
            "train.checkpoint_every" => parse!(self.train_checkpoint_every, usize),
            "loss.rgb" => parse!(self.loss_rgb, f64),
            "loss.dssim" => parse!(self.loss_dssim, f64),
            "loss.flame" => parse!(self.loss_flame, f64),
            "loss.vgg" => parse!(self.loss_vgg, f64),
            "loss.flame_e" => parse!(self.loss_flame_e, f64),
            "loss.flame_p" => parse!(self.loss_flame_p, f64),
            "loss.flame_w" => parse!(self.loss_flame_w, f64),
            "loss.background" => {
                let vals: Result<Vec<f64>, _> =
                    value.split_whitespace().map(|v| v.parse::<f64>()).collect();
                let vals = vals.map_err(|e| bad(key, &e.to_string()))?;
                if vals.len() != 3 {
                    return Err(bad(key, "expected three components"));
                }
                self.loss_background = [vals[0], vals[1], vals[2]];
            }
            "loss.perceptual_seed" => parse!(self.loss_perceptual_seed, u64),
            "lifecycle.enabled" => parse!(self.lifecycle_enabled, bool),
            "lifecycle.r0" => parse!(self.lifecycle_r0, f64),
            "lifecycle.decay" => parse!(self.lifecycle_decay, f64),
            "lifecycle.radius_floor" => parse!(self.lifecycle_radius_floor, f64),
            "lifecycle.max_points" => parse!(self.lifecycle_max_points, usize),
            "lifecycle.scale" => parse!(self.lifecycle_scale, f64),
            "lifecycle.prune_threshold" => parse!(self.lifecycle_prune_threshold, f64),
            "lifecycle.strategy" => {
                self.lifecycle_strategy = match value.trim() {
                    "opacity" => LifecycleStrategy::OpacityThreshold,
                    "first-splat" => LifecycleStrategy::FirstSplat,
                    other => return Err(bad(key, &format!("unknown strategy {other:?}"))),
                };
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses `section.key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or(ConfigError::BadLine { line: i + 1 })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// Every key with its current value, parseable by `apply_text`.
    pub fn dump(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let strategy = match self.lifecycle_strategy {
            LifecycleStrategy::OpacityThreshold => "opacity",
            LifecycleStrategy::FirstSplat => "first-splat",
        };
        format!(
            "dataset.n_frames = {}\n\
             dataset.eval_every = {}\n\
             dataset.resolution = {}\n\
             dataset.n_points = {}\n\
             dataset.seed = {}\n\
             dataset.shading = {}\n\
             dataset.motion_scale = {}\n\
             dataset.jaw_amplitude = {}\n\
             rig.seed = {}\n\
             rig.n_expressions = {}\n\
             rig.template_vertices = {}\n\
             model.hidden_width = {}\n\
             model.hidden_layers = {}\n\
             model.encoding_bands = {}\n\
             model.offset_cap = {}\n\
             train.epochs = {}\n\
             train.lr = {}\n\
             train.beta1 = {}\n\
             train.beta2 = {}\n\
             train.eps = {}\n\
             train.seed = {}\n\
             train.lr_decay_epochs = {}\n\
             train.lr_decay_factor = {}\n\
             train.flame_decay_epochs = {}\n\
             train.flame_decay_factor = {}\n\
             train.ablate_param_deform = {}\n\
             train.checkpoint_every = {}\n\
             loss.rgb = {}\n\
             loss.dssim = {}\n\
             loss.flame = {}\n\
             loss.vgg = {}\n\
             loss.flame_e = {}\n\
             loss.flame_p = {}\n\
             loss.flame_w = {}\n\
             loss.background = {} {} {}\n\
             loss.perceptual_seed = {}\n\
             lifecycle.enabled = {}\n\
             lifecycle.r0 = {}\n\
             lifecycle.decay = {}\n\
             lifecycle.radius_floor = {}\n\
             lifecycle.max_points = {}\n\
             lifecycle.scale = {}\n\
             lifecycle.prune_threshold = {}\n\
             lifecycle.strategy = {}\n",
            self.dataset_n_frames,
            self.dataset_eval_every,
            self.dataset_resolution,
            self.dataset_n_points,
            self.dataset_seed,
            self.dataset_shading,
            self.dataset_motion_scale,
            self.dataset_jaw_amplitude,
            self.rig_seed,
            self.rig_n_expressions,
            self.rig_template_vertices,
            self.model_hidden_width,
            self.model_hidden_layers,
            self.model_encoding_bands,
            self.model_offset_cap,
            self.train_epochs,
            self.train_lr,
            self.train_beta1,
            self.train_beta2,
            self.train_eps,
            self.train_seed,
            list(&self.train_lr_decay_epochs),
            self.train_lr_decay_factor,
            list(&self.train_flame_decay_epochs),
            self.train_flame_decay_factor,
            self.train_ablate_param_deform,
            self.train_checkpoint_every,
            self.loss_rgb,
            self.loss_dssim,
            self.loss_flame,
            self.loss_vgg,
            self.loss_flame_e,
            self.loss_flame_p,
            self.loss_flame_w,
            self.loss_background[0],
            self.loss_background[1],
            self.loss_background[2],
            self.loss_perceptual_seed,
            self.lifecycle_enabled,
            self.lifecycle_r0,
            self.lifecycle_decay,
            self.lifecycle_radius_floor,
            self.lifecycle_max_points,
            self.lifecycle_scale,
            self.lifecycle_prune_threshold,
            strategy,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_the_key() {
        let mut c = Config::default();
        let err = c.apply_kv("train.nonsense", "1").unwrap_err();
        match err {
            ConfigError::UnknownKey(k) => assert_eq!(k, "train.nonsense"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dump_roundtrips_through_apply_text() {
        let mut c = Config::desk_preset();
        c.dataset_seed = 99;
        c.loss_background = [0.25, 0.5, 0.75];
        let dump = c.dump();
        let mut back = Config::default();
        back.apply_text(&dump).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut c = Config::default();
        c.apply_text("# a comment\n\ntrain.epochs = 7 # trailing\n").unwrap();
        assert_eq!(c.train_epochs, 7);
    }

    #[test]
    fn malformed_line_is_rejected() {
        let mut c = Config::default();
        assert!(matches!(
            c.apply_text("train.epochs 7\n"),
            Err(ConfigError::BadLine { line: 1 })
        ));
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(Config::preset("paper").unwrap(), Config::default());
        assert_eq!(Config::preset("desk").unwrap(), Config::desk_preset());
        assert!(Config::preset("gpu").is_err());
    }
}
