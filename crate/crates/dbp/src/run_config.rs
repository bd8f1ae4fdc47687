//! Line-oriented `key = value` run configuration with dotted sections.
//!
//! ```text
//! # training run
//! net.encoder_channels = 16,32,64
//! loss.mode = moments
//! loss.lambda_plus = 1.0
//! opt.learning_rate = 0.002
//! train.steps = 1500
//! train.seeds = 1,2,3
//! train.data = consumer-train.dbpd
//! sim.materials.mirror.gross_error_prob = 0.5
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected
//! with the offending line number.

use std::path::{Path, PathBuf};

use dbp_core::loss::{LossConfig, LossMode};
use dbp_core::net::NetConfig;
use dbp_core::optim::AdamConfig;
use dbp_core::sim::{Material, SimulatorConfig};

use crate::{DbpError, Result};

/// What a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Poke-supervised depth (and, per the loss mode, variance).
    #[default]
    Poke,
    /// Dense reconstruction of the sensor depth image.
    Autoencoder,
}

/// Everything a run needs: architecture, objective, optimizer, schedule,
/// data paths, and simulator overrides for `sim --config`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seeds: Vec<u64>,
    pub objective: Objective,
    pub train_data: Option<PathBuf>,
    pub sim: SimulatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetConfig::default(),
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
            batch_size: 16,
            steps: 5000,
            checkpoint_every: 1000,
            seeds: vec![0],
            objective: Objective::Poke,
            train_data: None,
            sim: SimulatorConfig::consumer(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate().map_err(DbpError::Core)?;
        self.loss.validate().map_err(DbpError::Core)?;
        if self.steps == 0 {
            return Err(DbpError::Usage("train.steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DbpError::Usage("train.batch_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(DbpError::Usage("train.seeds must be nonempty".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DbpError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        Self::parse_with_base(text, path, RunConfig::default())
    }

    /// Parses on top of an existing configuration, e.g. a simulator preset
    /// chosen on the command line.
    pub fn parse_with_base(text: &str, path: &str, base: RunConfig) -> Result<Self> {
        let mut cfg = base;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let fail = |msg: String| DbpError::ConfigParse {
                path: path.to_string(),
                line: lineno,
                msg,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(fail(format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            let value = value.trim();
            apply_key(&mut cfg, key, value).map_err(fail)?;
        }
        Ok(cfg)
    }
}

type KeyResult = std::result::Result<(), String>;

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> KeyResult {
    let Some((section, rest)) = key.split_once('.') else {
        return Err(format!("unknown key `{key}`"));
    };
    match section {
        "net" => net_key(&mut cfg.net, rest, value),
        "loss" => loss_key(&mut cfg.loss, rest, value),
        "opt" => opt_key(&mut cfg.optim, rest, value),
        "train" => train_key(cfg, rest, value),
        "sim" => sim_key(&mut cfg.sim, rest, value),
        _ => Err(format!("unknown section `{section}`")),
    }
}

fn parse<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| format!("invalid list element `{s}` for `{key}`"))
        })
        .collect()
}

fn parse_bool(value: &str, key: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid boolean `{value}` for `{key}`")),
    }
}

fn net_key(net: &mut NetConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "input_height" => net.input_height = parse(value, key)?,
        "input_width" => net.input_width = parse(value, key)?,
        "encoder_channels" => net.encoder_channels = parse_list(value, key)?,
        "stem_channels" => net.stem_channels = parse(value, key)?,
        "decoder_channels" => net.decoder_channels = parse_list(value, key)?,
        "rgb_only" => net.rgb_only = parse_bool(value, key)?,
        "depth_scale_mm" => net.depth_scale_mm = parse(value, key)?,
        "logvar_bias" => net.logvar_bias = parse(value, key)?,
        _ => return Err(format!("unknown key `net.{key}`")),
    }
    Ok(())
}

fn loss_key(loss: &mut LossConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "mode" => {
            loss.mode = LossMode::parse(value)
                .ok_or_else(|| format!("invalid loss mode `{value}` (plain|moments|loglik)"))?;
        }
        "lambda_plus" => loss.lambda_plus = parse(value, key)?,
        "lambda_minus" => loss.lambda_minus = parse(value, key)?,
        "lambda_v" => loss.lambda_v = parse(value, key)?,
        _ => return Err(format!("unknown key `loss.{key}`")),
    }
    Ok(())
}

fn opt_key(optim: &mut AdamConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "learning_rate" => optim.learning_rate = parse(value, key)?,
        "lr_decay" => optim.lr_decay = parse(value, key)?,
        "beta1" => optim.beta1 = parse(value, key)?,
        "beta2" => optim.beta2 = parse(value, key)?,
        "epsilon" => optim.epsilon = parse(value, key)?,
        "max_grad_norm" => {
            let v: f64 = parse(value, key)?;
            optim.max_grad_norm = (v > 0.0).then_some(v);
        }
        _ => return Err(format!("unknown key `opt.{key}`")),
    }
    Ok(())
}

fn train_key(cfg: &mut RunConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "batch_size" => cfg.batch_size = parse(value, key)?,
        "steps" => cfg.steps = parse(value, key)?,
        "checkpoint_every" => cfg.checkpoint_every = parse(value, key)?,
        "seeds" => cfg.seeds = parse_list(value, key)?,
        "data" => cfg.train_data = Some(PathBuf::from(value)),
        "objective" => {
            cfg.objective = match value {
                "poke" | "dbp" => Objective::Poke,
                "autoencoder" | "ae" => Objective::Autoencoder,
                _ => return Err(format!("invalid objective `{value}` (poke|autoencoder)")),
            };
        }
        _ => return Err(format!("unknown key `train.{key}`")),
    }
    Ok(())
}

fn material_of(name: &str) -> std::result::Result<Material, String> {
    Material::ALL
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| format!("unknown material `{name}`"))
}

fn sim_key(sim: &mut SimulatorConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "preset" => {
            *sim = match value {
                "consumer" => SimulatorConfig::consumer(),
                "adversarial" => SimulatorConfig::adversarial(),
                _ => return Err(format!("unknown preset `{value}`")),
            };
            return Ok(());
        }
        "height" => sim.height = parse(value, key)?,
        "width" => sim.width = parse(value, key)?,
        "floor_depth_mm" => sim.floor_depth_mm = parse(value, key)?,
        "camera_min_mm" => sim.camera_min_mm = parse(value, key)?,
        "pixel_size_mm" => sim.pixel_size_mm = parse(value, key)?,
        "invalid_pixel_prob" => sim.invalid_pixel_prob = parse(value, key)?,
        "poke_object_bias" => sim.poke_object_bias = parse(value, key)?,
        "material_weights" => {
            let w: Vec<f32> = parse_list(value, key)?;
            if w.len() != 4 {
                return Err("material_weights needs 4 values".into());
            }
            sim.material_weights = [w[0], w[1], w[2], w[3]];
        }
        _ => {
            let (group, rest) = key
                .split_once('.')
                .ok_or_else(|| format!("unknown key `sim.{key}`"))?;
            match group {
                "objects" => match rest {
                    "count_min" => sim.objects.count.0 = parse(value, key)?,
                    "count_max" => sim.objects.count.1 = parse(value, key)?,
                    "box_extent_min_mm" => sim.objects.box_extent_mm.0 = parse(value, key)?,
                    "box_extent_max_mm" => sim.objects.box_extent_mm.1 = parse(value, key)?,
                    "cylinder_radius_min_mm" => {
                        sim.objects.cylinder_radius_mm.0 = parse(value, key)?;
                    }
                    "cylinder_radius_max_mm" => {
                        sim.objects.cylinder_radius_mm.1 = parse(value, key)?;
                    }
                    "height_min_mm" => sim.objects.height_mm.0 = parse(value, key)?,
                    "height_max_mm" => sim.objects.height_mm.1 = parse(value, key)?,
                    "cylinder_prob" => sim.objects.cylinder_prob = parse(value, key)?,
                    _ => return Err(format!("unknown key `sim.objects.{rest}`")),
                },
                "tooltip" => match rest {
                    "compliance_offset_mm" => {
                        sim.tooltip.compliance_offset_mm = parse(value, key)?;
                    }
                    "radius_mm" => sim.tooltip.radius_mm = parse(value, key)?,
                    _ => return Err(format!("unknown key `sim.tooltip.{rest}`")),
                },
                "labels" => match rest {
                    "sigma_success_mm" => sim.labels.sigma_success_mm = parse(value, key)?,
                    "sigma_fail_mm" => sim.labels.sigma_fail_mm = parse(value, key)?,
                    "outlier_prob" => sim.labels.outlier_prob = parse(value, key)?,
                    "outlier_min_mm" => sim.labels.outlier_range_mm.0 = parse(value, key)?,
                    "outlier_max_mm" => sim.labels.outlier_range_mm.1 = parse(value, key)?,
                    _ => return Err(format!("unknown key `sim.labels.{rest}`")),
                },
                "success" => match rest {
                    "base_rate" => sim.success.base_rate = parse(value, key)?,
                    "flatness_weight" => sim.success.flatness_weight = parse(value, key)?,
                    "grip_weight" => sim.success.grip_weight = parse(value, key)?,
                    _ => return Err(format!("unknown key `sim.success.{rest}`")),
                },
                "materials" => {
                    let (mat, field) = rest
                        .split_once('.')
                        .ok_or_else(|| format!("unknown key `sim.materials.{rest}`"))?;
                    let m = &mut sim.materials[material_of(mat)?.index()];
                    match field {
                        "gaussian_noise_std_mm" => m.gaussian_noise_std_mm = parse(value, key)?,
                        "gross_error_prob" => m.gross_error_prob = parse(value, key)?,
                        "gross_error_min_mm" => m.gross_error_range_mm.0 = parse(value, key)?,
                        "gross_error_max_mm" => m.gross_error_range_mm.1 = parse(value, key)?,
                        "gross_far_prob" => m.gross_far_prob = parse(value, key)?,
                        "grip" => m.grip = parse(value, key)?,
                        "label_noise_scale" => m.label_noise_scale = parse(value, key)?,
                        _ => return Err(format!("unknown key `sim.materials.{mat}.{field}`")),
                    }
                }
                _ => return Err(format!("unknown key `sim.{key}`")),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# comment line
net.input_height = 32
net.input_width = 32
net.encoder_channels = 8, 16
net.decoder_channels = 16,8
net.rgb_only = true

loss.mode = loglik
loss.lambda_minus = 0.5
opt.learning_rate = 0.003
opt.max_grad_norm = 10
train.batch_size = 4
train.steps = 100
train.seeds = 3,5,7
train.data = sets/train.dbpd
sim.materials.mirror.gross_error_prob = 0.4
sim.labels.sigma_fail_mm = 25
";
        let cfg = RunConfig::parse(text, "test.cfg").unwrap();
        assert_eq!(cfg.net.input_height, 32);
        assert_eq!(cfg.net.encoder_channels, vec![8, 16]);
        assert!(cfg.net.rgb_only);
        assert_eq!(cfg.loss.mode, LossMode::LogLik);
        assert_eq!(cfg.loss.lambda_minus, 0.5);
        assert_eq!(cfg.optim.learning_rate, 0.003);
        assert_eq!(cfg.optim.max_grad_norm, Some(10.0));
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.seeds, vec![3, 5, 7]);
        assert_eq!(cfg.train_data, Some(PathBuf::from("sets/train.dbpd")));
        assert_eq!(
            cfg.sim.materials[Material::Mirror.index()].gross_error_prob,
            0.4
        );
        assert_eq!(cfg.sim.labels.sigma_fail_mm, 25.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = RunConfig::parse("train.steps = 10\nnopes.x = 1\n", "f.cfg").unwrap_err();
        match err {
            DbpError::ConfigParse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("unknown"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("train.what = 1", "f.cfg").is_err());
        assert!(RunConfig::parse("sim.materials.glass.grip = 1", "f.cfg").is_err());
    }

    #[test]
    fn malformed_values_are_rejected() {
        assert!(RunConfig::parse("train.steps = soon", "f.cfg").is_err());
        assert!(RunConfig::parse("loss.mode = sometimes", "f.cfg").is_err());
        assert!(RunConfig::parse("net.rgb_only = maybe", "f.cfg").is_err());
        assert!(RunConfig::parse("just a line", "f.cfg").is_err());
    }

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }
}
