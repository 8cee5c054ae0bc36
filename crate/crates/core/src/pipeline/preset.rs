use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::gridenc::GridConfig;
use crate::optim::AdamHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneMode {
    /// Rays clipped to the scene box (360° captures).
    #[serde(rename = "aabb-360")]
    Aabb360,
    /// Rays warped to NDC (forward-facing captures).
    #[serde(rename = "ndc-forward")]
    NdcForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSettings {
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Head width; `2 * hidden_size` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub grid_lr: f64,
    pub decoder_lr: f64,
    /// Learning rates decay exponentially to this fraction over `total_steps`.
    pub final_lr_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_lr: 1e-2,
            decoder_lr: 1e-3,
            final_lr_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn grid_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.grid_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn decoder_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.decoder_lr,
            ..self.grid_hyper()
        }
    }

    /// Scale applied to both learning rates at `step`.
    pub fn lr_scale(&self, step: u64, total: u64) -> f64 {
        if total == 0 {
            return 1.0;
        }
        self.final_lr_factor.powf((step as f64 / total as f64).min(1.0))
    }
}

/// Every knob of a run: architecture, sampling, optimization and cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub name: String,
    pub grid: GridConfig,
    pub decoder: DecoderSettings,
    /// Samples per ray (`K`).
    pub seq_len: usize,
    pub scene_mode: SceneMode,
    pub background: [f32; 3],
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub val_every: u64,
    pub val_views: usize,
    pub val_scale: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
}

pub const PRESET_NAMES: [&str; 4] = ["small", "medium", "large", "tiny-test"];

impl PresetConfig {
    pub fn small() -> Self {
        Self {
            name: "small".into(),
            grid: GridConfig {
                levels: 8,
                r_min: 16,
                r_max: 1024,
                feature_dim: 2,
                table_cap: 1 << 14,
            },
            decoder: DecoderSettings {
                hidden_size: 32,
                num_layers: 2,
                mlp_hidden: None,
            },
            seq_len: 256,
            scene_mode: SceneMode::Aabb360,
            background: [1.0; 3],
            optimizer: OptimizerConfig::default(),
            batch_size: 1024,
            total_steps: 30_000,
            seed: 0,
            val_every: 1000,
            val_views: 4,
            val_scale: 2,
            checkpoint_every: 5000,
        }
    }

    pub fn medium() -> Self {
        let mut p = Self::small();
        p.name = "medium".into();
        p.decoder.hidden_size = 128;
        p
    }

    pub fn large() -> Self {
        let mut p = Self::small();
        p.name = "large".into();
        p.grid = GridConfig {
            levels: 16,
            r_min: 16,
            r_max: 2048,
            feature_dim: 2,
            table_cap: 1 << 16,
        };
        p.decoder.hidden_size = 128;
        p.decoder.num_layers = 3;
        p
    }

    /// Desk-scale preset for 64×64 toy scenes.
    pub fn tiny_test() -> Self {
        Self {
            name: "tiny-test".into(),
            grid: GridConfig {
                levels: 4,
                r_min: 16,
                r_max: 128,
                feature_dim: 2,
                table_cap: 1 << 12,
            },
            decoder: DecoderSettings {
                hidden_size: 32,
                num_layers: 2,
                mlp_hidden: None,
            },
            seq_len: 64,
            scene_mode: SceneMode::Aabb360,
            background: [0.0; 3],
            optimizer: OptimizerConfig::default(),
            batch_size: 128,
            total_steps: 4000,
            seed: 0,
            val_every: 1000,
            val_views: 4,
            val_scale: 1,
            checkpoint_every: 0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "medium" => Ok(Self::medium()),
            "large" => Ok(Self::large()),
            "tiny-test" => Ok(Self::tiny_test()),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?}; expected one of {PRESET_NAMES:?}"
            ))),
        }
    }

    /// Forward-facing variant: NDC sampling with 128 samples per ray.
    pub fn forward_facing(mut self) -> Self {
        self.scene_mode = SceneMode::NdcForward;
        self.seq_len = 128;
        self.background = [0.0; 3];
        self
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let mut cfg = DecoderConfig::new(
            self.decoder.hidden_size,
            self.decoder.num_layers,
            self.grid.point_feature_dim(),
        );
        if let Some(m) = self.decoder.mlp_hidden {
            cfg.mlp_hidden = m;
        }
        cfg
    }

    pub fn parameter_count(&self) -> usize {
        self.grid.parameter_count() + self.decoder_config().parameter_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.decoder_config().validate()?;
        self.optimizer.grid_hyper().validate()?;
        self.optimizer.decoder_hyper().validate()?;
        if self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("seq_len and batch_size must be >= 1".into()));
        }
        if ![1, 2, 4, 8].contains(&self.val_scale) {
            return Err(Error::Config(format!("val_scale {} not in {{1, 2, 4, 8}}", self.val_scale)));
        }
        if !(self.optimizer.final_lr_factor > 0.0) {
            return Err(Error::Config("optimizer.final_lr_factor must be positive".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Parses a TOML config. The file may name a base preset in `name`; every
    /// other field present overrides it. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let base_name = file.get("name").and_then(|v| v.as_str()).unwrap_or("small");
        let mut base = toml::Table::try_from(Self::by_name(base_name)?).expect("preset serializes");
        merge(&mut base, file);
        Self::from_table(base)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key.path=value` overrides. Values parse as TOML literals and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("preset serializes");
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_dotted(&mut table, key.trim(), value)?;
        }
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("preset serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_invariants() {
        let s = PresetConfig::small();
        assert_eq!(s.grid.levels, 8);
        assert_eq!((s.grid.r_min, s.grid.r_max, s.grid.table_cap), (16, 1024, 1 << 14));
        assert_eq!(s.seq_len, 256);
        assert_eq!(s.decoder_config().parameter_count(), 23_299);
        assert_eq!(s.parameter_count(), 472_146 + 23_299);
        let m = PresetConfig::medium();
        assert_eq!((m.grid, m.decoder.hidden_size, m.decoder.num_layers), (s.grid, 128, 2));
        let l = PresetConfig::large();
        assert_eq!((l.grid.levels, l.grid.r_max, l.grid.table_cap), (16, 2048, 1 << 16));
        assert_eq!((l.decoder.hidden_size, l.decoder.num_layers), (128, 3));
        assert_eq!(s.clone().forward_facing().seq_len, 128);
        for name in PRESET_NAMES {
            PresetConfig::by_name(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let p = PresetConfig::tiny_test()
            .with_overrides(&["decoder.hidden_size=16", "optimizer.grid_lr = 0.05", "scene_mode=ndc-forward"])
            .unwrap();
        assert_eq!(p.decoder.hidden_size, 16);
        assert_eq!(p.optimizer.grid_lr, 0.05);
        assert_eq!(p.scene_mode, SceneMode::NdcForward);
        assert!(PresetConfig::tiny_test().with_overrides(&["decoder.width=3"]).is_err());
        assert!(PresetConfig::tiny_test().with_overrides(&["grid.table_cap=1000"]).is_err());
        assert!(PresetConfig::tiny_test().with_overrides(&["nonsense"]).is_err());
    }

    #[test]
    fn toml_file_overrides_named_base() {
        let p = PresetConfig::from_toml_str("name = \"tiny-test\"\nseq_len = 32\n[optimizer]\ndecoder_lr = 0.002\n").unwrap();
        assert_eq!(p.seq_len, 32);
        assert_eq!(p.optimizer.decoder_lr, 0.002);
        assert_eq!(p.grid, PresetConfig::tiny_test().grid);
        assert!(PresetConfig::from_toml_str("name = \"tiny-test\"\nbogus = 1\n").is_err());
        let round = PresetConfig::from_toml_str(&PresetConfig::large().to_toml_string()).unwrap();
        assert_eq!(round, PresetConfig::large());
    }

    #[test]
    fn lr_schedule() {
        let o = OptimizerConfig::default();
        assert_eq!(o.lr_scale(0, 100), 1.0);
        assert!((o.lr_scale(100, 100) - 0.1).abs() < 1e-12);
        assert!((o.lr_scale(50, 100) - 0.1f64.sqrt()).abs() < 1e-12);
    }
}
