//! Model configuration: variant selection, cascade depth, working width,
//! backbone width multiplier and the ablation switches.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Heavy,
    Medium,
    Light,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "heavy" => Ok(Variant::Heavy),
            "medium" => Ok(Variant::Medium),
            "light" => Ok(Variant::Light),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected heavy, medium or light)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Heavy => "heavy",
            Variant::Medium => "medium",
            Variant::Light => "light",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// cascade truncation; values below 3 are only defined for the heavy
    /// variant (the reduced variants are themselves stage deletions)
    pub stages: usize,
    /// working channel count after channel pruning
    pub c: usize,
    /// backbone width multiplier in (0, 1]
    pub mu: f64,
    pub num_classes: usize,
    pub spfm_enabled: bool,
    pub attention_enabled: bool,
    pub fuse_conv1x1_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Heavy,
            stages: 3,
            c: 16,
            mu: 0.25,
            num_classes: 6,
            spfm_enabled: true,
            attention_enabled: true,
            fuse_conv1x1_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > 3 {
            return Err(Error::Config(format!(
                "stages must be 1..=3, got {}",
                self.stages
            )));
        }
        if self.variant != Variant::Heavy && self.stages != 3 {
            return Err(Error::Config(format!(
                "variant {} does not support stage truncation (stages = {})",
                self.variant.name(),
                self.stages
            )));
        }
        if self.c == 0 {
            return Err(Error::Config("c must be >= 1".into()));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!("mu must be in (0, 1], got {}", self.mu)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Path index of the stage's pyramid-fusion input: 3 = 32x down to
    /// 1 = 8x (path 0 is the 4x map).
    pub fn spfm_path(stage: usize) -> usize {
        3 - stage
    }

    /// The highest-resolution path each stage fuses down to.
    pub fn fuse_to(&self, stage: usize) -> usize {
        match self.variant {
            Variant::Heavy => 0,
            Variant::Medium => [1, 1, 0][stage],
            Variant::Light => [2, 1, 0][stage],
        }
    }

    /// One `key = value` assignment; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = Variant::parse(value)?,
            "stages" => self.stages = parse_num(key, value)?,
            "c" => self.c = parse_num(key, value)?,
            "mu" => self.mu = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "spfm_enabled" => self.spfm_enabled = parse_bool(key, value)?,
            "attention_enabled" => self.attention_enabled = parse_bool(key, value)?,
            "fuse_conv1x1_enabled" => self.fuse_conv1x1_enabled = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown model config key '{other}'"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.name().into()),
            ("stages".into(), self.stages.to_string()),
            ("c".into(), self.c.to_string()),
            ("mu".into(), format_f64(self.mu)),
            ("num_classes".into(), self.num_classes.to_string()),
            ("spfm_enabled".into(), self.spfm_enabled.to_string()),
            ("attention_enabled".into(), self.attention_enabled.to_string()),
            (
                "fuse_conv1x1_enabled".into(),
                self.fuse_conv1x1_enabled.to_string(),
            ),
        ]
    }
}

pub fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "invalid boolean '{other}' for key '{key}'"
        ))),
    }
}

pub fn format_f64(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
        s
    } else {
        format!("{s}.0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_variants_reject_truncation() {
        let mut cfg = ModelConfig {
            variant: Variant::Medium,
            stages: 2,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.stages = 3;
        assert!(cfg.validate().is_ok());
        cfg.variant = Variant::Heavy;
        cfg.stages = 1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.set("variannt", "light").is_err());
        assert!(cfg.set("variant", "light").is_ok());
        assert_eq!(cfg.variant, Variant::Light);
    }

    #[test]
    fn entries_round_trip_through_set() {
        let cfg = ModelConfig {
            variant: Variant::Light,
            stages: 3,
            c: 24,
            mu: 0.5,
            num_classes: 11,
            spfm_enabled: false,
            attention_enabled: true,
            fuse_conv1x1_enabled: false,
        };
        let mut back = ModelConfig::default();
        for (k, v) in cfg.entries() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(cfg, back);
    }
}
