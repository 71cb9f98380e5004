use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgan::{FdGanConfig, Variant};
use crate::landmarks::NUM_LANDMARKS;
use crate::ldnet::LdNetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Ldnet1,
    Ldnet2,
    Fdgan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Paper,
}

macro_rules! string_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

string_enum!(StageKind, "stage", StageKind::Ldnet1 => "ldnet1", StageKind::Ldnet2 => "ldnet2", StageKind::Fdgan => "fdgan");
string_enum!(OptimizerKind, "optimizer", OptimizerKind::Adam => "adam", OptimizerKind::Rmsprop => "rmsprop");
string_enum!(Profile, "profile", Profile::Toy => "toy", Profile::Paper => "paper");

/// LD-Net architecture knobs that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdNetArch {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pose_code: usize,
    pub identity_code: usize,
    pub leaky_slope: f64,
}

impl LdNetArch {
    pub fn network(&self, num_identities: usize) -> LdNetConfig {
        LdNetConfig {
            num_points: NUM_LANDMARKS,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            pose_code: self.pose_code,
            identity_code: self.identity_code,
            num_identities,
            leaky_slope: self.leaky_slope,
        }
    }
}

/// FD-GAN architecture knobs that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGanArch {
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub rows: Vec<usize>,
    pub tag_len: usize,
    pub variant: Variant,
    pub leaky_slope: f64,
}

impl FdGanArch {
    pub fn network(&self, num_identities: usize) -> FdGanConfig {
        FdGanConfig {
            image_size: self.image_size,
            widths: self.widths.clone(),
            rows: self.rows.clone(),
            tag_len: self.tag_len,
            num_identities,
            variant: self.variant,
            leaky_slope: self.leaky_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: StageKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub scale_profile: Profile,
    /// Loss history cadence in iterations.
    pub log_every: u64,
    pub ldnet: LdNetArch,
    pub fdgan: FdGanArch,
}

impl TrainConfig {
    /// Defaults for a stage under a scale profile.
    pub fn profile(stage: StageKind, profile: Profile) -> Self {
        let (optimizer, learning_rate, batch_size, iterations) = match (profile, stage) {
            (Profile::Paper, StageKind::Ldnet1) => (OptimizerKind::Adam, 1e-4, 32, 400_000),
            (Profile::Paper, StageKind::Ldnet2) => (OptimizerKind::Adam, 5e-5, 32, 1_000_000),
            (Profile::Paper, StageKind::Fdgan) => (OptimizerKind::Rmsprop, 2e-5, 4, 1_000_000),
            (Profile::Toy, StageKind::Ldnet1) => (OptimizerKind::Adam, 1e-3, 16, 2_000),
            (Profile::Toy, StageKind::Ldnet2) => (OptimizerKind::Adam, 5e-4, 16, 2_000),
            (Profile::Toy, StageKind::Fdgan) => (OptimizerKind::Rmsprop, 1e-3, 2, 600),
        };
        let ldnet = match profile {
            Profile::Paper => LdNetArch {
                hidden_layers: 10,
                hidden_width: 512,
                pose_code: 64,
                identity_code: 128,
                leaky_slope: 0.2,
            },
            Profile::Toy => LdNetArch {
                hidden_layers: 3,
                hidden_width: 128,
                pose_code: 64,
                identity_code: 128,
                leaky_slope: 0.2,
            },
        };
        let fdgan = match profile {
            Profile::Paper => FdGanArch {
                image_size: 256,
                widths: vec![32, 64, 128, 256],
                rows: vec![512, 256, 128, 64],
                tag_len: 32,
                variant: Variant::Full,
                leaky_slope: 0.2,
            },
            Profile::Toy => FdGanArch {
                image_size: 64,
                widths: vec![8, 16, 32, 64],
                rows: vec![64, 32, 16, 8],
                tag_len: 16,
                variant: Variant::Full,
                leaky_slope: 0.2,
            },
        };
        TrainConfig {
            stage,
            optimizer,
            learning_rate,
            batch_size,
            iterations,
            seed: 0,
            checkpoint_every: iterations,
            scale_profile: profile,
            log_every: match profile {
                Profile::Toy => 1,
                Profile::Paper => 100,
            },
            ldnet,
            fdgan,
        }
    }

    /// Flat `key = value` view, the form used by config files, overrides and
    /// manifests.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("stage", self.stage.to_string());
        put("optimizer", self.optimizer.to_string());
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("batch_size", self.batch_size.to_string());
        put("iterations", self.iterations.to_string());
        put("seed", self.seed.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("scale_profile", self.scale_profile.to_string());
        put("log_every", self.log_every.to_string());
        put("ldnet.hidden_layers", self.ldnet.hidden_layers.to_string());
        put("ldnet.hidden_width", self.ldnet.hidden_width.to_string());
        put("ldnet.pose_code", self.ldnet.pose_code.to_string());
        put("ldnet.identity_code", self.ldnet.identity_code.to_string());
        put("ldnet.leaky_slope", format!("{:?}", self.ldnet.leaky_slope));
        put("fdgan.image_size", self.fdgan.image_size.to_string());
        put("fdgan.widths", list(&self.fdgan.widths));
        put("fdgan.rows", list(&self.fdgan.rows));
        put("fdgan.tag_len", self.fdgan.tag_len.to_string());
        put("fdgan.variant", self.fdgan.variant.to_string());
        put("fdgan.leaky_slope", format!("{:?}", self.fdgan.leaky_slope));
        m
    }

    /// Overrides one flat key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|x| num(key, x)).collect()
        }
        let v = value.trim();
        match key {
            "stage" => self.stage = v.parse()?,
            "optimizer" => self.optimizer = v.parse()?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "scale_profile" => self.scale_profile = v.parse()?,
            "log_every" => self.log_every = num(key, v)?,
            "ldnet.hidden_layers" => self.ldnet.hidden_layers = num(key, v)?,
            "ldnet.hidden_width" => self.ldnet.hidden_width = num(key, v)?,
            "ldnet.pose_code" => self.ldnet.pose_code = num(key, v)?,
            "ldnet.identity_code" => self.ldnet.identity_code = num(key, v)?,
            "ldnet.leaky_slope" => self.ldnet.leaky_slope = num(key, v)?,
            "fdgan.image_size" => self.fdgan.image_size = num(key, v)?,
            "fdgan.widths" => self.fdgan.widths = list(key, v)?,
            "fdgan.rows" => self.fdgan.rows = list(key, v)?,
            "fdgan.tag_len" => self.fdgan.tag_len = num(key, v)?,
            "fdgan.variant" => self.fdgan.variant = v.parse()?,
            "fdgan.leaky_slope" => self.fdgan.leaky_slope = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::Config("checkpoint_every and log_every must be positive".into()));
        }
        Ok(())
    }
}
