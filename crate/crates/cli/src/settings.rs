//! The resolved key=value configuration shared by every command.

use std::path::PathBuf;
use std::str::FromStr;

use hiskel_core::config::KvConfig;
use hiskel_core::data::Stream;
use hiskel_core::pretext::Levels;
use hiskel_core::train::Task;
use hiskel_core::{ModelConfig, Result, TrainConfig};

pub const ALL_SUBSETS: &str = "-,F,C,V,F+C,F+V,C+V,F+C+V";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be f32 or f64, got '{s}'")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub precision: Precision,
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Resample every loaded sequence to this many frames; 0 keeps lengths.
    pub frames: usize,
    /// Unset means "whatever the checkpoint was trained for" (eval only).
    pub task: Option<Task>,
    pub stream: Option<Stream>,
    pub from_checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub fuse: Vec<PathBuf>,
    pub subsets: Vec<Levels>,
}

fn absolute(p: &str) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| PathBuf::from(p))
}

fn paths(list: &str) -> Vec<PathBuf> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(absolute).collect()
}

fn path_key(kv: &KvConfig, key: &str) -> Result<Option<PathBuf>> {
    Ok(kv.get::<String>(key)?.filter(|s| !s.is_empty()).map(|s| absolute(&s)))
}

impl Settings {
    /// Reads every known key; anything left over is a config error.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut seed = 0;
        kv.read_into("seed", &mut seed)?;
        let mut precision = Precision::F32;
        kv.read_into("precision", &mut precision)?;
        let mut model = ModelConfig::default();
        model.read_kv(kv)?;
        model.validate()?;
        let mut pretrain = TrainConfig::pretrain();
        pretrain.read_kv(kv, "pretrain")?;
        let mut finetune = TrainConfig::finetune();
        finetune.read_kv(kv, "finetune")?;
        let subsets = kv
            .get::<String>("ablate.subsets")?
            .unwrap_or_else(|| ALL_SUBSETS.to_string())
            .split(',')
            .map(|s| s.parse::<Levels>())
            .collect::<Result<Vec<_>>>()?;
        let s = Settings {
            precision,
            seed,
            model,
            pretrain,
            finetune,
            train_data: path_key(kv, "data.train")?,
            test_data: path_key(kv, "data.test")?,
            frames: kv.get("data.frames")?.unwrap_or(0),
            task: kv.get("task")?,
            stream: kv.get("stream")?,
            from_checkpoint: path_key(kv, "finetune.from")?,
            resume: path_key(kv, "pretrain.resume")?,
            fuse: kv.get::<String>("eval.fuse")?.map_or_else(Vec::new, |v| paths(&v)),
            subsets,
        };
        kv.ensure_all_used()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("precision", self.precision);
        self.model.write_kv(&mut kv);
        self.pretrain.write_kv(&mut kv, "pretrain");
        self.finetune.write_kv(&mut kv, "finetune");
        kv.set("seed", self.seed);
        let subsets: Vec<String> = self.subsets.iter().map(|l| l.to_string()).collect();
        kv.set("ablate.subsets", subsets.join(","));
        kv.set("data.frames", self.frames);
        let mut path = |k: &str, p: &Option<PathBuf>| {
            if let Some(p) = p {
                kv.set(k, p.display());
            }
        };
        path("data.train", &self.train_data);
        path("data.test", &self.test_data);
        path("finetune.from", &self.from_checkpoint);
        path("pretrain.resume", &self.resume);
        if !self.fuse.is_empty() {
            let list: Vec<String> = self.fuse.iter().map(|p| p.display().to_string()).collect();
            kv.set("eval.fuse", list.join(","));
        }
        if let Some(t) = self.task {
            kv.set("task", t);
        }
        if let Some(s) = self.stream {
            kv.set("stream", s.name());
        }
        kv
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }

    pub fn stream(&self) -> Stream {
        self.stream.unwrap_or_default()
    }
}
