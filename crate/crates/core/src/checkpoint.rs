//! Versioned binary checkpoint container.
//!
//! Layout (little endian): magic, format version, scalar type name, config
//! text, step, named RNG word positions, named float blobs, then a SHA-256 of
//! everything before it. Blob values are stored as `f64`, which holds `f32`
//! exactly, so both scalar types round-trip bit for bit.

use std::fs;
use std::path::Path;

use hiskel_autodiff::{Parameter, Real};
use sha2::{Digest, Sha256};

use crate::config::{config_hash, KvConfig};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::optim::{Adam, AdamConfig, Moments};

pub const MAGIC: &[u8; 8] = b"HSKLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    /// `f32` or `f64`
    pub scalar: String,
    /// Canonical config text (model and training keys).
    pub config_text: String,
    pub step: u64,
    pub rng: Vec<(String, u128)>,
    pub params: Vec<Blob>,
    pub optimizer: Vec<Blob>,
}

impl Checkpoint {
    pub fn config(&self) -> Result<KvConfig> {
        KvConfig::parse(&self.config_text)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::default();
        m.read_kv(&self.config()?)?;
        Ok(m)
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config_text)
    }

    /// Errors with the first differing architecture field.
    pub fn ensure_compatible(&self, requested: &ModelConfig) -> Result<()> {
        match self.model_config()?.first_difference(requested) {
            None => Ok(()),
            Some((field, found, requested)) => Err(Error::Incompatible { field, found, requested }),
        }
    }

    pub fn rng_position(&self, name: &str) -> Option<u128> {
        self.rng.iter().find(|(n, _)| n == name).map(|&(_, p)| p)
    }

    pub fn param(&self, name: &str) -> Option<&Blob> {
        self.params.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&self.format_version.to_le_bytes());
        put_str(&mut w, &self.scalar);
        put_str(&mut w, &self.config_text);
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&(self.rng.len() as u32).to_le_bytes());
        for (name, pos) in &self.rng {
            put_str(&mut w, name);
            w.extend_from_slice(&pos.to_le_bytes());
        }
        for blobs in [&self.params, &self.optimizer] {
            w.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
            for b in blobs.iter() {
                put_str(&mut w, &b.name);
                w.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
                for &d in &b.shape {
                    w.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in &b.data {
                    w.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut r = Reader { buf: &bytes[..bytes.len() - 32], at: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        if Sha256::digest(r.buf).as_slice() != &bytes[bytes.len() - 32..] {
            return Err(bad("checksum mismatch; the file is corrupt or truncated"));
        }
        let scalar = r.string()?;
        let config_text = r.string()?;
        let step = r.u64()?;
        let mut rng = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            rng.push((name, u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"))));
        }
        let mut groups = [Vec::new(), Vec::new()];
        for group in &mut groups {
            for _ in 0..r.u32()? {
                let name = r.string()?;
                let rank = r.u32()? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
                }
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("size overflow"))?;
                if n.checked_mul(8).is_none_or(|len| len > r.remaining()) {
                    return Err(bad("blob extends past end of file"));
                }
                let data = r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                group.push(Blob { name, shape, data });
            }
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes"));
        }
        let [params, optimizer] = groups;
        let ck = Checkpoint { format_version: version, scalar, config_text, step, rng, params, optimizer };
        ck.config()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        // Write to a sibling file first so a crash never leaves half a checkpoint.
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ck.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.at
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

pub fn param_blobs<F: Real, M: Module<F> + ?Sized>(model: &M) -> Vec<Blob> {
    let mut out = Vec::new();
    model.visit(&mut |p: &Parameter<F>| {
        out.push(Blob {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
            data: p.value().iter().map(|v| v.to_f64().expect("real")).collect(),
        })
    });
    out
}

pub fn optimizer_blobs<F: Real>(opt: &Adam<F>) -> Vec<Blob> {
    let f = |v: &[F]| v.iter().map(|x| x.to_f64().expect("real")).collect::<Vec<f64>>();
    opt.slots
        .iter()
        .flat_map(|s| {
            [
                Blob { name: format!("m.{}", s.name), shape: vec![s.m.len()], data: f(&s.m) },
                Blob { name: format!("v.{}", s.name), shape: vec![s.v.len()], data: f(&s.v) },
            ]
        })
        .collect()
}

/// Copies stored values into every parameter of `model` whose name passes
/// `filter`. Missing or misshapen blobs are errors; nothing is written
/// unless every selected parameter is available.
pub fn restore_params<F: Real, M: Module<F> + ?Sized>(model: &mut M, ck: &Checkpoint, filter: impl Fn(&str) -> bool) -> Result<usize> {
    let mut problem = None;
    model.visit(&mut |p: &Parameter<F>| {
        if problem.is_some() || !filter(p.name()) {
            return;
        }
        match ck.param(p.name()) {
            None => problem = Some(format!("checkpoint has no parameter '{}'", p.name())),
            Some(b) if b.shape != p.shape() => {
                problem = Some(format!("parameter '{}' has shape {:?} in the checkpoint, {:?} in the model", p.name(), b.shape, p.shape()))
            }
            Some(_) => {}
        }
    });
    if let Some(m) = problem {
        return Err(Error::Checkpoint(m));
    }
    let mut count = 0;
    let mut failure = None;
    model.visit_mut(&mut |p: &mut Parameter<F>| {
        if failure.is_some() || !filter(p.name()) {
            return;
        }
        let b = ck.param(p.name()).expect("checked above");
        if let Err(e) = p.set_value(b.data.iter().map(|&v| F::lit(v)).collect()) {
            failure = Some(e);
        }
        count += 1;
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(count),
    }
}

pub fn restore_optimizer<F: Real, M: Module<F> + ?Sized>(model: &M, ck: &Checkpoint, config: AdamConfig) -> Result<Adam<F>> {
    let mut opt = Adam::new(config, model);
    opt.step = ck.step;
    let find = |n: String| ck.optimizer.iter().find(|b| b.name == n);
    for Moments { name, m, v } in &mut opt.slots {
        let (Some(bm), Some(bv)) = (find(format!("m.{name}")), find(format!("v.{name}"))) else {
            return Err(Error::Checkpoint(format!("optimizer state for '{name}' is missing")));
        };
        if bm.data.len() != m.len() || bv.data.len() != v.len() {
            return Err(Error::Checkpoint(format!("optimizer state for '{name}' has the wrong size")));
        }
        *m = bm.data.iter().map(|&x| F::lit(x)).collect();
        *v = bv.data.iter().map(|&x| F::lit(x)).collect();
    }
    Ok(opt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut kv = KvConfig::new();
        ModelConfig::tiny().write_kv(&mut kv);
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            scalar: "f64".into(),
            config_text: kv.render(),
            step: 7,
            rng: vec![("sampling".into(), 123456789012345678901234567u128)],
            params: vec![Blob { name: "w".into(), shape: vec![2, 2], data: vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300] }],
            optimizer: vec![Blob { name: "m.w".into(), shape: vec![4], data: vec![1.0; 4] }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params[0].data[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.model_config().unwrap(), ModelConfig::tiny());
    }

    #[test]
    fn damage_is_detected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
        let mut versioned = bytes;
        versioned[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&versioned), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn incompatibility_names_the_field() {
        let ck = sample();
        let mut other = ModelConfig::tiny();
        other.dim_c = 99;
        match ck.ensure_compatible(&other) {
            Err(Error::Incompatible { field, .. }) => assert!(field.contains("dim_c")),
            e => panic!("{e:?}"),
        }
    }
}
