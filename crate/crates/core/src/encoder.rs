//! Three-level skeleton encoder.
//!
//! * frame level: joints of one frame attend to each other;
//! * clip level: the joints of a `W`-frame window plus a `[CLS]` token, where
//!   two different joints of the same frame never attend to each other;
//! * video level: one token per clip plus a `[CLS]` token.
//!
//! Every stage works on a batch. Because the frame stage never mixes frames,
//! clips can be cut from its output instead of re-encoding cropped inputs.

use hiskel_autodiff::{Mask, Parameter, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::data::{clip_starts, SkeletonSequence};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module, TransformerStack};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_k: usize,
    pub dim_f: usize,
    pub dim_c: usize,
    pub dim_v: usize,
    pub ffn_expansion: usize,
    pub window: usize,
    pub stride: usize,
    pub max_frames: usize,
    pub max_joints: usize,
    pub max_clips: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 8,
            d_k: 64,
            dim_f: 128,
            dim_c: 256,
            dim_v: 512,
            ffn_expansion: 4,
            window: 8,
            stride: 4,
            max_frames: 256,
            max_joints: 25,
            max_clips: 64,
            init_std: 0.02,
        }
    }
}

macro_rules! model_keys {
    ($m:ident) => {
        $m!(layers, heads, d_k, dim_f, dim_c, dim_v, ffn_expansion, window, stride, max_frames, max_joints, max_clips, init_std)
    };
}

impl ModelConfig {
    /// Small geometry for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelConfig { layers: 1, heads: 2, d_k: 4, dim_f: 8, dim_c: 16, dim_v: 32, window: 4, stride: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.layers,
            self.heads,
            self.d_k,
            self.dim_f,
            self.dim_c,
            self.dim_v,
            self.ffn_expansion,
            self.window,
            self.stride,
            self.max_frames,
            self.max_joints,
            self.max_clips,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.max_joints < 2 || self.max_clips < 2 {
            return Err(Error::Config("max_joints and max_clips must be at least 2".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        Ok(())
    }

    pub fn read_kv(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! read {
            ($($f:ident),*) => { $( kv.read_into(concat!("model.", stringify!($f)), &mut self.$f)?; )* };
        }
        model_keys!(read);
        self.validate()
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        macro_rules! write {
            ($($f:ident),*) => { $( kv.set(concat!("model.", stringify!($f)), self.$f); )* };
        }
        model_keys!(write);
    }

    /// First field that differs from `other`, as (name, ours, theirs).
    pub fn first_difference(&self, other: &ModelConfig) -> Option<(String, String, String)> {
        let (mut a, mut b) = (KvConfig::new(), KvConfig::new());
        self.write_kv(&mut a);
        other.write_kv(&mut b);
        let diff = a.entries().zip(b.entries()).find(|(x, y)| x.1 != y.1);
        diff.map(|(x, y)| (x.0.to_string(), x.1.to_string(), y.1.to_string()))
    }

    pub fn num_clips(&self, num_frames: usize) -> Result<usize> {
        Ok(clip_starts(num_frames, self.window, self.stride)?.len())
    }
}

/// Visibility pattern for one clip of `width` frames and `joints` joints.
/// Token 0 is `[CLS]`; token `1 + f * joints + j` is joint `j` of frame `f`.
/// Distinct joints of the same frame are hidden from each other; everything
/// else, including a token attending to itself, stays visible.
pub fn clip_attention_mask(width: usize, joints: usize) -> Mask {
    let l = 1 + width * joints;
    Mask::from_fn(l, l, |a, b| a == 0 || b == 0 || a == b || (a - 1) / joints != (b - 1) / joints)
}

/// Attention weights recorded during a forward pass, one tensor per layer,
/// each shaped `[items * heads, tokens, tokens]`.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace<F: Real> {
    pub frame: Vec<Tensor<F>>,
    pub clip: Vec<Tensor<F>>,
    pub video: Vec<Tensor<F>>,
}

#[derive(Debug, Clone)]
pub struct ClipOutput<F: Real> {
    /// `[M, dim_c]`
    pub cls: Tensor<F>,
    /// `[M, 1 + width * J, dim_c]`, `[CLS]` first.
    pub hidden: Tensor<F>,
    pub attention: Vec<Tensor<F>>,
}

#[derive(Debug, Clone)]
pub struct VideoOutput<F: Real> {
    /// `[B, dim_v]`
    pub video: Tensor<F>,
    /// `[B, 1 + N, dim_v]`, `[CLS]` first.
    pub hidden: Tensor<F>,
    pub attention: Vec<Tensor<F>>,
}

/// Batch encoding.
#[derive(Debug, Clone)]
pub struct Encoding<F: Real> {
    /// `[B, T, J, dim_f]`
    pub spatial: Tensor<F>,
    /// `[B, N, dim_c]`
    pub clip_embeddings: Tensor<F>,
    /// `[B, dim_v]`
    pub video: Tensor<F>,
    pub trace: AttentionTrace<F>,
}

/// Encoding of one sequence.
#[derive(Debug, Clone)]
pub struct EncodedSequence<F: Real> {
    /// `[T, J, dim_f]`
    pub spatial: Tensor<F>,
    /// `[N, dim_c]`
    pub clip_embeddings: Tensor<F>,
    /// `[dim_v]`
    pub video_embedding: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct HierarchicalEncoder<F: Real> {
    config: ModelConfig,
    pub joint_embed: Linear<F>,
    pub pos_f: Parameter<F>,
    pub ftrs: TransformerStack<F>,
    pub proj_c: Linear<F>,
    pub pos_c: Parameter<F>,
    pub cls_c: Parameter<F>,
    pub ctrs: TransformerStack<F>,
    pub proj_v: Linear<F>,
    pub pos_v: Parameter<F>,
    pub cls_v: Parameter<F>,
    pub vtrs: TransformerStack<F>,
    clip_mask: bool,
}

/// Stacked coordinates `[B, T, J, 3]`; all sequences must share `T` and `J`.
pub fn coords_tensor<F: Real>(seqs: &[&SkeletonSequence]) -> Result<Tensor<F>> {
    let first = seqs.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
    let (t, j) = (first.num_frames(), first.num_joints());
    if let Some(bad) = seqs.iter().find(|s| s.num_frames() != t || s.num_joints() != j) {
        return Err(Error::Argument(format!(
            "batch mixes shapes: T={t} J={j} and T={} J={}",
            bad.num_frames(),
            bad.num_joints()
        )));
    }
    let data = seqs.iter().flat_map(|s| s.points().iter().flatten().map(|&v| F::lit(v))).collect();
    Ok(Tensor::new(&[seqs.len(), t, j, 3], data)?)
}

fn dims4<F: Real>(x: &Tensor<F>) -> Result<[usize; 4]> {
    match *x.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Argument(format!("expected a rank-4 tensor, got shape {:?}", x.shape()))),
    }
}

/// `[M, L, D] -> [M, 1 + L, D]` with the learnable token first.
fn prepend_cls<F: Real>(x: &Tensor<F>, cls: &Parameter<F>) -> Result<Tensor<F>> {
    let (m, d) = (x.shape()[0], x.shape()[2]);
    let c = cls.tensor().select_rows(&vec![0; m])?.reshape(&[m, 1, d])?;
    Ok(Tensor::cat(&[c, x.clone()], 1)?)
}

/// Row 0 of every item: `[M, L, D] -> [M, D]`.
fn first_token<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let rows: Vec<usize> = (0..m).map(|i| i * l).collect();
    Ok(x.reshape(&[m * l, d])?.select_rows(&rows)?)
}

impl<F: Real> HierarchicalEncoder<F> {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut init = Init::new(rng, c.init_std);
        let stack = |name: &str, dim: usize, init: &mut Init<'_>| {
            TransformerStack::new(name, c.layers, dim, c.heads, c.d_k, c.ffn_expansion, init)
        };
        Ok(HierarchicalEncoder {
            joint_embed: Linear::new("ftrs.embed", 3, c.dim_f, &mut init)?,
            pos_f: init.zeros("ftrs.pos", &[c.max_joints, c.dim_f])?,
            ftrs: stack("ftrs", c.dim_f, &mut init)?,
            proj_c: Linear::new("ctrs.proj", c.dim_f, c.dim_c, &mut init)?,
            pos_c: init.zeros("ctrs.pos", &[c.window * c.max_joints, c.dim_c])?,
            cls_c: init.normal("ctrs.cls", &[1, c.dim_c])?,
            ctrs: stack("ctrs", c.dim_c, &mut init)?,
            proj_v: Linear::new("vtrs.proj", c.dim_c, c.dim_v, &mut init)?,
            pos_v: init.zeros("vtrs.pos", &[c.max_clips, c.dim_v])?,
            cls_v: init.normal("vtrs.cls", &[1, c.dim_v])?,
            vtrs: stack("vtrs", c.dim_v, &mut init)?,
            config,
            clip_mask: true,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Test hook: with `false` the clip stage attends without its mask.
    pub fn set_clip_mask(&mut self, enabled: bool) {
        self.clip_mask = enabled;
    }

    /// `[N, J, 3] -> [N, J, dim_f]`: per-joint affine map, GELU, then the
    /// joint-indexed positional row.
    pub fn embed_joints(&self, coords: &Tensor<F>) -> Result<Tensor<F>> {
        let j = coords.shape().get(1).copied().unwrap_or(0);
        if coords.rank() != 3 || coords.shape()[2] != 3 {
            return Err(Error::Argument(format!("expected [frames, joints, 3], got {:?}", coords.shape())));
        }
        if j > self.config.max_joints {
            return Err(Error::Capacity { what: "joint count", limit: self.config.max_joints, got: j });
        }
        let pos = self.pos_f.tensor().narrow_rows(0, j)?;
        Ok(self.joint_embed.forward(coords)?.gelu().add_broadcast(&pos)?)
    }

    /// Frame stage on `[N, J, dim_f]`; frames never interact.
    pub fn ftrs_forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        self.ftrs.forward(x, None)
    }

    /// `[B, T, J, 3] -> [B, T, J, dim_f]`
    pub fn frames(&self, coords: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let [b, t, j, _] = dims4(coords)?;
        if t > self.config.max_frames {
            return Err(Error::Capacity { what: "sequence length", limit: self.config.max_frames, got: t });
        }
        let x = self.embed_joints(&coords.reshape(&[b * t, j, 3])?)?;
        let (y, attn) = self.ftrs_forward(&x)?;
        Ok((y.reshape(&[b, t, j, self.config.dim_f])?, attn))
    }

    /// Cuts clips out of frame-stage output `[B, T, J, D]`. `frame_rows`
    /// lists absolute frame indices `b * T + t`, `width` per clip.
    pub fn gather_clips(&self, spatial: &Tensor<F>, frame_rows: &[usize], width: usize) -> Result<Tensor<F>> {
        let [b, t, j, d] = dims4(spatial)?;
        if width == 0 || frame_rows.len() % width != 0 {
            return Err(Error::Argument(format!("{} frame rows do not split into clips of {width}", frame_rows.len())));
        }
        let m = frame_rows.len() / width;
        Ok(spatial.reshape(&[b * t, j * d])?.select_rows(frame_rows)?.reshape(&[m, width * j, d])?)
    }

    /// Sliding-window frame rows for a batch of `b` sequences of length `t`.
    pub fn window_rows(&self, b: usize, t: usize) -> Result<Vec<usize>> {
        let starts = clip_starts(t, self.config.window, self.config.stride)?;
        let w = self.config.window;
        Ok((0..b).flat_map(|i| starts.iter().flat_map(move |&s| (0..w).map(move |f| i * t + s + f))).collect())
    }

    /// Clip stage on frame-stage features `[M, width * J, dim_f]`.
    pub fn ctrs_forward(&self, clips: &Tensor<F>, width: usize, joints: usize) -> Result<ClipOutput<F>> {
        let c = &self.config;
        if width > c.window {
            return Err(Error::Capacity { what: "clip width", limit: c.window, got: width });
        }
        if joints > c.max_joints {
            return Err(Error::Capacity { what: "joint count", limit: c.max_joints, got: joints });
        }
        if clips.rank() != 3 || clips.shape()[1] != width * joints {
            return Err(Error::Argument(format!("clip tensor {:?} does not hold {width}x{joints} tokens", clips.shape())));
        }
        let rows: Vec<usize> = (0..width).flat_map(|f| (0..joints).map(move |j| f * c.max_joints + j)).collect();
        let pos = self.pos_c.tensor().select_rows(&rows)?;
        let x = prepend_cls(&self.proj_c.forward(clips)?.add_broadcast(&pos)?, &self.cls_c)?;
        let mask = self.clip_mask.then(|| clip_attention_mask(width, joints));
        let (hidden, attention) = self.ctrs.forward(&x, mask.as_ref())?;
        Ok(ClipOutput { cls: first_token(&hidden)?, hidden, attention })
    }

    /// Video stage on clip embeddings `[B, N, dim_c]`.
    pub fn vtrs_forward(&self, clip_embs: &Tensor<F>) -> Result<VideoOutput<F>> {
        if clip_embs.rank() != 3 {
            return Err(Error::Argument(format!("expected [batch, clips, dim], got {:?}", clip_embs.shape())));
        }
        let n = clip_embs.shape()[1];
        if n > self.config.max_clips {
            return Err(Error::Capacity { what: "clip count", limit: self.config.max_clips, got: n });
        }
        let pos = self.pos_v.tensor().narrow_rows(0, n)?;
        let x = prepend_cls(&self.proj_v.forward(clip_embs)?.add_broadcast(&pos)?, &self.cls_v)?;
        let (hidden, attention) = self.vtrs.forward(&x, None)?;
        Ok(VideoOutput { video: first_token(&hidden)?, hidden, attention })
    }

    /// Full pipeline on `[B, T, J, 3]` coordinates.
    pub fn encode_coords(&self, coords: &Tensor<F>) -> Result<Encoding<F>> {
        let [b, t, j, _] = dims4(coords)?;
        let (spatial, frame_attn) = self.frames(coords)?;
        let rows = self.window_rows(b, t)?;
        let n = rows.len() / (b * self.config.window);
        let clips = self.ctrs_forward(&self.gather_clips(&spatial, &rows, self.config.window)?, self.config.window, j)?;
        let clip_embeddings = clips.cls.reshape(&[b, n, self.config.dim_c])?;
        let video = self.vtrs_forward(&clip_embeddings)?;
        Ok(Encoding {
            spatial,
            clip_embeddings,
            video: video.video,
            trace: AttentionTrace { frame: frame_attn, clip: clips.attention, video: video.attention },
        })
    }

    pub fn encode_batch(&self, seqs: &[&SkeletonSequence]) -> Result<Encoding<F>> {
        self.encode_coords(&coords_tensor(seqs)?)
    }

    pub fn encode(&self, seq: &SkeletonSequence) -> Result<EncodedSequence<F>> {
        let e = self.encode_batch(&[seq])?;
        let s = e.spatial.shape()[1..].to_vec();
        let c = e.clip_embeddings.shape()[1..].to_vec();
        Ok(EncodedSequence {
            spatial: e.spatial.reshape(&s)?,
            clip_embeddings: e.clip_embeddings.reshape(&c)?,
            video_embedding: e.video.reshape(&[self.config.dim_v])?,
        })
    }
}

impl<F: Real> Module<F> for HierarchicalEncoder<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.joint_embed.visit(f);
        f(&self.pos_f);
        self.ftrs.visit(f);
        self.proj_c.visit(f);
        f(&self.pos_c);
        f(&self.cls_c);
        self.ctrs.visit(f);
        self.proj_v.visit(f);
        f(&self.pos_v);
        f(&self.cls_v);
        self.vtrs.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.joint_embed.visit_mut(f);
        f(&mut self.pos_f);
        self.ftrs.visit_mut(f);
        self.proj_c.visit_mut(f);
        f(&mut self.pos_c);
        f(&mut self.cls_c);
        self.ctrs.visit_mut(f);
        self.proj_v.visit_mut(f);
        f(&mut self.pos_v);
        f(&mut self.cls_v);
        self.vtrs.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mask_for_single_frame_clip() {
        // W = 1, J = 3: each joint sees only itself and [CLS].
        let m = clip_attention_mask(1, 3);
        let expect = [
            [true, true, true, true],
            [true, true, false, false],
            [true, false, true, false],
            [true, false, false, true],
        ];
        for (a, row) in expect.iter().enumerate() {
            for (b, &keep) in row.iter().enumerate() {
                assert_eq!(m.keeps(a * 4 + b), keep, "({a},{b})");
            }
        }
    }

    #[test]
    fn default_config_shapes() {
        let c = ModelConfig::default();
        assert_eq!((c.layers, c.heads, c.d_k), (2, 8, 64));
        assert_eq!((c.dim_f, c.dim_c, c.dim_v), (128, 256, 512));
        assert_eq!(c.num_clips(64).unwrap(), 15);
    }

    #[test]
    fn config_kv_round_trip_and_diff() {
        let mut kv = KvConfig::new();
        let c = ModelConfig::tiny();
        c.write_kv(&mut kv);
        let mut back = ModelConfig::default();
        back.read_kv(&kv).unwrap();
        assert_eq!(back, c);
        let mut other = c.clone();
        other.heads = 4;
        assert_eq!(c.first_difference(&other), Some(("model.heads".into(), "2".into(), "4".into())));
    }

    #[test]
    fn capacity_errors() {
        let mut r = rng::stream(0, rng::INIT);
        let cfg = ModelConfig { max_joints: 3, ..ModelConfig::tiny() };
        let enc = HierarchicalEncoder::<f64>::new(cfg, &mut r).unwrap();
        let x = Tensor::zeros(&[2, 4, 3]).unwrap();
        assert!(matches!(enc.embed_joints(&x), Err(Error::Capacity { what: "joint count", limit: 3, got: 4 })));
    }
}
