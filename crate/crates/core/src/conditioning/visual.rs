use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vf_tensor::{gemm, ParamId, ParamStore, Tensor};

use super::features::FeatureSequence;
use crate::{CoreError, Result};

/// Video frames `[3 × T_v × H × W]` with pixel values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<f32>,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, num_frames: usize, height: usize, width: usize, fps: f64) -> Result<Self> {
        if frames.len() != 3 * num_frames * height * width {
            return Err(CoreError::InvalidInput(format!(
                "video buffer has {} values, expected 3x{num_frames}x{height}x{width}",
                frames.len()
            )));
        }
        Ok(VideoClip { frames, num_frames, height, width, fps })
    }

    pub fn zeros(num_frames: usize, size: usize, fps: f64) -> Self {
        VideoClip { frames: vec![0.0; 3 * num_frames * size * size], num_frames, height: size, width: size, fps }
    }

    fn plane(&self, channel: usize, t: usize) -> &[f32] {
        let hw = self.height * self.width;
        let start = (channel * self.num_frames + t) * hw;
        &self.frames[start..start + hw]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_kernel_t: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub out_channels: usize,
}

impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig { input_size: 112, stem_channels: 64, stem_kernel_t: 5, stages: 4, blocks_per_stage: 1, out_channels: 768 }
    }
}

impl VisualConfig {
    pub fn desk() -> Self {
        VisualConfig { input_size: 32, stem_channels: 8, stem_kernel_t: 5, stages: 2, blocks_per_stage: 1, out_channels: 64 }
    }

    /// Spatial size after the stem and after each stage.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut s = vec![conv_out(self.input_size, 5, 2, 2)];
        for _ in 0..self.stages {
            let last = *s.last().expect("non-empty");
            s.push(conv_out(last, 3, 2, 1));
        }
        s
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Convolution weights followed by a frozen per-channel affine that stands
/// in for inference-mode batch normalization.
#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    scale: ParamId,
    shift: ParamId,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

/// Frozen frame-level CNN: a spatio-temporal stem, 2D residual stages and a
/// final projection to one `c`-vector per frame.
#[derive(Debug, Clone)]
pub struct VisualBackbone {
    pub cfg: VisualConfig,
    store: ParamStore<f32>,
    stem: ConvBn,
    blocks: Vec<ResidualBlock>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

impl VisualBackbone {
    pub fn new(cfg: &VisualConfig, seed: u64) -> Result<Self> {
        if cfg.stem_kernel_t.is_multiple_of(2) {
            return Err(CoreError::Config(format!("stem_kernel_t must be odd, got {}", cfg.stem_kernel_t)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut conv = |store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, k: usize, kt: usize, stride: usize, pad: usize| -> Result<ConvBn> {
            let fan_in = cin * kt * k * k;
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = store.add(format!("{name}.weight"), Tensor::uniform(vec![cout, cin * kt * k * k], bound, &mut rng))?;
            let scale = store.add(format!("{name}.bn_scale"), Tensor::full(vec![cout], 1.0))?;
            let shift = store.add(format!("{name}.bn_shift"), Tensor::zeros(vec![cout]))?;
            Ok(ConvBn { weight, scale, shift, cin: cin * kt, cout, k, stride, pad })
        };
        let stem = conv(&mut store, "visual.stem", 3, cfg.stem_channels, 5, cfg.stem_kernel_t, 2, 2)?;
        let mut blocks = Vec::new();
        let mut cin = cfg.stem_channels;
        for s in 0..cfg.stages {
            let cout = cfg.stem_channels << s;
            for b in 0..cfg.blocks_per_stage {
                let stride = if b == 0 { 2 } else { 1 };
                let name = format!("visual.stage{s}.block{b}");
                let a = conv(&mut store, &format!("{name}.a"), cin, cout, 3, 1, stride, 1)?;
                let bb = conv(&mut store, &format!("{name}.b"), cout, cout, 3, 1, 1, 1)?;
                let shortcut = if stride != 1 || cin != cout {
                    Some(conv(&mut store, &format!("{name}.shortcut"), cin, cout, 1, 1, stride, 0)?)
                } else {
                    None
                };
                blocks.push(ResidualBlock { a, b: bb, shortcut });
                cin = cout;
            }
        }
        let bound = (3.0 / cin as f64).sqrt();
        let fc_weight = store.add("visual.fc.weight", Tensor::uniform(vec![cfg.out_channels, cin], bound, &mut rng))?;
        let fc_bias = store.add("visual.fc.bias", Tensor::zeros(vec![cfg.out_channels]))?;
        Ok(VisualBackbone { cfg: cfg.clone(), store, stem, blocks, fc_weight, fc_bias })
    }

    /// Replaces the weights with a checkpoint of the same layout.
    pub fn load_weights(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let entries = vf_tensor::checkpoint::load_checkpoint::<f32>(path)?;
        let extra = self.store.load_values(entries)?;
        if let Some((name, _)) = extra.first() {
            return Err(CoreError::Format(format!("unexpected visual backbone parameter {name:?}")));
        }
        Ok(())
    }

    /// One feature vector per frame, `[T_v × c]`.
    pub fn forward(&self, clip: &VideoClip) -> Result<FeatureSequence> {
        let size = self.cfg.input_size;
        if clip.height != size || clip.width != size {
            return Err(CoreError::Tensor(vf_tensor::TensorError::ShapeMismatch {
                op: "visual_backbone",
                lhs: vec![3, clip.num_frames, clip.height, clip.width],
                rhs: vec![3, clip.num_frames, size, size],
            }));
        }
        if clip.num_frames == 0 {
            return Err(CoreError::InvalidInput("video clip has no frames".into()));
        }
        let kt = self.cfg.stem_kernel_t;
        let half = kt / 2;
        let hw = size * size;
        let mut out = Vec::with_capacity(clip.num_frames * self.cfg.out_channels);
        for t in 0..clip.num_frames {
            // Stack the temporal neighbourhood as extra input channels.
            let mut stacked = vec![0.0f32; 3 * kt * hw];
            for c in 0..3 {
                for dt in 0..kt {
                    let src = t as isize + dt as isize - half as isize;
                    if src >= 0 && (src as usize) < clip.num_frames {
                        let dst = (c * kt + dt) * hw;
                        stacked[dst..dst + hw].copy_from_slice(clip.plane(c, src as usize));
                    }
                }
            }
            let (mut x, mut s) = (stacked, size);
            x = self.conv_bn(&self.stem, &x, s, true);
            s = conv_out(s, 5, 2, 2);
            for block in &self.blocks {
                let (y, s2) = self.residual(block, &x, s);
                x = y;
                s = s2;
            }
            let ch = x.len() / (s * s);
            let pooled: Vec<f32> = x.chunks(s * s).map(|p| p.iter().sum::<f32>() / (s * s) as f32).collect();
            let w = self.store.value(self.fc_weight).data();
            let b = self.store.value(self.fc_bias).data();
            for o in 0..self.cfg.out_channels {
                let row = &w[o * ch..(o + 1) * ch];
                out.push(b[o] + row.iter().zip(&pooled).map(|(a, p)| a * p).sum::<f32>());
            }
        }
        Ok(Tensor::new(vec![clip.num_frames, self.cfg.out_channels], out)?)
    }

    fn residual(&self, block: &ResidualBlock, x: &[f32], s: usize) -> (Vec<f32>, usize) {
        let s2 = conv_out(s, 3, block.a.stride, 1);
        let h = self.conv_bn(&block.a, x, s, true);
        let mut h = self.conv_bn(&block.b, &h, s2, false);
        let skip = match &block.shortcut {
            Some(sc) => self.conv_bn(sc, x, s, false),
            None => x.to_vec(),
        };
        h.iter_mut().zip(&skip).for_each(|(a, b)| *a = (*a + b).max(0.0));
        (h, s2)
    }

    /// 2D convolution over a square `[cin × s × s]` map via im2col and gemm.
    fn conv_bn(&self, layer: &ConvBn, x: &[f32], s: usize, relu: bool) -> Vec<f32> {
        let so = conv_out(s, layer.k, layer.stride, layer.pad);
        let rows = layer.cin * layer.k * layer.k;
        let mut cols = vec![0.0f32; rows * so * so];
        for c in 0..layer.cin {
            for ky in 0..layer.k {
                for kx in 0..layer.k {
                    let r = (c * layer.k + ky) * layer.k + kx;
                    let dst = &mut cols[r * so * so..(r + 1) * so * so];
                    for oy in 0..so {
                        let iy = (oy * layer.stride + ky) as isize - layer.pad as isize;
                        if iy < 0 || iy as usize >= s {
                            continue;
                        }
                        for ox in 0..so {
                            let ix = (ox * layer.stride + kx) as isize - layer.pad as isize;
                            if ix >= 0 && (ix as usize) < s {
                                dst[oy * so + ox] = x[(c * s + iy as usize) * s + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut y = vec![0.0f32; layer.cout * so * so];
        gemm(layer.cout, rows, so * so, self.store.value(layer.weight).data(), false, &cols, false, &mut y, false);
        let scale = self.store.value(layer.scale).data();
        let shift = self.store.value(layer.shift).data();
        for (o, plane) in y.chunks_mut(so * so).enumerate() {
            for v in plane {
                *v = *v * scale[o] + shift[o];
                if relu {
                    *v = v.max(0.0);
                }
            }
        }
        y
    }

    pub fn weights(&self) -> &ParamStore<f32> {
        &self.store
    }
}
