//! Pluggable perceptual feature term.
//!
//! The extractor interface accepts any fixed feature stack; the shipped
//! default is a seed-pinned random convolution pyramid. It is NOT equivalent
//! to a pretrained VGG: it stands in for external weights this crate does not
//! ship, while keeping the loss surface perceptual-style (multi-scale local
//! structure) and fully reproducible.

use crate::image::Image;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Feature stacks for perceptual losses. Implementations must be pure.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, img: &Image) -> Vec<FeatureMap>;
    /// Adjoint: image gradient given per-stage feature adjoints.
    fn backward(&self, img: &Image, d_features: &[FeatureMap]) -> Vec<f64>;
    fn name(&self) -> &'static str;
}

struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    /// out_ch x in_ch x 3 x 3.
    weights: Vec<f64>,
}

impl ConvLayer {
    fn forward(&self, input: &FeatureMap) -> FeatureMap {
        let ow = input.width.div_ceil(self.stride);
        let oh = input.height.div_ceil(self.stride);
        // Output channels are independent; fan out over them.
        let planes = crate::parallel::map_collect(self.out_ch, |oc| {
            let mut plane = vec![0.0; ow * oh];
            for oy in 0..oh {
                for ox in 0..ow {
                    let cy = (oy * self.stride) as isize;
                    let cx = (ox * self.stride) as isize;
                    let mut acc = 0.0;
                    for ic in 0..self.in_ch {
                        for ky in -1..=1isize {
                            let iy = cy + ky;
                            if iy < 0 || iy >= input.height as isize {
                                continue;
                            }
                            for kx in -1..=1isize {
                                let ix = cx + kx;
                                if ix < 0 || ix >= input.width as isize {
                                    continue;
                                }
                                let wi = ((oc * self.in_ch + ic) * 3 + (ky + 1) as usize) * 3
                                    + (kx + 1) as usize;
                                acc += self.weights[wi]
                                    * input.data[(ic * input.height + iy as usize) * input.width
                                        + ix as usize];
                            }
                        }
                    }
                    // ReLU folded into the layer.
                    plane[oy * ow + ox] = acc.max(0.0);
                }
            }
            plane
        });
        let mut out = Vec::with_capacity(self.out_ch * ow * oh);
        for plane in planes {
            out.extend_from_slice(&plane);
        }
        FeatureMap { channels: self.out_ch, width: ow, height: oh, data: out }
    }

    /// Input adjoint given the post-ReLU output and its adjoint; input
    /// channels are independent on the scatter side.
    fn backward(&self, input: &FeatureMap, output: &FeatureMap, d_out: &[f64]) -> Vec<f64> {
        let (ow, oh) = (output.width, output.height);
        let planes = crate::parallel::map_collect(self.in_ch, |ic| {
            let mut d_plane = vec![0.0; input.width * input.height];
            for oc in 0..self.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o_idx = (oc * oh + oy) * ow + ox;
                        let g = d_out[o_idx];
                        if g == 0.0 || output.data[o_idx] <= 0.0 {
                            continue;
                        }
                        let cy = (oy * self.stride) as isize;
                        let cx = (ox * self.stride) as isize;
                        for ky in -1..=1isize {
                            let iy = cy + ky;
                            if iy < 0 || iy >= input.height as isize {
                                continue;
                            }
                            for kx in -1..=1isize {
                                let ix = cx + kx;
                                if ix < 0 || ix >= input.width as isize {
                                    continue;
                                }
                                let wi = ((oc * self.in_ch + ic) * 3 + (ky + 1) as usize) * 3
                                    + (kx + 1) as usize;
                                d_plane[(iy as usize) * input.width + ix as usize] +=
                                    g * self.weights[wi];
                            }
                        }
                    }
                }
            }
            d_plane
        });
        let mut d_in = Vec::with_capacity(self.in_ch * input.width * input.height);
        for plane in planes {
            d_in.extend_from_slice(&plane);
        }
        d_in
    }
}

/// Four random conv+ReLU stages with fixed seed-derived weights.
pub struct RandomConvExtractor {
    layers: Vec<ConvLayer>,
}

impl RandomConvExtractor {
    pub const DEFAULT_SEED: u64 = 0x9e3779b97f4a7c15;

    pub fn new(seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let plan = [(3usize, 8usize, 2usize), (8, 8, 1), (8, 16, 2), (16, 16, 1)];
        let layers = plan
            .iter()
            .map(|&(in_ch, out_ch, stride)| {
                let fan_in = (in_ch * 9) as f64;
                let bound = (2.0 / fan_in).sqrt();
                ConvLayer {
                    in_ch,
                    out_ch,
                    stride,
                    weights: (0..out_ch * in_ch * 9)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                }
            })
            .collect();
        Self { layers }
    }
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

fn image_to_planar(img: &Image) -> FeatureMap {
    let n = img.width * img.height;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = img.data[i * 3 + c];
        }
    }
    FeatureMap { channels: 3, width: img.width, height: img.height, data }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, img: &Image) -> Vec<FeatureMap> {
        let mut cur = image_to_planar(img);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = layer.forward(&cur);
            out.push(cur.clone());
        }
        out
    }

    fn backward(&self, img: &Image, d_features: &[FeatureMap]) -> Vec<f64> {
        let planar = image_to_planar(img);
        let mut acts = vec![planar];
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        let mut d_cur = vec![0.0; acts.last().unwrap().data.len()];
        for l in (0..self.layers.len()).rev() {
            for (a, b) in d_cur.iter_mut().zip(d_features[l].data.iter()) {
                *a += b;
            }
            d_cur = self.layers[l].backward(&acts[l], &acts[l + 1], &d_cur);
        }
        // Back to interleaved RGB layout.
        let n = img.width * img.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[i * 3 + c] = d_cur[c * n + i];
            }
        }
        out
    }

    fn name(&self) -> &'static str {
        "random-conv-stack"
    }
}

/// Identity extractor (features = raw pixels); reduces the perceptual term to
/// a plain pixel L1.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, img: &Image) -> Vec<FeatureMap> {
        vec![image_to_planar(img)]
    }

    fn backward(&self, img: &Image, d_features: &[FeatureMap]) -> Vec<f64> {
        let n = img.width * img.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[i * 3 + c] = d_features[0].data[c * n + i];
            }
        }
        out
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}
