//! Weight-normalized MLPs with batched forward tapes and analytic backward.
//!
//! Each linear layer stores direction vectors `v` (row per output unit), gains
//! `g` and biases `b`; the effective weight row is `g * v/||v||`. Hidden
//! layers use Softplus or ReLU, the final layer is linear. An optional
//! sin/cos frequency encoding of the input sits in front of the first layer.

use super::{sigmoid, softplus, AutodiffError, ParameterStore};
use crate::parallel::{self, CHUNK};

/// ||v|| is stabilized as max(||v||, WEIGHT_NORM_EPS).
pub const WEIGHT_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerActivation {
    Softplus,
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: LayerActivation,
    pub weight_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Frequency-encoding bands; 0 feeds raw coordinates.
    pub encoding_bands: usize,
}

impl MlpSpec {
    /// Standard field network: `hidden_layers` weight-normalized layers of
    /// `hidden_width` units with the given activation, linear output layer.
    pub fn field_net(
        input_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        output_dim: usize,
        hidden_activation: LayerActivation,
        encoding_bands: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        for _ in 0..hidden_layers {
            layers.push(LayerSpec {
                out_dim: hidden_width,
                activation: hidden_activation,
                weight_norm: true,
            });
        }
        layers.push(LayerSpec {
            out_dim: output_dim,
            activation: LayerActivation::None,
            weight_norm: true,
        });
        Self { input_dim, layers, encoding_bands }
    }

    /// Input width after the optional frequency encoding.
    pub fn encoded_dim(&self) -> usize {
        self.input_dim * (1 + 2 * self.encoding_bands)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(self.encoded_dim())
    }

    pub fn in_dim_of_layer(&self, l: usize) -> usize {
        if l == 0 {
            self.encoded_dim()
        } else {
            self.layers[l - 1].out_dim
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        match self.layers.last() {
            Some(last) if last.activation == LayerActivation::None => Ok(()),
            Some(_) => Err(AutodiffError::DimensionMismatch {
                context: "final layer must be linear",
                expected: 0,
                got: 1,
            }),
            None => Err(AutodiffError::DimensionMismatch {
                context: "mlp needs at least one layer",
                expected: 1,
                got: 0,
            }),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in 0..self.layers.len() {
            let din = self.in_dim_of_layer(l);
            let dout = self.layers[l].out_dim;
            n += din * dout + 2 * dout;
        }
        n
    }
}

/// Dot product with four independent accumulators; the fixed reassociation
/// keeps results deterministic while letting the FMA chains pipeline, and
/// `chunks_exact` elides the bounds checks.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (pa, pb) in ca.zip(cb) {
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb.iter()) {
        s += x * y;
    }
    s
}

/// y += s * x over equal-length slices, bounds checks elided.
#[inline]
pub(crate) fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += s * xi;
    }
}

fn v_name(prefix: &str, l: usize) -> String {
    format!("{prefix}.l{l}.v")
}
fn g_name(prefix: &str, l: usize) -> String {
    format!("{prefix}.l{l}.g")
}
fn b_name(prefix: &str, l: usize) -> String {
    format!("{prefix}.l{l}.b")
}

/// Registers parameters for `spec` under `prefix`. Hidden weights are uniform
/// with 1/sqrt(fan_in) scale; gains start at the row norm so the initial
/// layer behaves like its plain linear counterpart.
pub fn init_mlp_params<R: rand::Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut R,
) {
    for l in 0..spec.layers.len() {
        let din = spec.in_dim_of_layer(l);
        let dout = spec.layers[l].out_dim;
        let bound = 1.0 / (din as f64).sqrt();
        let v: Vec<f64> = (0..din * dout).map(|_| rng.random_range(-bound..bound)).collect();
        let g: Vec<f64> = (0..dout)
            .map(|i| {
                let row = &v[i * din..(i + 1) * din];
                row.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .collect();
        store.insert(&v_name(prefix, l), v);
        store.insert(&g_name(prefix, l), g);
        store.insert(&b_name(prefix, l), vec![0.0; dout]);
    }
}

/// Zeroes the final layer (v, g, b), so the net outputs exactly zero.
pub fn zero_final_layer(store: &mut ParameterStore, prefix: &str, spec: &MlpSpec) {
    let l = spec.layers.len() - 1;
    for name in [v_name(prefix, l), g_name(prefix, l), b_name(prefix, l)] {
        let t = store.get_mut(&name).unwrap();
        t.value.iter_mut().for_each(|x| *x = 0.0);
    }
}

struct LayerCache {
    /// Effective weights, out_dim x in_dim row-major.
    w: Vec<f64>,
    /// Unit direction rows (weight-norm layers only).
    vhat: Vec<f64>,
    /// Stabilized row norms.
    r: Vec<f64>,
    g: Vec<f64>,
    weight_norm: bool,
}

/// Everything backward needs: cached effective weights and per-layer
/// pre-activations for the whole batch.
pub struct MlpTape {
    spec: MlpSpec,
    n: usize,
    raw_input: Vec<f64>,
    encoded: Vec<f64>,
    /// Pre-activations per layer, each n x out_dim.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer (the next layer's input), cached so the
    /// backward pass never re-evaluates activations.
    post: Vec<Vec<f64>>,
    caches: Vec<LayerCache>,
}

impl MlpTape {
    pub fn batch_len(&self) -> usize {
        self.n
    }
}

fn encode_input(spec: &MlpSpec, input: &[f64], n: usize) -> Vec<f64> {
    let d = spec.input_dim;
    if spec.encoding_bands == 0 {
        return input.to_vec();
    }
    let bands = spec.encoding_bands;
    let de = spec.encoded_dim();
    let mut out = vec![0.0; n * de];
    parallel::for_each_chunk_mut(&mut out, CHUNK * de, |ci, chunk| {
        let base = ci * CHUNK;
        for (row, enc) in chunk.chunks_mut(de).enumerate() {
            let x = &input[(base + row) * d..(base + row + 1) * d];
            enc[..d].copy_from_slice(x);
            let mut off = d;
            for k in 0..bands {
                let freq = (1u64 << k) as f64 * std::f64::consts::PI;
                for &xi in x {
                    enc[off] = (freq * xi).sin();
                    enc[off + 1] = (freq * xi).cos();
                    off += 2;
                }
            }
        }
    });
    out
}

fn encode_backward(spec: &MlpSpec, input: &[f64], d_encoded: &[f64], n: usize) -> Vec<f64> {
    let d = spec.input_dim;
    if spec.encoding_bands == 0 {
        return d_encoded.to_vec();
    }
    let bands = spec.encoding_bands;
    let de = spec.encoded_dim();
    let mut out = vec![0.0; n * d];
    parallel::for_each_chunk_mut(&mut out, CHUNK * d, |ci, chunk| {
        let base = ci * CHUNK;
        for (row, dx) in chunk.chunks_mut(d).enumerate() {
            let x = &input[(base + row) * d..(base + row + 1) * d];
            let de_row = &d_encoded[(base + row) * de..(base + row + 1) * de];
            dx.copy_from_slice(&de_row[..d]);
            let mut off = d;
            for k in 0..bands {
                let freq = (1u64 << k) as f64 * std::f64::consts::PI;
                for (i, &xi) in x.iter().enumerate() {
                    let (s, c) = (freq * xi).sin_cos();
                    dx[i] += freq * (c * de_row[off] - s * de_row[off + 1]);
                    off += 2;
                }
            }
        }
    });
    out
}

fn materialize_layer(store: &ParameterStore, prefix: &str, spec: &MlpSpec, l: usize) -> LayerCache {
    let din = spec.in_dim_of_layer(l);
    let dout = spec.layers[l].out_dim;
    let v = store.value(&v_name(prefix, l));
    let g = store.value(&g_name(prefix, l)).to_vec();
    assert_eq!(v.len(), din * dout, "layer {l} weight shape");
    if !spec.layers[l].weight_norm {
        return LayerCache { w: v.to_vec(), vhat: Vec::new(), r: Vec::new(), g, weight_norm: false };
    }
    let mut w = vec![0.0; din * dout];
    let mut vhat = vec![0.0; din * dout];
    let mut r = vec![0.0; dout];
    for i in 0..dout {
        let row = &v[i * din..(i + 1) * din];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rr = norm.max(WEIGHT_NORM_EPS);
        r[i] = rr;
        for j in 0..din {
            vhat[i * din + j] = row[j] / rr;
            w[i * din + j] = g[i] * vhat[i * din + j];
        }
    }
    LayerCache { w, vhat, r, g, weight_norm: true }
}

/// Single weight-normalized affine layer, exposed for unit-level checks.
pub fn linear_weightnorm_forward(
    x: &[f64],
    v: &[f64],
    g: &[f64],
    b: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    let dout = g.len();
    if dout == 0 || v.len() % dout != 0 {
        return Err(AutodiffError::DimensionMismatch {
            context: "weightnorm layer v",
            expected: dout,
            got: v.len(),
        });
    }
    let din = v.len() / dout;
    if x.len() != din || b.len() != dout {
        return Err(AutodiffError::DimensionMismatch {
            context: "weightnorm layer input",
            expected: din,
            got: x.len(),
        });
    }
    let mut y = vec![0.0; dout];
    for i in 0..dout {
        let row = &v[i * din..(i + 1) * din];
        let norm = row.iter().map(|c| c * c).sum::<f64>().sqrt().max(WEIGHT_NORM_EPS);
        let mut acc = 0.0;
        for j in 0..din {
            acc += row[j] / norm * x[j];
        }
        y[i] = g[i] * acc + b[i];
    }
    Ok(y)
}

fn apply_activation(pre: &[f64], act: LayerActivation, out: &mut Vec<f64>) {
    out.clear();
    match act {
        LayerActivation::Softplus => out.extend(pre.iter().map(|&x| softplus(x))),
        LayerActivation::Relu => out.extend(pre.iter().map(|&x| x.max(0.0))),
        LayerActivation::None => out.extend_from_slice(pre),
    }
}

/// Batched forward pass: `input` is n x input_dim row-major. Returns the
/// output batch and the tape for `mlp_backward`.
pub fn mlp_forward(
    store: &ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    input: &[f64],
    n: usize,
) -> Result<(Vec<f64>, MlpTape), AutodiffError> {
    spec.validate()?;
    if input.len() != n * spec.input_dim {
        return Err(AutodiffError::DimensionMismatch {
            context: "mlp input",
            expected: n * spec.input_dim,
            got: input.len(),
        });
    }
    let encoded = encode_input(spec, input, n);
    let caches: Vec<LayerCache> = (0..spec.layers.len())
        .map(|l| materialize_layer(store, prefix, spec, l))
        .collect();

    let n_layers = spec.layers.len();
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut cur = encoded.clone();
    for l in 0..n_layers {
        let din = spec.in_dim_of_layer(l);
        let dout = spec.layers[l].out_dim;
        let cache = &caches[l];
        let b = store.value(&b_name(prefix, l));
        let mut pre_l = vec![0.0; n * dout];
        {
            let cur_ref = &cur;
            parallel::for_each_chunk_mut(&mut pre_l, CHUNK * dout, |ci, chunk| {
                let base = ci * CHUNK;
                for (row, y) in chunk.chunks_mut(dout).enumerate() {
                    let x = &cur_ref[(base + row) * din..(base + row + 1) * din];
                    for i in 0..dout {
                        let wrow = &cache.w[i * din..(i + 1) * din];
                        y[i] = b[i] + dot4(wrow, x);
                    }
                }
            });
        }
        let mut post_l = Vec::new();
        apply_activation(&pre_l, spec.layers[l].activation, &mut post_l);
        pre.push(pre_l);
        post.push(post_l.clone());
        cur = post_l;
    }
    let tape =
        MlpTape { spec: spec.clone(), n, raw_input: input.to_vec(), encoded, pre, post, caches };
    Ok((cur, tape))
}

/// Convenience single-sample forward.
pub fn mlp_forward_one(
    store: &ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    x: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    mlp_forward(store, prefix, spec, x, 1).map(|(y, _)| y)
}

fn activation_derivative(pre: f64, act: LayerActivation) -> f64 {
    match act {
        LayerActivation::Softplus => sigmoid(pre),
        LayerActivation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        LayerActivation::None => 1.0,
    }
}

/// Reverse pass. Accumulates parameter gradients into `store` (additively)
/// and returns the adjoint of the raw input batch, n x input_dim.
///
/// Per-chunk weight-gradient partials are folded in chunk order, so the
/// result does not depend on the thread count.
pub fn mlp_backward(
    store: &mut ParameterStore,
    prefix: &str,
    tape: &MlpTape,
    d_output: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    let spec = &tape.spec;
    let n = tape.n;
    let n_layers = spec.layers.len();
    if d_output.len() != n * spec.output_dim() {
        return Err(AutodiffError::DimensionMismatch {
            context: "mlp output adjoint",
            expected: n * spec.output_dim(),
            got: d_output.len(),
        });
    }

    let mut cur_d = d_output.to_vec();
    for l in (0..n_layers).rev() {
        let din = spec.in_dim_of_layer(l);
        let dout = spec.layers[l].out_dim;
        let act = spec.layers[l].activation;
        let cache = &tape.caches[l];
        let pre_l = &tape.pre[l];
        // Layer input: encoded batch for l = 0, cached post-activation after.
        let layer_input_buf: &[f64] = if l == 0 { &tape.encoded } else { &tape.post[l - 1] };

        struct Partial {
            dw: Vec<f64>,
            db: Vec<f64>,
            dx: Vec<f64>,
        }
        let cur_d_ref = &cur_d;
        let mut new_d = vec![0.0; n * din];
        let mut dw_total = vec![0.0; din * dout];
        let mut db_total = vec![0.0; dout];
        {
            let mut fold_chunks: Vec<Partial> = Vec::new();
            parallel::map_chunks_fold(
                n,
                CHUNK,
                |_, range| {
                    let mut dw = vec![0.0; din * dout];
                    let mut db = vec![0.0; dout];
                    let mut dx = vec![0.0; range.len() * din];
                    for (local, row) in range.clone().enumerate() {
                        let xbuf = &layer_input_buf[row * din..(row + 1) * din];
                        let dxr = &mut dx[local * din..(local + 1) * din];
                        for i in 0..dout {
                            let dpost = cur_d_ref[row * dout + i];
                            if dpost == 0.0 {
                                continue;
                            }
                            let dpre = dpost * activation_derivative(pre_l[row * dout + i], act);
                            if dpre == 0.0 {
                                continue;
                            }
                            db[i] += dpre;
                            let wrow = &cache.w[i * din..(i + 1) * din];
                            let dwrow = &mut dw[i * din..(i + 1) * din];
                            axpy(dpre, xbuf, dwrow);
                            axpy(dpre, wrow, dxr);
                        }
                    }
                    Partial { dw, db, dx }
                },
                |p| fold_chunks.push(p),
            );
            for (ci, p) in fold_chunks.into_iter().enumerate() {
                for (a, b) in dw_total.iter_mut().zip(p.dw.iter()) {
                    *a += b;
                }
                for (a, b) in db_total.iter_mut().zip(p.db.iter()) {
                    *a += b;
                }
                let base = ci * CHUNK * din;
                new_d[base..base + p.dx.len()].copy_from_slice(&p.dx);
            }
        }

        // Distribute dW onto (v, g, b) parameters.
        if cache.weight_norm {
            let dv_name = v_name(prefix, l);
            let dg_name = g_name(prefix, l);
            {
                let gt = store.get_mut(&dg_name)?;
                for i in 0..dout {
                    let dwrow = &dw_total[i * din..(i + 1) * din];
                    let vhrow = &cache.vhat[i * din..(i + 1) * din];
                    let mut dg = 0.0;
                    for j in 0..din {
                        dg += dwrow[j] * vhrow[j];
                    }
                    gt.grad[i] += dg;
                }
            }
            let vt = store.get_mut(&dv_name)?;
            for i in 0..dout {
                let dwrow = &dw_total[i * din..(i + 1) * din];
                let vhrow = &cache.vhat[i * din..(i + 1) * din];
                let gi = cache.g[i];
                let ri = cache.r[i];
                // dvhat = g * dW row; project out the radial component.
                let mut dot = 0.0;
                for j in 0..din {
                    dot += vhrow[j] * (gi * dwrow[j]);
                }
                let vrow_norm: f64 =
                    vhrow.iter().map(|x| x * ri).map(|x| x * x).sum::<f64>().sqrt();
                let degenerate = vrow_norm < WEIGHT_NORM_EPS;
                for j in 0..din {
                    let dvhat = gi * dwrow[j];
                    let dv = if degenerate {
                        dvhat / ri
                    } else {
                        (dvhat - vhrow[j] * dot) / ri
                    };
                    vt.grad[i * din + j] += dv;
                }
            }
        } else {
            let vt = store.get_mut(&v_name(prefix, l))?;
            for (a, b) in vt.grad.iter_mut().zip(dw_total.iter()) {
                *a += b;
            }
        }
        let bt = store.get_mut(&b_name(prefix, l))?;
        for (a, b) in bt.grad.iter_mut().zip(db_total.iter()) {
            *a += b;
        }

        cur_d = new_d;
    }
    Ok(encode_backward(spec, &tape.raw_input, &cur_d, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::{finite_diff_grad, rel_error};
    use rand::SeedableRng;

    fn seeded(s: u64) -> rand_chacha::ChaCha20Rng {
        rand_chacha::ChaCha20Rng::seed_from_u64(s)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        // v = identity rows, g = 1, b = 0.
        let din = 4;
        let mut v = vec![0.0; din * din];
        for i in 0..din {
            v[i * din + i] = 1.0;
        }
        let g = vec![1.0; din];
        let b = vec![0.0; din];
        let x = vec![0.3, -1.2, 0.0, 2.5];
        let y = linear_weightnorm_forward(&x, &v, &g, &b).unwrap();
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn doubling_gain_doubles_output() {
        let mut rng = seeded(1);
        use rand::Rng;
        let (din, dout) = (5, 3);
        let v: Vec<f64> = (0..din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..dout).map(|_| rng.random_range(0.1..2.0)).collect();
        let b = vec![0.0; dout];
        let x: Vec<f64> = (0..din).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y1 = linear_weightnorm_forward(&x, &v, &g, &b).unwrap();
        let g2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
        let y2 = linear_weightnorm_forward(&x, &v, &g2, &b).unwrap();
        for (a, b) in y2.iter().zip(y1.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_naive_matmul_oracle() {
        let mut rng = seeded(2);
        use rand::Rng;
        let (din, dout) = (8, 8);
        let v: Vec<f64> = (0..din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..dout).map(|_| rng.random_range(0.2..1.5)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..din).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = linear_weightnorm_forward(&x, &v, &g, &b).unwrap();
        // Oracle: materialize W = g * v/||v|| explicitly, then dense matmul.
        for i in 0..dout {
            let row = &v[i * din..(i + 1) * din];
            let norm = row.iter().map(|c| c * c).sum::<f64>().sqrt();
            let mut acc = b[i];
            for j in 0..din {
                acc += g[i] * row[j] / norm * x[j];
            }
            assert!((y[i] - acc).abs() < 1e-12, "row {i}: {} vs {}", y[i], acc);
        }
    }

    #[test]
    fn rescaling_v_rows_leaves_output_invariant() {
        let mut rng = seeded(3);
        use rand::Rng;
        let (din, dout) = (6, 4);
        let v: Vec<f64> = (0..din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..dout).map(|_| rng.random_range(0.2..1.5)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..din).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y1 = linear_weightnorm_forward(&x, &v, &g, &b).unwrap();
        let mut v2 = v.clone();
        for i in 0..dout {
            let c = 1.0 + i as f64 * 2.0;
            for j in 0..din {
                v2[i * din + j] *= c;
            }
        }
        let y2 = linear_weightnorm_forward(&x, &v2, &g, &b).unwrap();
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_identity_layer_mlp() {
        let spec = MlpSpec {
            input_dim: 3,
            layers: vec![LayerSpec {
                out_dim: 3,
                activation: LayerActivation::None,
                weight_norm: true,
            }],
            encoding_bands: 0,
        };
        let mut store = ParameterStore::new();
        let mut v = vec![0.0; 9];
        for i in 0..3 {
            v[i * 3 + i] = 1.0;
        }
        store.insert("net.l0.v", v);
        store.insert("net.l0.g", vec![1.0; 3]);
        store.insert("net.l0.b", vec![0.0; 3]);
        let x = vec![0.5, -0.25, 2.0];
        let y = mlp_forward_one(&store, "net", &spec, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn two_layer_net_matches_hand_composition() {
        // 2 -> 2 softplus -> 1 linear, plain (non-normalized) weights.
        let spec = MlpSpec {
            input_dim: 2,
            layers: vec![
                LayerSpec { out_dim: 2, activation: LayerActivation::Softplus, weight_norm: false },
                LayerSpec { out_dim: 1, activation: LayerActivation::None, weight_norm: false },
            ],
            encoding_bands: 0,
        };
        let mut store = ParameterStore::new();
        store.insert("net.l0.v", vec![1.0, -2.0, 0.5, 3.0]);
        store.insert("net.l0.g", vec![1.0, 1.0]);
        store.insert("net.l0.b", vec![0.1, -0.2]);
        store.insert("net.l1.v", vec![2.0, -1.0]);
        store.insert("net.l1.g", vec![1.0]);
        store.insert("net.l1.b", vec![0.05]);
        let x = [0.7, -0.3];
        let y = mlp_forward_one(&store, "net", &spec, &x).unwrap();
        let h0 = softplus(1.0 * x[0] - 2.0 * x[1] + 0.1);
        let h1 = softplus(0.5 * x[0] + 3.0 * x[1] - 0.2);
        let expect = 2.0 * h0 - 1.0 * h1 + 0.05;
        assert!((y[0] - expect).abs() < 1e-14, "{} vs {expect}", y[0]);
    }

    fn gradcheck_spec(spec: &MlpSpec, seed: u64, n: usize, tol: f64) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let mut store = ParameterStore::new();
        init_mlp_params(&mut store, "net", spec, &mut rng);
        let input: Vec<f64> =
            (0..n * spec.input_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Random linear functional of the outputs as scalar objective.
        let w_out: Vec<f64> =
            (0..n * spec.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (out, tape) = mlp_forward(&store, "net", spec, &input, n).unwrap();
        let _ = out;
        store.zero_grads();
        let mut store_mut = store.clone();
        let d_input = mlp_backward(&mut store_mut, "net", &tape, &w_out).unwrap();

        // Check every parameter tensor against central differences.
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for name in &names {
            let base = store.value(name).to_vec();
            let f = |vals: &[f64]| {
                let mut s2 = store.clone();
                s2.get_mut(name).unwrap().value.copy_from_slice(vals);
                let (o, _) = mlp_forward(&s2, "net", spec, &input, n).unwrap();
                o.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum::<f64>()
            };
            let numeric = finite_diff_grad(f, &base, 1e-5);
            let analytic = &store_mut.get(name).unwrap().grad;
            for i in 0..base.len() {
                let e = rel_error(analytic[i], numeric[i]);
                assert!(
                    e < tol,
                    "{name}[{i}]: analytic {} numeric {} rel {e:.2e}",
                    analytic[i],
                    numeric[i]
                );
            }
        }
        // And the input adjoint.
        let f_in = |vals: &[f64]| {
            let (o, _) = mlp_forward(&store, "net", spec, vals, n).unwrap();
            o.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = finite_diff_grad(f_in, &input, 1e-5);
        for i in 0..input.len() {
            let e = rel_error(d_input[i], numeric[i]);
            assert!(e < tol, "input[{i}]: {} vs {} rel {e:.2e}", d_input[i], numeric[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = MlpSpec::field_net(3, 8, 2, 4, LayerActivation::Softplus, 0);
        gradcheck_spec(&spec, 10, 5, 1e-6);
    }

    #[test]
    fn gradients_match_with_relu_and_encoding() {
        let spec = MlpSpec::field_net(2, 6, 2, 3, LayerActivation::Relu, 2);
        gradcheck_spec(&spec, 11, 4, 1e-5);
    }

    #[test]
    fn weightnorm_layer_gradient_finite_differences() {
        let spec = MlpSpec::field_net(4, 4, 0, 4, LayerActivation::Softplus, 0);
        gradcheck_spec(&spec, 12, 3, 1e-6);
    }

    #[test]
    fn backward_is_linear_in_adjoint() {
        use rand::Rng;
        let spec = MlpSpec::field_net(3, 8, 2, 4, LayerActivation::Softplus, 0);
        let mut rng = seeded(13);
        let mut store = ParameterStore::new();
        init_mlp_params(&mut store, "net", &spec, &mut rng);
        let n = 4;
        let input: Vec<f64> =
            (0..n * spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, tape) = mlp_forward(&store, "net", &spec, &input, n).unwrap();
        let a: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ab: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();

        let mut sa = store.clone();
        let dxa = mlp_backward(&mut sa, "net", &tape, &a).unwrap();
        let mut sb = store.clone();
        let dxb = mlp_backward(&mut sb, "net", &tape, &b).unwrap();
        let mut sab = store.clone();
        let dxab = mlp_backward(&mut sab, "net", &tape, &ab).unwrap();

        for i in 0..dxab.len() {
            assert!((dxab[i] - (dxa[i] + dxb[i])).abs() < 1e-10);
        }
        for name in store.names() {
            let ga = &sa.get(name).unwrap().grad;
            let gb = &sb.get(name).unwrap().grad;
            let gab = &sab.get(name).unwrap().grad;
            for i in 0..ga.len() {
                assert!((gab[i] - (ga[i] + gb[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zeroed_final_layer_outputs_zero() {
        let spec = MlpSpec::field_net(3, 16, 2, 11, LayerActivation::Softplus, 0);
        let mut rng = seeded(14);
        let mut store = ParameterStore::new();
        init_mlp_params(&mut store, "net", &spec, &mut rng);
        zero_final_layer(&mut store, "net", &spec);
        let y = mlp_forward_one(&store, "net", &spec, &[0.4, -0.1, 0.9]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = MlpSpec::field_net(3, 4, 1, 2, LayerActivation::Softplus, 0);
        let mut rng = seeded(15);
        let mut store = ParameterStore::new();
        init_mlp_params(&mut store, "net", &spec, &mut rng);
        assert!(matches!(
            mlp_forward(&store, "net", &spec, &[1.0, 2.0], 1),
            Err(AutodiffError::DimensionMismatch { .. })
        ));
    }
}
