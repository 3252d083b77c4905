//! SSIM with an 11x11 Gaussian window (sigma 1.5), valid-mode windows only,
//! plus the analytic gradient needed for the D-SSIM training term.
//!
//! Constants k1 = 0.01, k2 = 0.03 at unit dynamic range. Windowed moments use
//! separable convolutions; the backward pass scatters the per-window moment
//! adjoints with the same separable kernel.

use crate::image::Image;
use thiserror::Error;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum SsimError {
    #[error("images are {0}x{1}, smaller than the {WINDOW}x{WINDOW} window")]
    TooSmall(usize, usize),
    #[error("image shapes differ")]
    ShapeMismatch,
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable correlation of one channel plane (h x w) with the
/// symmetric kernel; output is (h-10) x (w-10).
fn conv_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + x + k];
            }
            tmp[y * vw + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + k) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Adjoint of `conv_valid`: scatters a valid-size field back to full size
/// through the same separable kernel.
fn conv_valid_adjoint(field: &[f64], w: usize, h: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; h * vw];
    for y in 0..vh {
        for x in 0..vw {
            let g = field[y * vw + x];
            if g == 0.0 {
                continue;
            }
            for (k, &kv) in kernel.iter().enumerate() {
                tmp[(y + k) * vw + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..vw {
            let g = tmp[y * vw + x];
            if g == 0.0 {
                continue;
            }
            for (k, &kv) in kernel.iter().enumerate() {
                out[y * w + x + k] += kv * g;
            }
        }
    }
    out
}

fn split_channels(img: &Image) -> [Vec<f64>; 3] {
    let n = img.width * img.height;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for c in 0..3 {
            out[c][i] = img.data[i * 3 + c];
        }
    }
    out
}

/// Mean SSIM over all valid windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, SsimError> {
    ssim_with_grad(a, b, false).map(|(s, _)| s)
}

/// Mean SSIM and optionally d(mean SSIM)/d(a) as a full-size RGB buffer.
pub fn ssim_with_grad(
    a: &Image,
    b: &Image,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), SsimError> {
    if a.width != b.width || a.height != b.height {
        return Err(SsimError::ShapeMismatch);
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(SsimError::TooSmall(a.width, a.height));
    }
    let (w, h) = (a.width, a.height);
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let kernel = gaussian_kernel();
    let xa = split_channels(a);
    let xb = split_channels(b);
    let n_valid = vw * vh;
    let denom = (n_valid * 3) as f64;

    let mut total = 0.0;
    let mut grad = if want_grad { Some(vec![0.0; w * h * 3]) } else { None };
    for c in 0..3 {
        let x = &xa[c];
        let y = &xb[c];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(p, q)| p * q).collect();
        let mu_x = conv_valid(x, w, h, &kernel);
        let mu_y = conv_valid(y, w, h, &kernel);
        let m_xx = conv_valid(&xx, w, h, &kernel);
        let m_yy = conv_valid(&yy, w, h, &kernel);
        let m_xy = conv_valid(&xy, w, h, &kernel);

        let mut g_mu = vec![0.0; n_valid];
        let mut g_mxx = vec![0.0; n_valid];
        let mut g_mxy = vec![0.0; n_valid];
        for i in 0..n_valid {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = m_xx[i] - mx * mx;
            let sy = m_yy[i] - my * my;
            let sxy = m_xy[i] - mx * my;
            let n1 = 2.0 * mx * my + C1;
            let n2 = 2.0 * sxy + C2;
            let d1 = mx * mx + my * my + C1;
            let d2 = sx + sy + C2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                let a1 = n2 / (d1 * d2);
                let a2 = n1 / (d1 * d2);
                let b1 = s / d1;
                let b2 = s / d2;
                // d s / d mu_x, d s / d m_xx, d s / d m_xy; divided by the
                // mean denominator once here.
                g_mu[i] = (2.0 * my * a1 - 2.0 * my * a2 + 2.0 * mx * b2 - 2.0 * mx * b1) / denom;
                g_mxx[i] = -b2 / denom;
                g_mxy[i] = 2.0 * a2 / denom;
            }
        }
        if let Some(gbuf) = grad.as_mut() {
            let back_mu = conv_valid_adjoint(&g_mu, w, h, &kernel);
            let back_mxx = conv_valid_adjoint(&g_mxx, w, h, &kernel);
            let back_mxy = conv_valid_adjoint(&g_mxy, w, h, &kernel);
            for i in 0..w * h {
                gbuf[i * 3 + c] = back_mu[i] + 2.0 * x[i] * back_mxx[i] + y[i] * back_mxy[i];
            }
        }
    }
    Ok((total / denom, grad))
}

/// Structural dissimilarity loss (1 - SSIM) / 2 with gradient w.r.t. `a`.
pub fn dssim_with_grad(
    a: &Image,
    b: &Image,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), SsimError> {
    let (s, g) = ssim_with_grad(a, b, want_grad)?;
    let loss = (1.0 - s) / 2.0;
    let grad = g.map(|v| v.into_iter().map(|x| -0.5 * x).collect());
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image {
            width: w,
            height: h,
            data: (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }

    /// Straightforward second implementation: explicit window sums, no
    /// separable passes, no shared code with the production path.
    fn ssim_direct(a: &Image, b: &Image) -> f64 {
        let kernel = gaussian_kernel();
        let mut win = [[0.0f64; WINDOW]; WINDOW];
        for i in 0..WINDOW {
            for j in 0..WINDOW {
                win[i][j] = kernel[i] * kernel[j];
            }
        }
        let (w, h) = (a.width, a.height);
        let (vw, vh) = (w - WINDOW + 1, h - WINDOW + 1);
        let mut total = 0.0;
        for c in 0..3 {
            for wy in 0..vh {
                for wx in 0..vw {
                    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..WINDOW {
                        for dx in 0..WINDOW {
                            let p = ((wy + dy) * w + wx + dx) * 3 + c;
                            let xv = a.data[p];
                            let yv = b.data[p];
                            let k = win[dy][dx];
                            mx += k * xv;
                            my += k * yv;
                            mxx += k * xv * xv;
                            myy += k * yv * yv;
                            mxy += k * xv * yv;
                        }
                    }
                    let sx = mxx - mx * mx;
                    let sy = myy - my * my;
                    let sxy = mxy - mx * my;
                    total += ((2.0 * mx * my + C1) * (2.0 * sxy + C2))
                        / ((mx * mx + my * my + C1) * (sx + sy + C2));
                }
            }
        }
        total / (vw * vh * 3) as f64
    }

    #[test]
    fn identical_images_have_unit_ssim() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 16, 13);
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let (d, _) = dssim_with_grad(&img, &img, false).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 15, 14);
        let b = random_image(&mut rng, 15, 14);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_second_implementation() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_image(&mut rng, 19, 16);
            let b = random_image(&mut rng, 19, 16);
            let fast = ssim(&a, &b).unwrap();
            let direct = ssim_direct(&a, &b);
            assert!((fast - direct).abs() < 1e-8, "{fast} vs {direct}");
        }
    }

    #[test]
    fn too_small_image_is_an_error() {
        let img = Image::new(10, 32);
        assert!(matches!(ssim(&img, &img), Err(SsimError::TooSmall(10, 32))));
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 13, 12);
        let b = random_image(&mut rng, 13, 12);
        let (_, grad) = dssim_with_grad(&a, &b, true).unwrap();
        let grad = grad.unwrap();
        let h = 1e-5;
        // Spot-check a scattering of coordinates.
        for &i in &[0usize, 7, 100, 231, 389, 467] {
            let mut up = a.clone();
            up.data[i] += h;
            let mut dn = a.clone();
            dn.data[i] -= h;
            let fd = (dssim_with_grad(&up, &b, false).unwrap().0
                - dssim_with_grad(&dn, &b, false).unwrap().0)
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "coord {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
