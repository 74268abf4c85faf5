//! SSIM maps with the standard 11x11 Gaussian window (sigma 1.5) and the
//! exact adjoint of the map with respect to one input image.
//!
//! Convolutions are zero-padded and same-size; the kernel is symmetric, so
//! the convolution is self-adjoint and the backward pass reuses it.

use crate::grid::GridF;
use rayon::prelude::*;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable zero-padded same-size Gaussian filtering.
pub fn filter(src: &GridF) -> GridF {
    let k = kernel();
    let half = WINDOW / 2;
    let (w, h) = (src.width(), src.height());
    let mut tmp = GridF::zeros(w, h);
    tmp.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = x as isize + i as isize - half as isize;
                    if xx >= 0 && (xx as usize) < w {
                        acc += kv * src.get(xx as usize, y);
                    }
                }
                *out = acc;
            }
        });
    let mut dst = GridF::zeros(w, h);
    dst.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = y as isize + i as isize - half as isize;
                    if yy >= 0 && (yy as usize) < h {
                        acc += kv * tmp.get(x, yy as usize);
                    }
                }
                *out = acc;
            }
        });
    dst
}

/// Filtered moments of an (x, y) image pair, kept for the backward pass.
pub struct SsimChannel {
    pub mu_x: GridF,
    pub mu_y: GridF,
    pub sxx: GridF,
    pub syy: GridF,
    pub sxy: GridF,
    pub map: GridF,
}

/// Per-pixel SSIM map of a single channel.
pub fn ssim_channel(x: &GridF, y: &GridF) -> SsimChannel {
    assert!(x.same_shape(y), "ssim inputs must share shape");
    let mu_x = filter(x);
    let mu_y = filter(y);
    let sxx = filter(&x.map(|v| v * v));
    let syy = filter(&y.map(|v| v * v));
    let xy: GridF = GridF::from_vec(
        x.width(),
        x.height(),
        x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect(),
    );
    let sxy = filter(&xy);
    let mut map = GridF::zeros(x.width(), x.height());
    for i in 0..map.len() {
        let (mx, my) = (mu_x.data()[i], mu_y.data()[i]);
        let var_x = sxx.data()[i] - mx * mx;
        let var_y = syy.data()[i] - my * my;
        let cov = sxy.data()[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = var_x + var_y + C2;
        map.data_mut()[i] = (a1 * a2) / (b1 * b2);
    }
    SsimChannel {
        mu_x,
        mu_y,
        sxx,
        syy,
        sxy,
        map,
    }
}

/// Adjoint of the SSIM map with respect to `x` (the rendered image side).
pub fn ssim_channel_backward(x: &GridF, y: &GridF, s: &SsimChannel, d_map: &GridF) -> GridF {
    let (w, h) = (x.width(), x.height());
    let mut d_mu = GridF::zeros(w, h);
    let mut d_sxx = GridF::zeros(w, h);
    let mut d_sxy = GridF::zeros(w, h);
    for i in 0..d_map.len() {
        let g = d_map.data()[i];
        if g == 0.0 {
            continue;
        }
        let (mx, my) = (s.mu_x.data()[i], s.mu_y.data()[i]);
        let var_x = s.sxx.data()[i] - mx * mx;
        let var_y = s.syy.data()[i] - my * my;
        let cov = s.sxy.data()[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = var_x + var_y + C2;
        let d = b1 * b2;
        let d_a1 = g * a2 / d;
        let d_a2 = g * a1 / d;
        let d_b1 = -g * a1 * a2 / (d * b1);
        let d_b2 = -g * a1 * a2 / (d * b2);
        // sigma_xy = Sxy - mu_x mu_y, var_x = Sxx - mu_x^2.
        d_mu.data_mut()[i] =
            2.0 * my * d_a1 + 2.0 * mx * d_b1 - 2.0 * my * d_a2 - 2.0 * mx * d_b2;
        d_sxx.data_mut()[i] = d_b2;
        d_sxy.data_mut()[i] = 2.0 * d_a2;
    }
    let f_mu = filter(&d_mu);
    let f_sxx = filter(&d_sxx);
    let f_sxy = filter(&d_sxy);
    let mut out = GridF::zeros(w, h);
    for i in 0..out.len() {
        out.data_mut()[i] =
            f_mu.data()[i] + 2.0 * x.data()[i] * f_sxx.data()[i] + y.data()[i] * f_sxy.data()[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut StdRng, w: usize, h: usize) -> GridF {
        GridF::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = StdRng::seed_from_u64(2);
        let x = random_image(&mut rng, 16, 12);
        let s = ssim_channel(&x, &x);
        for &v in s.map.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_normalized() {
        let k = kernel();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((k[0] - k[WINDOW - 1]).abs() < 1e-18);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let (w, h) = (14, 11);
        let x = random_image(&mut rng, w, h);
        let y = random_image(&mut rng, w, h);
        let d_map = GridF::from_vec(
            w,
            h,
            (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let s = ssim_channel(&x, &y);
        let grad = ssim_channel_backward(&x, &y, &s, &d_map);

        let objective = |x: &GridF| -> f64 {
            let s = ssim_channel(x, &y);
            s.map
                .data()
                .iter()
                .zip(d_map.data())
                .map(|(m, g)| m * g)
                .sum()
        };
        let eps = 1e-6;
        for i in (0..w * h).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * eps);
            let ana = grad.data()[i];
            assert!(
                (fd - ana).abs() < 1e-7 * fd.abs().max(ana.abs()).max(1.0),
                "pixel {i}: fd {fd} vs {ana}"
            );
        }
    }
}
