//! Real spherical-harmonic basis for view-dependent color, degrees 0..=3,
//! with analytic gradients with respect to the view direction.

use crate::scene::ShCoeffs;
use crate::Vec3;

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

#[inline]
pub fn coeffs_for_degree(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the basis at a unit direction. Entries beyond the requested
/// degree are zero.
pub fn basis(dir: &Vec3, degree: usize) -> [f64; 16] {
    let mut b = [0.0; 16];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Basis gradients with respect to the (unit) direction components.
pub fn basis_grad(dir: &Vec3, degree: usize) -> [[f64; 3]; 16] {
    let mut g = [[0.0; 3]; 16];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [
            -2.0 * SH_C2[2] * x,
            -2.0 * SH_C2[2] * y,
            4.0 * SH_C2[2] * z,
        ];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ];
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        g[11] = [
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        g[12] = [
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ];
        g[14] = [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * (-2.0 * y * z),
            SH_C3[5] * (xx - yy),
        ];
        g[15] = [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * (-6.0 * x * y),
            0.0,
        ];
    }
    g
}

/// View-dependent color: `clamp(sum_b basis_b * coeff_b + 0.5, min 0)`.
pub fn eval_color(coeffs: &ShCoeffs, dir: &Vec3, degree: usize) -> [f64; 3] {
    let b = basis(dir, degree);
    let n = coeffs_for_degree(degree);
    let mut rgb = [0.5; 3];
    for (k, bk) in b.iter().enumerate().take(n) {
        for c in 0..3 {
            rgb[c] += bk * coeffs[k][c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// Backward of [`eval_color`]: given dL/d rgb, returns dL/d coeffs and the
/// dL/d direction vector. `raw` must be the pre-clamp color.
pub fn eval_color_backward(
    coeffs: &ShCoeffs,
    dir: &Vec3,
    degree: usize,
    raw: &[f64; 3],
    d_rgb: &[f64; 3],
) -> (ShCoeffs, Vec3) {
    let b = basis(dir, degree);
    let gb = basis_grad(dir, degree);
    let n = coeffs_for_degree(degree);
    let mut d_coeffs = [[0.0; 3]; 16];
    let mut d_dir = Vec3::zeros();
    // Clamp passes gradient only where the raw value is positive.
    let pass: [f64; 3] = raw.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    for k in 0..n {
        for c in 0..3 {
            let g = d_rgb[c] * pass[c];
            d_coeffs[k][c] = g * b[k];
            let w = g * coeffs[k][c];
            d_dir.x += w * gb[k][0];
            d_dir.y += w * gb[k][1];
            d_dir.z += w * gb[k][2];
        }
    }
    (d_coeffs, d_dir)
}
