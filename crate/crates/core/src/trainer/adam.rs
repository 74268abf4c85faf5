//! Adaptive-moment optimizer over the structure-of-arrays splat parameters.
//!
//! Moment rows track the splat population through every density-control
//! rewrite: pruned rows are dropped, cloned/split rows start at zero.

use crate::density::Rewrite;
use crate::raster::SplatGradients;
use crate::scene::SplatSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// First/second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub width: usize,
}

impl MomentPair {
    fn new(rows: usize, width: usize) -> Self {
        Self {
            m: vec![0.0; rows * width],
            v: vec![0.0; rows * width],
            width,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.width
    }

    fn apply_rewrite(&mut self, rewrite: &Rewrite) {
        let w = self.width;
        let rows = rewrite.kept.len() + rewrite.added;
        let mut m = vec![0.0; rows * w];
        let mut v = vec![0.0; rows * w];
        for (new_row, &old_row) in rewrite.kept.iter().enumerate() {
            m[new_row * w..(new_row + 1) * w].copy_from_slice(&self.m[old_row * w..(old_row + 1) * w]);
            v[new_row * w..(new_row + 1) * w].copy_from_slice(&self.v[old_row * w..(old_row + 1) * w]);
        }
        self.m = m;
        self.v = v;
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Full optimizer state; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub position: MomentPair,
    pub rotation: MomentPair,
    pub log_scale: MomentPair,
    pub opacity: MomentPair,
    pub sh: MomentPair,
}

/// Per-group learning rates for one step.
#[derive(Debug, Clone, Copy)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl OptimizerState {
    pub fn new(rows: usize) -> Self {
        Self {
            step: 0,
            position: MomentPair::new(rows, 3),
            rotation: MomentPair::new(rows, 4),
            log_scale: MomentPair::new(rows, 2),
            opacity: MomentPair::new(rows, 1),
            sh: MomentPair::new(rows, 48),
        }
    }

    /// Keeps moment rows aligned with splat indices across a rewrite.
    pub fn apply_rewrite(&mut self, rewrite: &Rewrite) {
        self.position.apply_rewrite(rewrite);
        self.rotation.apply_rewrite(rewrite);
        self.log_scale.apply_rewrite(rewrite);
        self.opacity.apply_rewrite(rewrite);
        self.sh.apply_rewrite(rewrite);
    }

    pub fn rows(&self) -> usize {
        self.position.rows()
    }

    /// One bias-corrected update; renormalizes quaternions afterwards.
    pub fn step(&mut self, splats: &mut SplatSet, grads: &SplatGradients, lr: &LearningRates) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let update = |m: &mut f64, v: &mut f64, g: f64, p: &mut f64, lr: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPS);
        };
        let m_splats = splats.len();
        for i in 0..m_splats {
            for a in 0..3 {
                update(
                    &mut self.position.m[i * 3 + a],
                    &mut self.position.v[i * 3 + a],
                    grads.position[i][a],
                    &mut splats.position[i][a],
                    lr.position,
                );
            }
            for a in 0..4 {
                update(
                    &mut self.rotation.m[i * 4 + a],
                    &mut self.rotation.v[i * 4 + a],
                    grads.rotation[i][a],
                    &mut splats.rotation[i][a],
                    lr.rotation,
                );
            }
            for a in 0..2 {
                update(
                    &mut self.log_scale.m[i * 2 + a],
                    &mut self.log_scale.v[i * 2 + a],
                    grads.log_scale[i][a],
                    &mut splats.log_scale[i][a],
                    lr.log_scale,
                );
            }
            update(
                &mut self.opacity.m[i],
                &mut self.opacity.v[i],
                grads.opacity_logit[i],
                &mut splats.opacity_logit[i],
                lr.opacity,
            );
            for k in 0..16 {
                let lr_sh = if k == 0 { lr.sh_dc } else { lr.sh_rest };
                for c in 0..3 {
                    let j = i * 48 + k * 3 + c;
                    update(
                        &mut self.sh.m[j],
                        &mut self.sh.v[j],
                        grads.sh[i][k][c],
                        &mut splats.sh[i][k][c],
                        lr_sh,
                    );
                }
            }
            // Unit-norm invariant after every step.
            let n = splats.rotation[i].norm();
            if n > 0.0 {
                splats.rotation[i] /= n;
            } else {
                splats.rotation[i] = crate::Quat::new(1.0, 0.0, 0.0, 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn unit_grads(m: usize) -> SplatGradients {
        SplatGradients {
            position: vec![Vec3::new(1.0, 0.0, 0.0); m],
            rotation: vec![crate::Quat::zeros(); m],
            log_scale: vec![[0.0; 2]; m],
            opacity_logit: vec![1.0; m],
            sh: vec![[[0.0; 3]; 16]; m],
            screen: vec![[0.0; 2]; m],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut splats = SplatSet::with_len(1);
        let mut opt = OptimizerState::new(1);
        let lr = LearningRates {
            position: 0.01,
            rotation: 0.0,
            log_scale: 0.0,
            opacity: 0.02,
            sh_dc: 0.0,
            sh_rest: 0.0,
        };
        opt.step(&mut splats, &unit_grads(1), &lr);
        // Bias-corrected Adam moves by ~lr on the first step for unit grads.
        assert!((splats.position[0].x + 0.01).abs() < 1e-10);
        assert!((splats.opacity_logit[0] + 0.02).abs() < 1e-10);
        // Quaternion stayed unit.
        assert!((splats.rotation[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rewrite_keeps_rows_aligned_with_sentinels() {
        let mut opt = OptimizerState::new(3);
        // Tag each row with a distinctive value.
        for i in 0..3 {
            opt.position.m[i * 3] = 100.0 + i as f64;
            opt.sh.m[i * 48] = 200.0 + i as f64;
        }
        // Prune row 1, append one fresh row.
        let rewrite = Rewrite {
            kept: vec![0, 2],
            added: 1,
        };
        opt.apply_rewrite(&rewrite);
        assert_eq!(opt.rows(), 3);
        assert_eq!(opt.position.m[0], 100.0);
        assert_eq!(opt.position.m[3], 102.0);
        assert_eq!(opt.position.m[6], 0.0);
        assert_eq!(opt.sh.m[0], 200.0);
        assert_eq!(opt.sh.m[48], 202.0);
        assert_eq!(opt.sh.m[96], 0.0);
    }
}
