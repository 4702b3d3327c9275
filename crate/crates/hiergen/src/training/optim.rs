//! Adam with fixed hyperparameters and bias correction. Frozen tensors
//! are skipped entirely.

use serde::{Deserialize, Serialize};

use crate::model::params::{AttnParams, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    t: usize,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    fn lane(&mut self, i: usize, len: usize) {
        while self.m.len() <= i {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[i].len() != len {
            self.m[i] = vec![0.0; len];
            self.v[i] = vec![0.0; len];
        }
    }

    fn update_lane(
        cfg: &AdamConfig,
        t: usize,
        m: &mut [f32],
        v: &mut [f32],
        w: &mut [f32],
        g: &[f32],
    ) {
        let b1 = cfg.beta1 as f32;
        let b2 = cfg.beta2 as f32;
        let corr1 = 1.0 - (cfg.beta1 as f32).powi(t as i32);
        let corr2 = 1.0 - (cfg.beta2 as f32).powi(t as i32);
        let lr = cfg.lr as f32;
        let eps = cfg.eps as f32;
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / corr1;
            let vhat = v[i] / corr2;
            w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    /// One step over a full model; gradient structure must match.
    pub fn step_model(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>) {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let gt: Vec<&[f32]> = grads.tensors().iter().map(|(_, g)| g.mat.data.as_slice()).collect();
        let mut sizes = Vec::with_capacity(gt.len());
        for g in &gt {
            sizes.push(g.len());
        }
        for (i, len) in sizes.iter().enumerate() {
            self.lane(i, *len);
        }
        let m = &mut self.m;
        let v = &mut self.v;
        let mut i = 0;
        params.visit_tensors_mut(|_, tensor| {
            if !tensor.frozen {
                Self::update_lane(&cfg, t, &mut m[i], &mut v[i], &mut tensor.mat.data, gt[i]);
            }
            i += 1;
        });
    }

    /// One step over a decoder attention stack.
    pub fn step_attn(&mut self, params: &mut [AttnParams<f32>], grads: &[AttnParams<f32>]) {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let mut i = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pt, gt) in [
                (&mut p.w_qkv, &g.w_qkv),
                (&mut p.b_qkv, &g.b_qkv),
                (&mut p.w_o, &g.w_o),
                (&mut p.b_o, &g.b_o),
            ] {
                self.lane(i, gt.mat.data.len());
                if !pt.frozen {
                    Self::update_lane(
                        &cfg,
                        t,
                        &mut self.m[i],
                        &mut self.v[i],
                        &mut pt.mat.data,
                        &gt.mat.data,
                    );
                }
                i += 1;
            }
        }
    }
}
