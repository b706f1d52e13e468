//! Adaptive-moment optimizer over the field's raw parameters.

use rayon::prelude::*;

use crate::field::RadianceField;
use crate::render::FieldGrad;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    params: AdamParams,
    step: u64,
    m_density: Vec<f64>,
    v_density: Vec<f64>,
    m_color: Vec<f64>,
    v_color: Vec<f64>,
}

const CHUNK: usize = 4096;

fn update(p: &mut [f32], m: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, a: &AdamParams, c1: f64, c2: f64) {
    p.par_chunks_mut(CHUNK)
        .zip(m.par_chunks_mut(CHUNK))
        .zip(v.par_chunks_mut(CHUNK))
        .zip(g.par_chunks(CHUNK))
        .for_each(|(((p, m), v), g)| {
            for i in 0..p.len() {
                let gi = g[i];
                if gi == 0.0 && m[i] == 0.0 {
                    continue;
                }
                m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * gi;
                v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = (p[i] as f64 - lr * mh / (vh.sqrt() + a.eps)) as f32;
            }
        });
}

impl Adam {
    pub fn new(field: &RadianceField, params: AdamParams) -> Self {
        let n = field.node_count();
        Self {
            params,
            step: 0,
            m_density: vec![0.0; n],
            v_density: vec![0.0; n],
            m_color: vec![0.0; 3 * n],
            v_color: vec![0.0; 3 * n],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with separate learning rates for density and color parameters.
    ///
    /// Entries whose gradient and first moment are both zero have never seen a
    /// gradient, so skipping them matches the dense update exactly.
    pub fn step(&mut self, field: &mut RadianceField, grad: &FieldGrad, lr_density: f64, lr_color: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.params.beta1.powi(t);
        let c2 = 1.0 - self.params.beta2.powi(t);
        let a = self.params;
        update(field.density_params_mut(), &mut self.m_density, &mut self.v_density, &grad.density, lr_density, &a, c1, c2);
        update(field.color_params_mut(), &mut self.m_color, &mut self.v_color, &grad.color, lr_color, &a, c1, c2);
    }
}
