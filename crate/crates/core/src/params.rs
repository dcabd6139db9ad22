//! Named parameter tensors, their shape manifest and gradient buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    manifest: Vec<ShapeEntry>,
    values: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            manifest: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a zero-filled `rows × cols` tensor. Vectors use `cols == 1`.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let name = name.into();
        debug_assert!(self.manifest.iter().all(|e| e.name != name), "duplicate {name}");
        self.manifest.push(ShapeEntry { name, rows, cols });
        self.values.push(vec![0.0; rows * cols]);
        ParamId(self.values.len() - 1)
    }

    /// Fills every tensor from U[-range, range] in registration order.
    pub fn init_uniform(&mut self, range: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.values {
            for x in v.iter_mut() {
                *x = rng.gen_range(-range..=range);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn manifest(&self) -> &[ShapeEntry] {
        &self.manifest
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let e = &self.manifest[id.0];
        (e.rows, e.cols)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.manifest[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.manifest.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Replaces all values after checking that `other` has the same manifest.
    pub fn load_from(&mut self, manifest: &[ShapeEntry], values: Vec<Vec<f64>>) -> Result<()> {
        if manifest != self.manifest.as_slice() {
            let first = manifest
                .iter()
                .zip(&self.manifest)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{a:?} vs expected {b:?}"))
                .unwrap_or_else(|| {
                    format!("{} tensors vs expected {}", manifest.len(), self.manifest.len())
                });
            return Err(Error::Checkpoint(format!("shape manifest mismatch: {first}")));
        }
        for (e, v) in manifest.iter().zip(&values) {
            if v.len() != e.rows * e.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds {} values, manifest says {}",
                    e.name,
                    v.len(),
                    e.rows * e.cols
                )));
            }
        }
        self.values = values;
        Ok(())
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// One gradient buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ParamStore) -> Self {
        Gradients {
            data: params.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Rescales to `max_norm` when the global norm exceeds it; returns the
    /// norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.values.iter().map(|v| vec![0.0; v.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.data.iter().enumerate() {
            let (m, v, p) = (&mut self.first[i], &mut self.second[i], &mut params.values[i]);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_is_seeded_and_bounded() {
        let build = |seed| {
            let mut p = ParamStore::new();
            p.add("w", 3, 4);
            p.add("b", 3, 1);
            p.init_uniform(0.1, seed);
            p
        };
        let (a, b, c) = (build(1), build(1), build(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.values().iter().flatten().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let mut p = ParamStore::new();
        p.add("w", 2, 2);
        let other = vec![ShapeEntry {
            name: "w".into(),
            rows: 2,
            cols: 3,
        }];
        assert!(p.load_from(&other, vec![vec![0.0; 6]]).is_err());
        let same = p.manifest().to_vec();
        assert!(p.load_from(&same, vec![vec![1.0; 3]]).is_err());
        p.load_from(&same, vec![vec![1.0; 4]]).unwrap();
        assert_eq!(p.get(ParamId(0)), &[1.0; 4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let id = p.add("x", 2, 1);
        let mut adam = Adam::new(&p);
        let g = Gradients {
            data: vec![vec![0.5, -2.0]],
        };
        adam.step(&mut p, &g, 0.01);
        // bias-corrected first step is lr * sign(g)
        assert!((p.get(id)[0] + 0.01).abs() < 1e-9);
        assert!((p.get(id)[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = Gradients {
            data: vec![vec![3.0], vec![4.0]],
        };
        assert_eq!(g.clip(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
