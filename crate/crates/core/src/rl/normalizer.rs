use serde::{Deserialize, Serialize};

/// Running per-feature standardization with clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    pub clip: f64,
    pub eps: f64,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip: 5.0, eps: 1e-2 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|m| if self.count > 1.0 { (m / self.count).sqrt().max(self.eps) } else { 1.0 })
            .collect()
    }

    /// Welford update with one sample.
    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "normalizer width");
        self.count += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let std = self.std();
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(&std)
                .map(|((v, m), s)| ((v - m) / s).clamp(-self.clip, self.clip)),
        );
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }
}
