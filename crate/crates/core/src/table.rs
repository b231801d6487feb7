use std::ops::{Index, IndexMut};

use crate::error::{param, Result};

/// Dense real table indexed by (state, action), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

/// Critic estimate `Q_k`, or an exact `Q^π`.
pub type QTable = SaTable;
/// STORM momentum estimate `h_k`.
pub type MomentumTable = SaTable;
/// Exact policy gradient with respect to the softmax logits.
pub type GradientTable = SaTable;

impl SaTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::filled(num_states, num_actions, 0.0)
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            data: vec![value; num_states * num_actions],
        }
    }

    pub fn from_vec(num_states: usize, num_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions {
            return param(format!(
                "table of {}x{} needs {} entries, got {}",
                num_states,
                num_actions,
                num_states * num_actions,
                data.len()
            ));
        }
        Ok(Self {
            num_states,
            num_actions,
            data,
        })
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                data.push(f(s, a));
            }
        }
        Self {
            num_states,
            num_actions,
            data,
        }
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_states, self.num_actions)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    /// Elementwise `self - other`. Panics on shape mismatch.
    pub fn sub(&self, other: &SaTable) -> SaTable {
        self.zip_with(other, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product. Panics on shape mismatch.
    pub fn hadamard(&self, other: &SaTable) -> SaTable {
        self.zip_with(other, |x, y| x * y)
    }

    pub fn zip_with(&self, other: &SaTable, f: impl Fn(f64, f64) -> f64) -> SaTable {
        assert_eq!(self.shape(), other.shape(), "table shape mismatch");
        SaTable {
            num_states: self.num_states,
            num_actions: self.num_actions,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &SaTable) {
        assert_eq!(self.shape(), other.shape(), "table shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += scale * y;
        }
    }

    pub fn max_abs_diff(&self, other: &SaTable) -> f64 {
        self.sub(other).norm_inf()
    }
}

impl Index<(usize, usize)> for SaTable {
    type Output = f64;

    #[inline]
    fn index(&self, (s, a): (usize, usize)) -> &f64 {
        &self.data[s * self.num_actions + a]
    }
}

impl IndexMut<(usize, usize)> for SaTable {
    #[inline]
    fn index_mut(&mut self, (s, a): (usize, usize)) -> &mut f64 {
        &mut self.data[s * self.num_actions + a]
    }
}
