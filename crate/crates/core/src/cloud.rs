use crate::error::{Error, Result};
use crate::scalar::Real;

/// Scattered samples of a state density together with the density value at
/// each sample: `{x^i(t), ρ^i(t)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCloud<T> {
    time: T,
    dim: usize,
    states: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> WeightedCloud<T> {
    /// `states` is row-major `N × dim`.
    pub fn new(time: T, dim: usize, states: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cloud dimension", "must be positive"));
        }
        if states.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch {
                what: "cloud states",
                expected: weights.len() * dim,
                found: states.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::invalid(
                "cloud weights",
                "must be finite and nonnegative",
            ));
        }
        if states.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("cloud states", "must be finite"));
        }
        Ok(Self {
            time,
            dim,
            states,
            weights,
        })
    }

    pub fn time(&self) -> T {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Values of one coordinate across all samples.
    pub fn coordinate(&self, k: usize) -> Vec<T> {
        (0..self.len()).map(|i| self.state(i)[k]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.states
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Samples restricted to the coordinates `dims`, weights unchanged.
    pub fn project(&self, dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&k| k >= self.dim) {
            return Err(Error::invalid("projection dims", "indices out of range"));
        }
        let states = self
            .states
            .chunks_exact(self.dim)
            .flat_map(|x| dims.iter().map(move |&k| x[k]))
            .collect();
        Self::new(self.time, dims.len(), states, self.weights.clone())
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: T) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| w * factor).collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_weights() {
        assert!(WeightedCloud::new(0.0, 2, vec![0.0; 4], vec![1.0, 1.0]).is_ok());
        assert!(WeightedCloud::new(0.0, 2, vec![0.0; 3], vec![1.0, 1.0]).is_err());
        assert!(WeightedCloud::new(0.0, 2, vec![0.0; 4], vec![1.0, -1.0]).is_err());
        assert!(WeightedCloud::new(0.0, 1, vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn accessors() {
        let c = WeightedCloud::new(0.5, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.2]).unwrap();
        assert_eq!(c.state(1), &[3.0, 4.0]);
        assert_eq!(c.coordinate(0), vec![1.0, 3.0]);
        assert_eq!(c.iter().count(), 2);
        assert_eq!(c.scaled_weights(2.0).weights(), &[0.2, 0.4]);
    }
}
