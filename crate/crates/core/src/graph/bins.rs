use crate::error::{Error, Result};

/// Half-open distance intervals `[b_k, b_{k+1})` in km; the last bin is open-ended.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceBins {
    bounds: Vec<f64>,
}

impl Default for DistanceBins {
    fn default() -> Self {
        Self {
            bounds: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl DistanceBins {
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.first() != Some(&0.0) {
            return Err(Error::Config("distance bins must start at 0".into()));
        }
        if bounds.windows(2).any(|w| !(w[0] < w[1])) || bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config(
                "distance bin boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bin_of(&self, distance_km: f64) -> Result<usize> {
        if !(distance_km >= 0.0) {
            return Err(Error::Contract(format!("negative distance {distance_km}")));
        }
        // boundary values belong to the upper bin
        Ok(self.bounds.partition_point(|&b| b <= distance_km) - 1)
    }
}
