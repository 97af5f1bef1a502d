use crate::error::{NvcError, Result};

/// Four-step spatial decode order over the 2x2 phases of a latent grid.
///
/// Step 0 decodes (even row, even col), step 1 (odd, odd), step 2
/// (even, odd) and step 3 (odd, even). A step's parameters may only depend on
/// positions of earlier steps; within a step positions are independent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadtreeSchedule {
    pub height: usize,
    pub width: usize,
}

pub const STEPS: usize = 4;
const PHASES: [(usize, usize); STEPS] = [(0, 0), (1, 1), (0, 1), (1, 0)];

impl QuadtreeSchedule {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
            return Err(NvcError::OddDimensions { width, height });
        }
        Ok(QuadtreeSchedule { height, width })
    }

    pub fn steps(&self) -> usize {
        STEPS
    }

    pub fn step_of(&self, y: usize, x: usize) -> usize {
        PHASES
            .iter()
            .position(|&p| p == (y % 2, x % 2))
            .expect("every phase is scheduled")
    }

    /// Row-major positions decoded at `step`.
    pub fn positions(&self, step: usize) -> Vec<(usize, usize)> {
        let (py, px) = PHASES[step];
        let mut out = Vec::with_capacity(self.height * self.width / 4);
        for y in (py..self.height).step_by(2) {
            for x in (px..self.width).step_by(2) {
                out.push((y, x));
            }
        }
        out
    }

    /// Flat row-major indices decoded at `step`.
    pub fn indices(&self, step: usize) -> Vec<usize> {
        self.positions(step)
            .into_iter()
            .map(|(y, x)| y * self.width + x)
            .collect()
    }

    /// 1.0 where a position is decoded at `step`.
    pub fn step_mask(&self, step: usize) -> Vec<f32> {
        let mut m = vec![0.0; self.height * self.width];
        for i in self.indices(step) {
            m[i] = 1.0;
        }
        m
    }

    /// 1.0 where a position is already known before `step` runs.
    pub fn known_mask(&self, step: usize) -> Vec<f32> {
        let mut m = vec![0.0; self.height * self.width];
        for s in 0..step {
            for i in self.indices(s) {
                m[i] = 1.0;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_has_four_per_group() {
        let s = QuadtreeSchedule::new(4, 4).unwrap();
        for k in 0..4 {
            assert_eq!(s.positions(k).len(), 4);
        }
    }

    #[test]
    fn groups_partition_the_grid() {
        for (h, w) in [(2, 2), (4, 6), (8, 12), (16, 4)] {
            let s = QuadtreeSchedule::new(h, w).unwrap();
            let mut seen = vec![0u8; h * w];
            for k in 0..4 {
                for i in s.indices(k) {
                    seen[i] += 1;
                    assert_eq!(s.step_of(i / w, i % w), k);
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
            let total: f32 = s.known_mask(4).iter().sum();
            assert_eq!(total as usize, h * w);
            assert!(s.known_mask(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(matches!(QuadtreeSchedule::new(3, 4), Err(NvcError::OddDimensions { .. })));
    }
}
