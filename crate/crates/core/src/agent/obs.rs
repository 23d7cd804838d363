use crate::diffmath::Matrix;
use crate::mazeworld::MazeSpec;

/// Maps `(pos, goal)` in maze units to the network input, each coordinate
/// rescaled from the maze box to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsEncoder {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl ObsEncoder {
    pub fn new(spec: &MazeSpec) -> Self {
        let (lo, hi) = spec.bounds();
        ObsEncoder { lo, hi }
    }

    fn scale(&self, p: [f64; 2]) -> [f64; 2] {
        let f = |i: usize| 2.0 * (p[i] - self.lo[i]) / (self.hi[i] - self.lo[i]) - 1.0;
        [f(0), f(1)]
    }

    pub fn encode(&self, pos: [f64; 2], goal: [f64; 2]) -> [f64; 4] {
        let (p, g) = (self.scale(pos), self.scale(goal));
        [p[0], p[1], g[0], g[1]]
    }

    pub fn encode_rows(&self, rows: impl IntoIterator<Item = ([f64; 2], [f64; 2])>) -> Matrix {
        let mut data = Vec::new();
        for (p, g) in rows {
            data.extend_from_slice(&self.encode(p, g));
        }
        let n = data.len() / 4;
        Matrix::from_vec(n, 4, data).expect("four columns per row")
    }
}
