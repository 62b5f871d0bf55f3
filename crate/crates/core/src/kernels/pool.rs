use crate::tensors::IntTensor;

/// Per-class sums over the whole feature map, with the divisor kept
/// separately so the mean stays exact.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolScores {
    pub sums: Vec<i64>,
    pub count: usize,
}

impl PoolScores {
    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().map(|&s| s as f64 / self.count as f64).collect()
    }

    /// Adds another partial sum over a disjoint region.
    pub fn merge(&mut self, other: &PoolScores) {
        if self.sums.is_empty() {
            self.sums = vec![0; other.sums.len()];
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
    }
}

pub fn global_avg_pool(x: &IntTensor) -> PoolScores {
    let mut sums = vec![0i64; x.channels];
    if x.channels > 0 {
        for px in x.data.chunks_exact(x.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as i64;
            }
        }
    }
    PoolScores {
        sums,
        count: x.height * x.width,
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict(scores: &[i64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
