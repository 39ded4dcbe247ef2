//! Unscrambled Sobol low-discrepancy points (Gray-code order) for up to ten
//! dimensions, using the Joe-Kuo direction numbers.

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=10; dimension 1 is the van der
/// Corput sequence.
const JOE_KUO: [(u32, u32, &[u32]); 9] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

pub const MAX_DIM: usize = JOE_KUO.len() + 1;

#[derive(Debug, Clone)]
pub struct Sobol {
    dirs: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "Sobol dimension must be in 1..={MAX_DIM}");
        let mut dirs = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (i, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - i);
        }
        dirs.push(first);
        for &(s, a, m) in JOE_KUO.iter().take(dim - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for i in 0..s.min(BITS) {
                v[i] = m[i] << (BITS - 1 - i);
            }
            for i in s..BITS {
                let mut x = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= v[i - k];
                    }
                }
                v[i] = x;
            }
            dirs.push(v);
        }
        Sobol { dirs, state: vec![0; dim], index: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    /// Next point; the first call returns the origin.
    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let out = self.state.iter().map(|&x| x as f64 * scale).collect();
        let c = (!self.index).trailing_zeros() as usize;
        for (s, d) in self.state.iter_mut().zip(&self.dirs) {
            *s ^= d[c.min(BITS - 1)];
        }
        self.index += 1;
        out
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}
