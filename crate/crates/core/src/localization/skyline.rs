//! Symmetric positive-definite solver over an envelope (skyline) profile.
//!
//! Row `i` stores the lower triangle from column `first[i]` to the diagonal.
//! Cholesky fill-in stays inside the envelope, so a pose graph ordered by
//! target and time factors in time linear in the number of keyframes.

#[derive(Debug, Clone, PartialEq)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    /// `first[i] <= i` is the leftmost column that may be non-zero in row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope column {f} right of diagonal in row {i}");
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            data: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.start[i] + j - self.first[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` at `(i, j)` of the symmetric matrix (once, not mirrored).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place `L Lᵀ` factorization. On failure returns the row whose
    /// pivot was not positive.
    pub fn factor(&mut self) -> Result<(), usize> {
        self.factor_with_threshold(0.0)
    }

    /// Like [`Skyline::factor`] but also fails when a pivot drops below
    /// `rel` times the original diagonal entry, i.e. the matrix is
    /// numerically singular.
    pub fn factor_with_threshold(&mut self, rel: f64) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                let mut sum = self.data[self.idx(i, j)];
                let (ri, rj) = (self.idx(i, lo), self.idx(j, lo));
                for k in 0..(j - lo) {
                    sum -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    let orig = self.data[self.idx(i, i)];
                    if !(sum > rel * orig.abs()) || !(sum > 0.0) || !sum.is_finite() {
                        return Err(i);
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` after [`Skyline::factor`].
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let mut sum = b[i];
            let r = self.idx(i, fi);
            for k in fi..i {
                sum -= self.data[r + k - fi] * b[k];
            }
            b[i] = sum / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            b[i] /= self.data[self.idx(i, i)];
            let fi = self.first[i];
            let r = self.idx(i, fi);
            let bi = b[i];
            for k in fi..i {
                b[k] -= self.data[r + k - fi] * bi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_dense_cholesky(
            n in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let first: Vec<usize> = (0..n).map(|i| rng.random_range(0..=i)).collect();
            // SPD matrix with the given envelope: diagonally dominant
            let mut dense = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in first[i]..i {
                    let v = rng.random_range(-1.0..1.0);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
            }
            for i in 0..n {
                let row: f64 = (0..n).map(|j| dense[(i, j)].abs()).sum();
                dense[(i, i)] = row + 1.0;
            }
            let mut sky = Skyline::new(first.clone());
            for i in 0..n {
                for j in first[i]..=i {
                    sky.add(i, j, dense[(i, j)]);
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let expect = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
            sky.factor().unwrap();
            let mut x = b;
            sky.solve(&mut x);
            for i in 0..n {
                prop_assert!((x[i] - expect[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn indefinite_reports_row() {
        let mut s = Skyline::new(vec![0, 0]);
        s.add(0, 0, 1.0);
        s.add(1, 0, 2.0);
        s.add(1, 1, 1.0);
        assert_eq!(s.factor(), Err(1));
    }
}
