//! Banded LU with partial pivoting for the implicit stepper.

use crate::scalar::Real;

/// Square band matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix<S> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<S>,
    pivots: Vec<usize>,
    factored: bool,
}

impl<S: Real> BandMatrix<S> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![S::zero(); n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, S::one());
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku + self.kl || j >= self.n {
            None
        } else {
            Some(i * self.width + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.slot(i, j).map_or(S::zero(), |s| self.data[s])
    }

    /// Panics if `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "({i},{j}) outside band"
        );
        let s = self.slot(i, j).expect("in band");
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: S) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert!(!self.factored);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorisation. Returns `Err(k)` on an exactly zero pivot.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.n;
        let reach = self.ku + self.kl;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == S::zero() {
                return Err(k);
            }
            self.pivots[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j).unwrap();
                    let b = self.slot(p, j).unwrap();
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k).unwrap()];
            for i in k + 1..=last {
                let sik = self.slot(i, k).unwrap();
                let l = self.data[sik] / d;
                self.data[sik] = l;
                if l != S::zero() {
                    for j in k + 1..=jmax {
                        let skj = self.data[self.slot(k, j).unwrap()];
                        let sij = self.slot(i, j).unwrap();
                        self.data[sij] = self.data[sij] - l * skj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [S]) {
        assert!(self.factored, "factor() first");
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            for i in k + 1..=last {
                b[i] = b[i] - self.get(i, k) * b[k];
            }
        }
        let reach = self.ku + self.kl;
        for i in (0..n).rev() {
            let jmax = (i + reach).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=jmax {
                s = s - self.get(i, j) * b[j];
            }
            b[i] = s / self.get(i, i);
        }
    }
}
