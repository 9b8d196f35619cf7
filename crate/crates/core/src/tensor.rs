use num_complex::Complex64;

/// Dense complex tensor indexed `[transmission][subcarrier][antenna]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor3 {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl CTensor3 {
    pub fn zeros(n_t: usize, n_sc: usize, n_a: usize) -> Self {
        Self {
            dims: [n_t, n_sc, n_a],
            data: vec![Complex64::new(0.0, 0.0); n_t * n_sc * n_a],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn offset(&self, t: usize, s: usize) -> usize {
        (t * self.dims[1] + s) * self.dims[2]
    }

    /// Antenna vector at `(t, s)`.
    #[inline]
    pub fn at(&self, t: usize, s: usize) -> &[Complex64] {
        let o = self.offset(t, s);
        &self.data[o..o + self.dims[2]]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, s: usize) -> &mut [Complex64] {
        let o = self.offset(t, s);
        let n = self.dims[2];
        &mut self.data[o..o + n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Element-wise difference energy `sum |a - b|^2`.
    pub fn distance_sqr(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }
}
