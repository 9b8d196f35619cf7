//! Splitting the received block into RIS and non-RIS parts and isolating the
//! directional (UE-RIS-SP-UE) and orthogonal (UE-SP-RIS-UE) observations.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{bilinear, steering_vector, CVector, RxSignalBlock, UpaConfig};
use crate::config::T1Precoder;
use crate::error::{Error, Result};
use crate::geometry::AzEl;
use crate::tensor::CTensor3;

/// Precoders of the `T/2` transmission pairs: first the RIS-directed block,
/// then the block with a null towards the RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderPlan {
    pub t1_precoders: Vec<CVector>,
    pub t2_precoders: Vec<CVector>,
}

impl PrecoderPlan {
    pub fn t1(&self) -> usize {
        self.t1_precoders.len()
    }

    pub fn t2(&self) -> usize {
        self.t2_precoders.len()
    }

    /// All `T/2` precoders in transmission order.
    pub fn all(&self) -> Vec<CVector> {
        self.t1_precoders
            .iter()
            .chain(&self.t2_precoders)
            .cloned()
            .collect()
    }
}

/// Number of RIS-directed pairs for a given `T1/T2` ratio.
pub fn t1_count(transmissions: usize, split_ratio: f64) -> usize {
    let half = transmissions / 2;
    let t1 = (half as f64 * split_ratio / (1.0 + split_ratio)).round() as usize;
    t1.clamp(1, half.saturating_sub(1).max(1))
}

fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(n, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let norm = v.norm();
    v / Complex64::new(norm, 0.0)
}

/// Removes the component along unit vector `u` (two passes for accuracy).
fn project_out(v: &CVector, u: &CVector) -> CVector {
    let mut w = v.clone();
    for _ in 0..2 {
        let c = u.dotc(&w);
        w -= u * c;
    }
    w
}

/// Builds the precoders for one epoch.
///
/// RIS-directed precoders are `a*/‖a‖` (or random unit vectors when
/// `t1_mode` is `Random`). Null precoders satisfy `a_U(θ_0)ᵀ f = 0`, which
/// is what cancels the UE-RIS-UE and UE-RIS-SP-UE terms.
pub fn build_precoder_plan<R: Rng + ?Sized>(
    theta_0: AzEl,
    cfg: &UpaConfig,
    wavelength: f64,
    transmissions: usize,
    split_ratio: f64,
    t1_mode: T1Precoder,
    rng: &mut R,
) -> Result<PrecoderPlan> {
    if !transmissions.is_multiple_of(2) {
        return Err(Error::OddTransmissions(transmissions));
    }
    let half = transmissions / 2;
    if half < 2 {
        return Err(Error::InvalidPlan(format!("T/2 = {half} leaves no room for both blocks")));
    }
    if !(split_ratio > 0.0) {
        return Err(Error::InvalidPlan(format!("split ratio {split_ratio}")));
    }
    let n = cfg.len();
    if n < 2 {
        return Err(Error::NoNullSpace);
    }
    let a = steering_vector(cfg, theta_0, wavelength);
    let directed = a.map(|z| z.conj()) / Complex64::new(a.norm(), 0.0);
    let t1 = t1_count(transmissions, split_ratio);
    let t1_precoders = (0..t1)
        .map(|_| match t1_mode {
            T1Precoder::Directional => directed.clone(),
            T1Precoder::Random => random_unit(n, rng),
        })
        .collect();
    let t2_precoders = (t1..half)
        .map(|_| {
            let w = project_out(&random_unit(n, rng), &directed);
            let norm = w.norm();
            w / Complex64::new(norm, 0.0)
        })
        .collect();
    Ok(PrecoderPlan {
        t1_precoders,
        t2_precoders,
    })
}

/// Unitary combiner `[u, W_⊥]` with `u = a_U(θ_0)/‖a_U‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub matrix: DMatrix<Complex64>,
}

impl Combiner {
    pub fn new(theta_0: AzEl, cfg: &UpaConfig, wavelength: f64) -> Result<Self> {
        let n = cfg.len();
        if n < 2 {
            return Err(Error::NoNullSpace);
        }
        let a = steering_vector(cfg, theta_0, wavelength);
        let u = &a / Complex64::new(a.norm(), 0.0);
        // Completion by QR of [u, e_1, ..., e_{N-1}]; u has no zero entries so
        // the matrix is full rank.
        let mut m = DMatrix::<Complex64>::identity(n, n);
        m.set_column(0, &u);
        let mut q = m.qr().q();
        q.set_column(0, &u);
        Ok(Self { matrix: q })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn u(&self) -> CVector {
        self.matrix.column(0).into_owned()
    }

    /// `W_⊥ᴴ v`.
    pub fn project_perp(&self, v: &[Complex64]) -> CVector {
        let n = self.n();
        CVector::from_fn(n - 1, |i, _| {
            let col = self.matrix.column(i + 1);
            col.iter().zip(v).fold(Complex64::new(0.0, 0.0), |acc, (w, y)| acc + w.conj() * y)
        })
    }

    /// `uᴴ v`.
    pub fn project_u(&self, v: &[Complex64]) -> Complex64 {
        self.matrix
            .column(0)
            .iter()
            .zip(v)
            .fold(Complex64::new(0.0, 0.0), |acc, (w, y)| acc + w.conj() * y)
    }
}

/// Pairwise difference (RIS part) and half-sum (non-RIS part).
///
/// The first transmission of each pair uses `+ω̃`, so the half-difference
/// `(y_first − y_second)/2` carries the RIS terms with positive sign.
pub fn split_ris_nonris(rx: &RxSignalBlock) -> Result<(CTensor3, CTensor3)> {
    let [t, n_sc, n_a] = rx.samples.dims();
    if t % 2 != 0 {
        return Err(Error::OddTransmissions(t));
    }
    let half = t / 2;
    let mut y_r = CTensor3::zeros(half, n_sc, n_a);
    let mut y_n = CTensor3::zeros(half, n_sc, n_a);
    for tp in 0..half {
        for s in 0..n_sc {
            let a = rx.samples.at(2 * tp, s);
            let b = rx.samples.at(2 * tp + 1, s);
            for (i, (r, n)) in y_r
                .at_mut(tp, s)
                .iter_mut()
                .zip(y_n.at_mut(tp, s).iter_mut())
                .enumerate()
            {
                *r = (a[i] - b[i]) * 0.5;
                *n = (a[i] + b[i]) * 0.5;
            }
        }
    }
    Ok((y_r, y_n))
}

/// `W_⊥ᴴ y_R` over pairs `0..t1`.
pub fn extract_directional(y_r: &CTensor3, combiner: &Combiner, t1: usize) -> CTensor3 {
    let [_, n_sc, n_a] = y_r.dims();
    let mut out = CTensor3::zeros(t1, n_sc, n_a - 1);
    for tp in 0..t1 {
        for s in 0..n_sc {
            let v = combiner.project_perp(y_r.at(tp, s));
            out.at_mut(tp, s).copy_from_slice(v.as_slice());
        }
    }
    out
}

/// `uᴴ y_R` over pairs `t1..T/2`.
pub fn extract_orthogonal(y_r: &CTensor3, combiner: &Combiner, t1: usize) -> CTensor3 {
    let [half, n_sc, _] = y_r.dims();
    let mut out = CTensor3::zeros(half - t1, n_sc, 1);
    for tp in t1..half {
        for s in 0..n_sc {
            out.at_mut(tp - t1, s)[0] = combiner.project_u(y_r.at(tp, s));
        }
    }
    out
}

/// The three informative observations of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSignals {
    /// `[T1][N_SC][N_U − 1]`
    pub y_d: CTensor3,
    /// `[T2][N_SC][1]`
    pub y_o: CTensor3,
    /// `[T/2][N_SC][N_U]`
    pub y_n: CTensor3,
    /// Noise PSD of each branch, `N_0 / 2`.
    pub branch_noise_psd: f64,
}

pub fn separate(rx: &RxSignalBlock, combiner: &Combiner, t1: usize) -> Result<SeparatedSignals> {
    let (y_r, y_n) = split_ris_nonris(rx)?;
    if t1 > y_r.dims()[0] {
        return Err(Error::InvalidPlan(format!("T1 = {t1} exceeds T/2 = {}", y_r.dims()[0])));
    }
    if combiner.n() != y_r.dims()[2] {
        return Err(Error::DimensionMismatch("combiner size differs from UE array".into()));
    }
    Ok(SeparatedSignals {
        y_d: extract_directional(&y_r, combiner, t1),
        y_o: extract_orthogonal(&y_r, combiner, t1),
        y_n,
        branch_noise_psd: rx.noise_psd / 2.0,
    })
}

/// `a_U(θ_0)ᵀ f` for diagnostics of the null constraint.
pub fn ris_leakage(f: &CVector, theta_0: AzEl, cfg: &UpaConfig, wavelength: f64) -> f64 {
    bilinear(&steering_vector(cfg, theta_0, wavelength), f).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ue() -> UpaConfig {
        UpaConfig::new(4, 4, 0.005).unwrap()
    }

    #[test]
    fn default_split_is_ten_ten() {
        assert_eq!(t1_count(40, 1.0), 10);
        assert_eq!(t1_count(20, 1.0), 5);
        assert_eq!(t1_count(40, 3.0), 15);
        assert_eq!(t1_count(4, 100.0), 1);
    }

    #[test]
    fn plan_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = AzEl::new(0.7, -0.3);
        let plan =
            build_precoder_plan(theta, &ue(), 0.01, 40, 1.0, T1Precoder::Directional, &mut rng)
                .unwrap();
        assert_eq!((plan.t1(), plan.t2()), (10, 10));
        let a = steering_vector(&ue(), theta, 0.01);
        for f in plan.all() {
            assert!((f.norm() - 1.0).abs() < 1e-12);
        }
        for f in &plan.t2_precoders {
            assert!(bilinear(&a, f).norm() < 1e-10);
        }
        for f in &plan.t1_precoders {
            assert!((bilinear(&a, f) - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn plan_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = UpaConfig::new(1, 1, 0.005).unwrap();
        let th = AzEl::default();
        assert!(matches!(
            build_precoder_plan(th, &one, 0.01, 40, 1.0, T1Precoder::Directional, &mut rng),
            Err(Error::NoNullSpace)
        ));
        assert!(matches!(
            build_precoder_plan(th, &ue(), 0.01, 41, 1.0, T1Precoder::Directional, &mut rng),
            Err(Error::OddTransmissions(41))
        ));
        assert!(build_precoder_plan(th, &ue(), 0.01, 2, 1.0, T1Precoder::Directional, &mut rng)
            .is_err());
    }

    #[test]
    fn combiner_is_unitary_with_null() {
        let theta = AzEl::new(-1.1, 0.4);
        let c = Combiner::new(theta, &ue(), 0.01).unwrap();
        let w = &c.matrix;
        let gram = w.adjoint() * w;
        let eye = DMatrix::<Complex64>::identity(16, 16);
        assert!((gram - eye).norm() < 1e-10);
        let a = steering_vector(&ue(), theta, 0.01);
        assert!(c.project_perp(a.as_slice()).norm() < 1e-10);
        assert!((c.u() - &a / Complex64::new(4.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn split_rejects_odd() {
        let rx = RxSignalBlock {
            samples: CTensor3::zeros(3, 2, 2),
            noise_psd: 1.0,
        };
        assert!(matches!(split_ris_nonris(&rx), Err(Error::OddTransmissions(3))));
    }
}
