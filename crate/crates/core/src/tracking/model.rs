//! Measurement model of a static scattering point and its Jacobian.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::detection::Branch;
use crate::error::{Error, Result};
use crate::geometry::{azel_jacobian, channel_params, Pose, SPEED_OF_LIGHT};
use crate::linalg::ScaledCholesky;
use crate::measurement::{measurement_dim, residual, true_measurement};

/// Filter a measurement branch feeds: the RIS filter takes D, O and merged
/// measurements, the non-RIS filter takes N.
pub fn filter_branch(branch: Branch) -> Branch {
    match branch {
        Branch::N => Branch::N,
        _ => Branch::R,
    }
}

/// Predicted measurement of a scatterer at `x`.
pub fn measurement_model(branch: Branch, x: &Vector3<f64>, ue: &Pose, ris: &Pose) -> Result<DVector<f64>> {
    let p = channel_params(ue, ris, Some(x))?;
    Ok(true_measurement(filter_branch(branch), &p))
}

/// Jacobian of [`measurement_model`] with respect to `x`.
pub fn measurement_jacobian(branch: Branch, x: &Vector3<f64>, ue: &Pose, ris: &Pose) -> Result<DMatrix<f64>> {
    let to_ue = x - ue.position;
    let to_ris = x - ris.position;
    let (d_su, d_sr) = (to_ue.norm(), to_ris.norm());
    if d_su < 1e-9 || d_sr < 1e-9 {
        return Err(Error::DegenerateGeometry("scatterer coincides with UE or RIS"));
    }
    let j_theta = azel_jacobian(&ue.to_local(&to_ue)) * ue.global_to_local;
    let u_ue = to_ue / d_su;
    match filter_branch(branch) {
        Branch::N => {
            let mut j = DMatrix::zeros(3, 3);
            j.row_mut(0).copy_from(&(u_ue * (2.0 / SPEED_OF_LIGHT)).transpose());
            j.view_mut((1, 0), (2, 3)).copy_from(&j_theta);
            Ok(j)
        }
        _ => {
            let j_phi = azel_jacobian(&ris.to_local(&to_ris)) * ris.global_to_local;
            let grad_tau = (u_ue + to_ris / d_sr) / SPEED_OF_LIGHT;
            let mut j = DMatrix::zeros(5, 3);
            j.view_mut((0, 0), (2, 3)).copy_from(&j_phi);
            j.row_mut(2).copy_from(&grad_tau.transpose());
            j.view_mut((3, 0), (2, 3)).copy_from(&j_theta);
            Ok(j)
        }
    }
}

/// Initial position from a measurement by inverting the geometry: UE-side
/// direction plus the range implied by the delay.
pub fn invert_measurement(branch: Branch, z: &DVector<f64>, ue: &Pose, ris: &Pose) -> Option<Vector3<f64>> {
    let b = filter_branch(branch);
    let (tau, az, el) = match b {
        Branch::N => (z[0], z[1], z[2]),
        _ => (z[2], z[3], z[4]),
    };
    let local = crate::geometry::AzEl::new(az, el).unit_vector();
    let u: Vector3<f64> = ue.global_to_local.transpose() * local;
    let range = match b {
        Branch::N => SPEED_OF_LIGHT * tau / 2.0,
        _ => {
            let p = ue.position - ris.position;
            let l = SPEED_OF_LIGHT * tau - p.norm();
            let denom = 2.0 * (p.dot(&u) + l);
            if denom.abs() < 1e-12 {
                return None;
            }
            (l * l - p.dot(&p)) / denom
        }
    };
    if !(range > 0.0) || !range.is_finite() {
        return None;
    }
    Some(ue.position + u * range)
}

/// Result of the single-measurement position fit used for births.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFit {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// `ln ∫ N(z; h(x), R) dx` by the Laplace approximation.
    pub ln_evidence: f64,
}

/// Weighted least-squares position fit of one measurement by Gauss-Newton,
/// started from [`invert_measurement`].
pub fn fit_point(branch: Branch, z: &DVector<f64>, cov: &DMatrix<f64>, ue: &Pose, ris: &Pose) -> Option<PointFit> {
    let rc = ScaledCholesky::new(cov)?;
    let fb = filter_branch(branch);
    let mut x = invert_measurement(branch, z, ue, ris)?;
    let cost = |x: &Vector3<f64>| -> Option<f64> {
        let h = measurement_model(branch, x, ue, ris).ok()?;
        Some(rc.quad_form(&residual(fb, z, &h)))
    };
    let mut c = cost(&x)?;
    for _ in 0..20 {
        let h = measurement_model(branch, &x, ue, ris).ok()?;
        let jac = measurement_jacobian(branch, &x, ue, ris).ok()?;
        let r = residual(fb, z, &h);
        let rinv_j = DMatrix::from_columns(
            &(0..3).map(|k| rc.solve(&jac.column(k).into_owned())).collect::<Vec<_>>(),
        );
        let info = jac.transpose() * &rinv_j;
        let grad = rinv_j.transpose() * &r;
        let ic = ScaledCholesky::new(&info)?;
        let step = ic.solve(&grad);
        let step = Vector3::new(step[0], step[1], step[2]);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let cand = x + step * t;
            if let Some(cc) = cost(&cand) {
                if cc <= c {
                    x = cand;
                    improved = (c - cc) > 1e-12 * c.max(1e-300);
                    c = cc;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved || step.norm() * t < 1e-9 {
            break;
        }
    }
    let h = measurement_model(branch, &x, ue, ris).ok()?;
    let jac = measurement_jacobian(branch, &x, ue, ris).ok()?;
    let rinv_j = DMatrix::from_columns(
        &(0..3).map(|k| rc.solve(&jac.column(k).into_owned())).collect::<Vec<_>>(),
    );
    let info = jac.transpose() * rinv_j;
    let ic = ScaledCholesky::new(&info)?;
    let p = ic.inverse();
    let m = measurement_dim(fb) as f64;
    let r = residual(fb, z, &h);
    let ln_two_pi = (2.0 * std::f64::consts::PI).ln();
    let ln_lik = -0.5 * (rc.quad_form(&r) + rc.ln_det() + m * ln_two_pi);
    let ln_evidence = ln_lik + 1.5 * ln_two_pi - 0.5 * ic.ln_det();
    Some(PointFit {
        mean: x,
        cov: Matrix3::from_fn(|i, j| p[(i, j)]),
        ln_evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Pose, Pose) {
        let ris = Pose::facing(Vector3::new(30.0, 0.0, 20.0), Vector3::x()).unwrap();
        let ue = Pose::yawed(Vector3::new(48.0, -20.0, 0.0), 1.7);
        (ue, ris)
    }

    #[test]
    fn inversion_recovers_position() {
        let (ue, ris) = setup();
        let x = Vector3::new(40.0, 12.0, 5.0);
        for b in [Branch::R, Branch::N] {
            let z = measurement_model(b, &x, &ue, &ris).unwrap();
            let back = invert_measurement(b, &z, &ue, &ris).unwrap();
            assert!((back - x).norm() < 1e-8, "{b:?}");
        }
    }

    #[test]
    fn fit_with_small_noise_is_exact_and_tight() {
        let (ue, ris) = setup();
        let x = Vector3::new(35.0, -5.0, 8.0);
        let z = measurement_model(Branch::R, &x, &ue, &ris).unwrap();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e-6, 1e-20, 1e-6, 1e-6]));
        let fit = fit_point(Branch::R, &z, &cov, &ue, &ris).unwrap();
        assert!((fit.mean - x).norm() < 1e-6);
        assert!(fit.cov.trace() < 1e-2);
    }

    #[test]
    fn delay_exceeds_ris_round_trip() {
        let (ue, ris) = setup();
        let tau0 = 2.0 * (ue.position - ris.position).norm() / SPEED_OF_LIGHT;
        let z = measurement_model(Branch::R, &Vector3::new(45.0, 30.0, 3.0), &ue, &ris).unwrap();
        assert!(z[2] > tau0);
    }
}
