//! Generalized covariance intersection of two PMB posteriors.

use nalgebra::{Matrix3, Vector3};

use super::pmb::{Bernoulli, PmbPosterior};
use crate::error::{Error, Result};

/// `N(x; m, P)^w = c_w · N(x; m, P/w)`; returns `ln c_w`.
fn ln_power_constant(w: f64, cov: &Matrix3<f64>) -> f64 {
    let d = 3.0;
    0.5 * d * (1.0 - w) * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * (1.0 - w) * cov.determinant().ln()
        - 0.5 * d * w.ln()
}

fn ln_gaussian(x: &Vector3<f64>, m: &Vector3<f64>, p: &Matrix3<f64>) -> Option<f64> {
    let chol = p.cholesky()?;
    let d = x - m;
    let q = d.dot(&chol.solve(&d));
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (q + ln_det + 3.0 * (2.0 * std::f64::consts::PI).ln()))
}

/// `Δᵀ (P_a + P_b)⁻¹ Δ` between the means of two components.
fn match_distance(x: &Bernoulli, y: &Bernoulli) -> Option<f64> {
    let d = x.mean - y.mean;
    let inv = (x.cov + y.cov).try_inverse()?;
    Some((d.transpose() * inv * d)[0])
}

/// Fused Gaussian and `ln ∫ f_1^{w_1} f_2^{w_2} dx`.
pub fn ci_gaussian(
    a: &Bernoulli,
    b: &Bernoulli,
    wa: f64,
    wb: f64,
) -> Option<(Vector3<f64>, Matrix3<f64>, f64)> {
    let ia = a.cov.try_inverse()?;
    let ib = b.cov.try_inverse()?;
    let info = ia * wa + ib * wb;
    let cov = info.try_inverse()?;
    let cov = (cov + cov.transpose()) * 0.5;
    let mean = cov * (ia * a.mean * wa + ib * b.mean * wb);
    let ln_g = ln_power_constant(wa, &a.cov)
        + ln_power_constant(wb, &b.cov)
        + ln_gaussian(&a.mean, &b.mean, &(a.cov / wa + b.cov / wb))?;
    Some((mean, cov, ln_g))
}

/// GCI existence `r_f` of a matched pair.
pub fn fused_existence(ra: f64, rb: f64, wa: f64, wb: f64, ln_g: f64) -> f64 {
    let num = ra.powf(wa) * rb.powf(wb) * ln_g.exp();
    let den = (1.0 - ra).powf(wa) * (1.0 - rb).powf(wb) + num;
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Existence of a component without a counterpart, `r^w / (r^w + (1 − r)^w)`.
pub fn unmatched_existence(r: f64, w: f64) -> f64 {
    let a = r.powf(w);
    let b = (1.0 - r).powf(w);
    if a + b > 0.0 {
        a / (a + b)
    } else {
        0.0
    }
}

/// Fuses two posteriors over the same region.
///
/// Bernoullis are paired greedily by `Δᵀ (P_a + P_b)⁻¹ Δ < gate`; pairs are
/// fused with covariance intersection and the GCI existence rule, unpaired
/// components keep their density with existence `r^w / (r^w + (1 − r)^w)`
/// unless they gate with an already matched component of the other side.
/// A filter with weight zero contributes nothing.
pub fn gci_fuse(a: &PmbPosterior, b: &PmbPosterior, wa: f64, wb: f64, gate: f64) -> Result<PmbPosterior> {
    if !(0.0..=1.0).contains(&wa) || !(0.0..=1.0).contains(&wb) || (wa + wb - 1.0).abs() > 1e-9 {
        return Err(Error::WeightViolation(wa, wb));
    }
    if wb == 0.0 {
        return Ok(a.clone());
    }
    if wa == 0.0 {
        return Ok(b.clone());
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.bernoullis.iter().enumerate() {
        for (j, y) in b.bernoullis.iter().enumerate() {
            if let Some(d2) = match_distance(x, y) {
                if d2 < gate {
                    pairs.push((d2, i, j));
                }
            }
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; a.bernoullis.len()];
    let mut used_b = vec![false; b.bernoullis.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        let (x, y) = (&a.bernoullis[i], &b.bernoullis[j]);
        if let Some((mean, cov, ln_g)) = ci_gaussian(x, y, wa, wb) {
            used_a[i] = true;
            used_b[j] = true;
            out.push(Bernoulli { r: fused_existence(x.r, y.r, wa, wb, ln_g), mean, cov });
        }
    }
    // An unmatched component gating with a matched one of the other
    // posterior is a duplicate of an already fused object.
    let redundant = |x: &Bernoulli, others: &[Bernoulli], used: &[bool]| {
        others
            .iter()
            .zip(used)
            .any(|(y, &u)| u && match_distance(x, y).is_some_and(|d2| d2 < gate))
    };
    for (x, &used) in a.bernoullis.iter().zip(&used_a) {
        if !used && !redundant(x, &b.bernoullis, &used_b) {
            out.push(Bernoulli { r: unmatched_existence(x.r, wa), mean: x.mean, cov: x.cov });
        }
    }
    for (x, &used) in b.bernoullis.iter().zip(&used_b) {
        if !used && !redundant(x, &a.bernoullis, &used_a) {
            out.push(Bernoulli { r: unmatched_existence(x.r, wb), mean: x.mean, cov: x.cov });
        }
    }
    Ok(PmbPosterior {
        undetected_weight: a.undetected_weight.powf(wa) * b.undetected_weight.powf(wb),
        region: a.region,
        bernoullis: out,
    })
}
