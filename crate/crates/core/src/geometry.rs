//! Coordinate frames, per-path geometric channel parameters and the UE
//! constant-turn trajectory.
//!
//! All angles are radians. Azimuth is `atan2(y, x)` and elevation is
//! `asin(z / |v|)`, both evaluated on the difference vector expressed in the
//! local frame of the node that observes the path.

use std::f64::consts::PI;

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light used throughout, in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Points closer than this are treated as coincident.
const MIN_SEPARATION: f64 = 1e-9;

/// Below this `|turn_rate * dt|` the arc update switches to its series form.
const STRAIGHT_LINE_THRESHOLD: f64 = 1e-9;

/// Azimuth/elevation pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AzEl {
    pub az: f64,
    pub el: f64,
}

impl AzEl {
    pub const fn new(az: f64, el: f64) -> Self {
        Self { az, el }
    }

    /// Angles of a (non-zero) local-frame vector.
    pub fn from_local(v: &Vector3<f64>) -> Self {
        let r = v.norm();
        Self {
            az: v.y.atan2(v.x),
            el: (v.z / r).clamp(-1.0, 1.0).asin(),
        }
    }

    /// Unit vector pointing along these angles in the local frame.
    pub fn unit_vector(&self) -> Vector3<f64> {
        let (se, ce) = self.el.sin_cos();
        let (sa, ca) = self.az.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }
}

/// Jacobian of `[az, el]` with respect to the local vector `v`.
pub fn azel_jacobian(v: &Vector3<f64>) -> Matrix2x3<f64> {
    let rho2 = v.x * v.x + v.y * v.y;
    let rho = rho2.sqrt();
    let r2 = rho2 + v.z * v.z;
    Matrix2x3::new(
        -v.y / rho2,
        v.x / rho2,
        0.0,
        -v.x * v.z / (r2 * rho),
        -v.y * v.z / (r2 * rho),
        rho / r2,
    )
}

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Position and orientation of an array.
///
/// `global_to_local` maps global difference vectors into the array frame,
/// whose x axis is the array broadside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub global_to_local: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, global_to_local: Matrix3<f64>) -> Self {
        Self {
            position,
            global_to_local,
        }
    }

    pub fn identity_at(position: Vector3<f64>) -> Self {
        Self::new(position, Matrix3::identity())
    }

    /// Pose whose local x axis is `normal` with no roll; the local z axis
    /// stays as close to global z as possible.
    pub fn facing(position: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let x = normal
            .try_normalize(MIN_SEPARATION)
            .ok_or(Error::DegenerateGeometry("zero-length array normal"))?;
        let up = if x.z.abs() < 0.999 {
            Vector3::z()
        } else {
            Vector3::y()
        };
        let y = up.cross(&x).normalize();
        let z = x.cross(&y);
        let local_to_global = Matrix3::from_columns(&[x, y, z]);
        Ok(Self::new(position, local_to_global.transpose()))
    }

    /// Yaw-only pose: local x axis along `heading` in the horizontal plane.
    pub fn yawed(position: Vector3<f64>, heading: f64) -> Self {
        let local_to_global = Rotation3::from_axis_angle(&Vector3::z_axis(), heading);
        Self::new(position, local_to_global.matrix().transpose())
    }

    pub fn to_local(&self, global_delta: &Vector3<f64>) -> Vector3<f64> {
        self.global_to_local * global_delta
    }

    /// Array normal in global coordinates.
    pub fn normal(&self) -> Vector3<f64> {
        self.global_to_local.row(0).transpose()
    }

    /// Angles, as seen from this pose, of the direction towards `target`.
    pub fn angles_to(&self, target: &Vector3<f64>) -> AzEl {
        AzEl::from_local(&self.to_local(&(target - self.position)))
    }
}

/// Monostatic sensor state at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Vector3<f64>,
    pub heading: f64,
    pub speed: f64,
}

impl UeState {
    pub fn new(position: Vector3<f64>, heading: f64, speed: f64) -> Result<Self> {
        if !(speed >= 0.0) {
            return Err(Error::InvalidParameter(format!("negative UE speed {speed}")));
        }
        Ok(Self {
            position,
            heading: wrap_angle(heading),
            speed,
        })
    }

    /// Array pose; the array broadside follows the heading.
    pub fn pose(&self) -> Pose {
        Pose::yawed(self.position, self.heading)
    }
}

/// Geometric channel parameters of one path.
///
/// For the UE-RIS-UE path `toa_uncontrolled` is `None` and `aod_ris`,
/// `aod_ue` are the RIS-side and UE-side angles of the UE-RIS link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Delay of the path through the RIS, seconds.
    pub toa_controlled: f64,
    /// Round-trip delay of the direct UE-SP-UE path, seconds.
    pub toa_uncontrolled: Option<f64>,
    /// Angle at the RIS (towards the SP, or towards the UE for l = 0).
    pub aod_ris: AzEl,
    /// Angle at the UE (towards the SP, or towards the RIS for l = 0).
    pub aod_ue: AzEl,
}

fn separation(a: &Vector3<f64>, b: &Vector3<f64>, what: &'static str) -> Result<f64> {
    let d = (a - b).norm();
    if d < MIN_SEPARATION {
        Err(Error::DegenerateGeometry(what))
    } else {
        Ok(d)
    }
}

/// Channel parameters of the UE-RIS-UE path (`sp = None`) or of the paths
/// through scatterer `sp`.
pub fn channel_params(ue: &Pose, ris: &Pose, sp: Option<&Vector3<f64>>) -> Result<PathParams> {
    let d_ur = separation(&ue.position, &ris.position, "UE and RIS coincide")?;
    match sp {
        None => Ok(PathParams {
            toa_controlled: 2.0 * d_ur / SPEED_OF_LIGHT,
            toa_uncontrolled: None,
            aod_ris: ris.angles_to(&ue.position),
            aod_ue: ue.angles_to(&ris.position),
        }),
        Some(x) => {
            let d_rs = separation(x, &ris.position, "scatterer coincides with the RIS")?;
            let d_su = separation(x, &ue.position, "scatterer coincides with the UE")?;
            Ok(PathParams {
                toa_controlled: (d_ur + d_rs + d_su) / SPEED_OF_LIGHT,
                toa_uncontrolled: Some(2.0 * d_su / SPEED_OF_LIGHT),
                aod_ris: ris.angles_to(x),
                aod_ue: ue.angles_to(x),
            })
        }
    }
}

/// Distances and RIS-pattern cosines needed by the path-gain model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDistances {
    pub d_ur: f64,
    pub g_ur: f64,
    pub d_sr: f64,
    pub d_su: f64,
    pub g_sr: f64,
}

impl LinkDistances {
    pub fn new(ue: &Vector3<f64>, ris: &Pose, sp: &Vector3<f64>) -> Result<Self> {
        let n = ris.normal();
        let d_ur = separation(ue, &ris.position, "UE and RIS coincide")?;
        let d_sr = separation(sp, &ris.position, "scatterer coincides with the RIS")?;
        let d_su = separation(sp, ue, "scatterer coincides with the UE")?;
        Ok(Self {
            d_ur,
            g_ur: (ue - ris.position).dot(&n) / d_ur,
            d_sr,
            d_su,
            g_sr: (sp - ris.position).dot(&n) / d_sr,
        })
    }
}

/// Advances the UE along a constant-turn arc.
pub fn constant_turn_step(state: &UeState, turn_rate: f64, dt: f64) -> UeState {
    let h = state.heading;
    let v = state.speed;
    let wdt = turn_rate * dt;
    let (dx, dy) = if wdt.abs() < STRAIGHT_LINE_THRESHOLD {
        // second-order expansion of the arc about turn_rate = 0
        let (s, c) = h.sin_cos();
        (
            v * dt * (c - 0.5 * wdt * s),
            v * dt * (s + 0.5 * wdt * c),
        )
    } else {
        let r = v / turn_rate;
        (
            r * ((h + wdt).sin() - h.sin()),
            r * (h.cos() - (h + wdt).cos()),
        )
    };
    UeState {
        position: Vector3::new(state.position.x + dx, state.position.y + dy, state.position.z),
        heading: wrap_angle(h + wdt),
        speed: v,
    }
}

/// States `s_0 .. s_steps` of a constant-turn trajectory.
pub fn trajectory(initial: &UeState, turn_rate: f64, dt: f64, steps: usize) -> Vec<UeState> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*initial);
    for _ in 0..steps {
        let next = constant_turn_step(out.last().unwrap(), turn_rate, dt);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn ris_round_trip_delay() {
        let ue = Pose::identity_at(v(50.0, -30.0, 0.0));
        let ris = Pose::identity_at(v(30.0, 0.0, 20.0));
        let p = channel_params(&ue, &ris, None).unwrap();
        let expected = 2.0 * 1700f64.sqrt() / SPEED_OF_LIGHT;
        assert!((p.toa_controlled - expected).abs() < 1e-18);
        assert!((p.toa_controlled * 1e9 - 274.874).abs() < 1e-3);
    }

    #[test]
    fn coincident_scatterer_is_degenerate() {
        let ue = Pose::identity_at(v(50.0, -30.0, 0.0));
        let ris = Pose::identity_at(v(30.0, 0.0, 20.0));
        let err = channel_params(&ue, &ris, Some(&v(50.0, -30.0, 0.0))).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn point_on_local_x_axis() {
        let ue = Pose::identity_at(v(1.0, 0.0, 0.0));
        let ris = Pose::identity_at(Vector3::zeros());
        let p = channel_params(&ue, &ris, None).unwrap();
        assert_eq!(p.aod_ris.az, 0.0);
        assert_eq!(p.aod_ris.el, 0.0);
    }

    #[test]
    fn facing_pose_is_rotation() {
        let pose = Pose::facing(v(0.0, 0.0, 0.0), v(1.0, 2.0, 0.5)).unwrap();
        let r = pose.global_to_local;
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let ris = Pose::facing(v(30.0, 0.0, 20.0), v(1.0, 0.0, 0.0)).unwrap();
        assert!((ris.global_to_local - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn straight_line_limit() {
        let s = UeState::new(v(0.0, 0.0, 0.0), PI / 2.0, 11.11).unwrap();
        let n = constant_turn_step(&s, 0.0, 1.0);
        assert!((n.position - v(0.0, 11.11, 0.0)).norm() < 1e-12);
        assert_eq!(n.speed, s.speed);
    }

    #[test]
    fn full_turn_closes() {
        let s0 = UeState::new(v(5.0, 1.0, 2.0), 0.3, 4.0).unwrap();
        let mut s = s0;
        for _ in 0..4 {
            s = constant_turn_step(&s, PI / 2.0, 1.0);
        }
        assert!(wrap_angle(s.heading - s0.heading).abs() < 1e-12);
        assert!((s.position - s0.position).norm() < 1e-12);
        assert_eq!(s.position.z, 2.0);
    }

    #[test]
    fn series_branch_matches_arc() {
        let s = UeState::new(v(1.0, 2.0, 0.0), 0.7, 9.0).unwrap();
        let a = constant_turn_step(&s, 2e-10, 1.0);
        let b = constant_turn_step(&s, 2e-9, 1.0);
        assert!((a.position - b.position).norm() < 1e-7);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(-PI) + PI).abs() < 1e-15);
    }

    #[test]
    fn azel_jacobian_matches_finite_difference() {
        let p = v(3.0, -2.0, 1.5);
        let j = azel_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut dp = Vector3::zeros();
            dp[k] = h;
            let a = AzEl::from_local(&(p + dp));
            let b = AzEl::from_local(&(p - dp));
            assert!(((a.az - b.az) / (2.0 * h) - j[(0, k)]).abs() < 1e-8);
            assert!(((a.el - b.el) / (2.0 * h) - j[(1, k)]).abs() < 1e-8);
        }
    }
}
