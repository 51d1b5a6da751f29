//! Rays, plane projections and scan geometries.
//!
//! A line is stored as a unit direction `omega` and the offset `s`, the point
//! of the line closest to the origin (so `<s, omega> = 0`). All lengths are in
//! lattice units: basis functions sit on the integer lattice with step 1.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, Vec3};

/// An oriented line `{ s + t * omega }`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub omega: Vec3,
    pub s: Vec3,
}

impl Ray {
    /// Builds a ray from any direction and any point on the line. The
    /// direction is normalized and the point moved onto the plane orthogonal
    /// to it.
    pub fn new(direction: Vec3, point: Vec3) -> Result<Self> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) || !point.iter().all(|x| x.is_finite()) {
            return Err(Error::Geometry(format!(
                "degenerate ray: direction {direction:?}, point {point:?}"
            )));
        }
        let omega = direction / norm;
        Ok(Self {
            omega,
            s: project_onto_plane(&point, &omega),
        })
    }

    /// Ray through `from` towards `to`.
    pub fn through(from: Vec3, to: Vec3) -> Result<Self> {
        Self::new(to - from, from)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.s + self.omega * t
    }

    /// The same line shifted by `-shift` (i.e. expressed relative to `shift`).
    pub fn relative_to(&self, shift: &Vec3) -> Self {
        Self {
            omega: self.omega,
            s: project_onto_plane(&(self.s - shift), &self.omega),
        }
    }
}

/// Orthogonal projection of `x` onto the plane `H_omega` through the origin.
#[inline]
pub fn project_onto_plane(x: &Vec3, omega: &Vec3) -> Vec3 {
    debug_assert!((omega.norm() - 1.0).abs() < 1e-9);
    x - omega * x.dot(omega)
}

/// Parameter interval `(t_in, t_out)` where the ray lies inside the closed
/// box `[lo, hi]`, or `None` when the intersection has zero length.
pub fn clip_to_box(ray: &Ray, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        let (o, w) = (ray.s[i], ray.omega[i]);
        if w == 0.0 {
            if o < lo[i] || o > hi[i] {
                return None;
            }
        } else {
            let a = (lo[i] - o) / w;
            let b = (hi[i] - o) / w;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Zero-based index of the axis with the largest `|omega_d|`; ties go to the
/// smallest index.
#[inline]
pub fn dominant_axis(omega: &Vec3) -> usize {
    let a = omega.map(f64::abs);
    let mut best = 0;
    for d in 1..3 {
        if a[d] > a[best] {
            best = d;
        }
    }
    best
}

/// Zero-based index of the axis with the smallest `|omega_d|`; ties go to the
/// smallest index.
#[inline]
fn least_aligned_axis(omega: &Vec3) -> usize {
    let a = omega.map(f64::abs);
    let mut best = 0;
    for d in 1..3 {
        if a[d] < a[best] {
            best = d;
        }
    }
    best
}

fn unit_axis(d: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[d] = 1.0;
    e
}

/// Orthonormal basis `(u, v)` of `H_omega` with `v = u x omega`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneBasis {
    pub u: Vec3,
    pub v: Vec3,
}

/// Deterministic in-plane basis: `u` is `e_a x omega` normalized, with `e_a`
/// the canonical axis least aligned with `omega`.
pub fn plane_basis(omega: &Vec3) -> PlaneBasis {
    let ea = unit_axis(least_aligned_axis(omega));
    let u = ea.cross(omega).normalize();
    let v = u.cross(omega);
    PlaneBasis { u, v }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    ConeBeam,
    ParallelBeam,
}

/// Serializable description from which all rays are regenerated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryDescriptor {
    pub kind: ScanKind,
    pub num_views: usize,
    pub detector_rows: usize,
    pub detector_cols: usize,
    /// Source to rotation center (cone-beam only).
    pub source_distance: Option<f64>,
    /// Rotation center to detector plane (cone-beam only).
    pub detector_distance: Option<f64>,
    pub pixel_pitch: f64,
    pub rotation_axis: [f64; 3],
    /// Views are spaced evenly over `[0, angular_range)`.
    pub angular_range: f64,
    /// Full edge lengths of the imaged box, centered at the origin. Used to
    /// reject cone-beam sources placed inside the object.
    pub volume_extent: Option<[f64; 3]>,
}

impl GeometryDescriptor {
    /// Cone-beam descriptor with a full orbit around `e1`.
    pub fn cone_beam(
        num_views: usize,
        detector_rows: usize,
        detector_cols: usize,
        source_distance: f64,
        detector_distance: f64,
        pixel_pitch: f64,
        volume_extent: [f64; 3],
    ) -> Self {
        Self {
            kind: ScanKind::ConeBeam,
            num_views,
            detector_rows,
            detector_cols,
            source_distance: Some(source_distance),
            detector_distance: Some(detector_distance),
            pixel_pitch,
            rotation_axis: [1.0, 0.0, 0.0],
            angular_range: 2.0 * PI,
            volume_extent: Some(volume_extent),
        }
    }

    /// Parallel-beam descriptor with views over a half turn around `e1`.
    pub fn parallel_beam(
        num_views: usize,
        detector_rows: usize,
        detector_cols: usize,
        pixel_pitch: f64,
    ) -> Self {
        Self {
            kind: ScanKind::ParallelBeam,
            num_views,
            detector_rows,
            detector_cols,
            source_distance: None,
            detector_distance: None,
            pixel_pitch,
            rotation_axis: [1.0, 0.0, 0.0],
            angular_range: PI,
            volume_extent: None,
        }
    }

    pub fn with_rotation_axis(mut self, axis: [f64; 3]) -> Self {
        self.rotation_axis = axis;
        self
    }

    pub fn with_angular_range(mut self, range: f64) -> Self {
        self.angular_range = range;
        self
    }

    pub fn num_rays(&self) -> usize {
        self.num_views * self.detector_rows * self.detector_cols
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("descriptor serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn build(&self) -> Result<ScanGeometry> {
        ScanGeometry::from_descriptor(self.clone())
    }

    /// Smallest pixel pitch at which every view's detector covers the shadow
    /// of the box `[lo, hi]`.
    pub fn covering_pitch(&self, lo: &Vec3, hi: &Vec3) -> Result<f64> {
        let orbit = Orbit::new(self.rotation_axis)?;
        let half_cols = self.detector_cols as f64 / 2.0;
        let half_rows = self.detector_rows as f64 / 2.0;
        let mut pitch: f64 = 0.0;
        for view in 0..self.num_views {
            let alpha = self.angular_range * view as f64 / self.num_views as f64;
            let dir = orbit.direction(alpha);
            let w = orbit.a.cross(&dir);
            for corner in 0..8 {
                let x = Vec3::from_fn(|i, _| if corner >> i & 1 == 1 { hi[i] } else { lo[i] });
                let y = match (self.kind, self.source_distance, self.detector_distance) {
                    (ScanKind::ParallelBeam, _, _) => x,
                    (ScanKind::ConeBeam, Some(sd), Some(dd)) => {
                        let depth = x.dot(&dir) + sd;
                        if depth <= 0.0 {
                            return Err(Error::Geometry("source lies inside the box".into()));
                        }
                        let source = -dir * sd;
                        source + (x - source) * ((sd + dd) / depth)
                    }
                    _ => return Err(Error::Geometry("cone-beam needs both distances".into())),
                };
                pitch = pitch.max(y.dot(&w).abs() / half_cols).max(y.dot(&orbit.a).abs() / half_rows);
            }
        }
        Ok(pitch)
    }
}

/// Orbit frame: rotation axis `a` plus the view-0 source-to-detector
/// direction `b` and `c = a x b`.
#[derive(Clone, Copy, Debug)]
struct Orbit {
    a: Vec3,
    b: Vec3,
    c: Vec3,
}

impl Orbit {
    fn new(axis: [f64; 3]) -> Result<Self> {
        let a = Vec3::from(axis);
        let n = a.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Geometry(format!("invalid rotation axis {axis:?}")));
        }
        let a = a / n;
        let e = unit_axis(least_aligned_axis(&a));
        let b = (e - a * e.dot(&a)).normalize();
        Ok(Self { a, b, c: a.cross(&b) })
    }

    /// Unit source-to-detector direction at angle `alpha`.
    fn direction(&self, alpha: f64) -> Vec3 {
        self.b * alpha.cos() + self.c * alpha.sin()
    }
}

/// Rays of a scan, ordered view-major then detector row-major.
#[derive(Clone, Debug)]
pub struct ScanGeometry {
    descriptor: GeometryDescriptor,
    rays: Vec<Ray>,
    sources: Vec<Vec3>,
}

impl ScanGeometry {
    pub fn from_descriptor(descriptor: GeometryDescriptor) -> Result<Self> {
        let d = &descriptor;
        if d.num_views == 0 || d.detector_rows == 0 || d.detector_cols == 0 {
            return Err(Error::Geometry("view and detector counts must be >= 1".into()));
        }
        if !(d.pixel_pitch.is_finite() && d.pixel_pitch > 0.0) {
            return Err(Error::Geometry(format!("pixel pitch {} must be > 0", d.pixel_pitch)));
        }
        if !(d.angular_range.is_finite() && d.angular_range > 0.0) {
            return Err(Error::Geometry("angular range must be > 0".into()));
        }
        let orbit = Orbit::new(d.rotation_axis)?;
        let mut rays = Vec::with_capacity(d.num_rays());
        let mut sources = Vec::new();

        let row_mid = (d.detector_rows as f64 - 1.0) / 2.0;
        let col_mid = (d.detector_cols as f64 - 1.0) / 2.0;

        match d.kind {
            ScanKind::ConeBeam => {
                let (sd, dd) = match (d.source_distance, d.detector_distance) {
                    (Some(sd), Some(dd)) if sd > 0.0 && dd > 0.0 => (sd, dd),
                    _ => {
                        return Err(Error::Geometry(
                            "cone-beam needs positive source and detector distances".into(),
                        ))
                    }
                };
                for view in 0..d.num_views {
                    let alpha = d.angular_range * view as f64 / d.num_views as f64;
                    let dir = orbit.direction(alpha);
                    let source = -dir * sd;
                    if let Some(extent) = d.volume_extent {
                        if (0..3).all(|i| source[i].abs() <= extent[i] / 2.0) {
                            return Err(Error::Geometry(format!(
                                "source of view {view} at {source:?} lies inside the volume"
                            )));
                        }
                    }
                    let center = dir * dd;
                    let w = orbit.a.cross(&dir);
                    for r in 0..d.detector_rows {
                        for c in 0..d.detector_cols {
                            let pixel = center
                                + w * ((c as f64 - col_mid) * d.pixel_pitch)
                                + orbit.a * ((r as f64 - row_mid) * d.pixel_pitch);
                            rays.push(Ray::through(source, pixel)?);
                        }
                    }
                    sources.push(source);
                }
            }
            ScanKind::ParallelBeam => {
                for view in 0..d.num_views {
                    let alpha = d.angular_range * view as f64 / d.num_views as f64;
                    let dir = orbit.direction(alpha);
                    let w = orbit.a.cross(&dir);
                    for r in 0..d.detector_rows {
                        for c in 0..d.detector_cols {
                            let offset = w * ((c as f64 - col_mid) * d.pixel_pitch)
                                + orbit.a * ((r as f64 - row_mid) * d.pixel_pitch);
                            rays.push(Ray::new(dir, offset)?);
                        }
                    }
                }
            }
        }
        Ok(Self {
            descriptor,
            rays,
            sources,
        })
    }

    /// Geometry made of explicitly given rays, e.g. for tests. The descriptor
    /// is a parallel-beam placeholder with one view per ray.
    pub fn from_rays(rays: Vec<Ray>) -> Self {
        let mut descriptor = GeometryDescriptor::parallel_beam(rays.len().max(1), 1, 1, 1.0);
        descriptor.num_views = rays.len();
        Self {
            descriptor,
            rays,
            sources: Vec::new(),
        }
    }

    pub fn descriptor(&self) -> &GeometryDescriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> ScanKind {
        self.descriptor.kind
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }

    pub fn num_rays(&self) -> usize {
        self.rays.len()
    }

    pub fn rays_per_view(&self) -> usize {
        self.descriptor.detector_rows * self.descriptor.detector_cols
    }

    pub fn view(&self, index: usize) -> &[Ray] {
        let n = self.rays_per_view();
        &self.rays[index * n..(index + 1) * n]
    }

    /// Source position of a cone-beam view.
    pub fn source_position(&self, view: usize) -> Option<Vec3> {
        self.sources.get(view).copied()
    }

    pub fn digest(&self) -> String {
        self.descriptor.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_ray(r: &Ray) {
        assert!((r.omega.norm() - 1.0).abs() <= 1e-12);
        assert!(r.s.dot(&r.omega).abs() <= 1e-9);
    }

    #[test]
    fn plane_projection_examples() {
        let s2 = 0.5f64.sqrt();
        let z = project_onto_plane(&Vec3::new(1.0, 0.0, 0.0), &Vec3::x());
        assert_eq!(z, Vec3::zeros());
        let p = project_onto_plane(&Vec3::new(0.0, 2.0, 3.0), &Vec3::x());
        assert_eq!(p, Vec3::new(0.0, 2.0, 3.0));
        let q = project_onto_plane(&Vec3::new(1.0, 1.0, 0.0), &Vec3::new(s2, s2, 0.0));
        assert!(q.norm() < 1e-15);
    }

    #[test]
    fn dominant_axis_examples() {
        assert_eq!(dominant_axis(&Vec3::x()), 0);
        let w = Vec3::new(0.1, 0.9, 0.0);
        let w = Vec3::new(0.1, 0.9, (1.0 - w.norm_squared()).sqrt());
        assert_eq!(dominant_axis(&w), 1);
        let s2 = 0.5f64.sqrt();
        assert_eq!(dominant_axis(&Vec3::new(s2, s2, 0.0)), 0);
        assert_eq!(dominant_axis(&Vec3::new(-s2, s2, 0.0)), 0);
    }

    #[test]
    fn plane_basis_examples() {
        let b = plane_basis(&Vec3::z());
        assert_eq!(b.u, Vec3::new(0.0, -1.0, 0.0));
        assert_eq!(b.v, b.u.cross(&Vec3::z()));
        let b = plane_basis(&Vec3::x());
        assert!(b.u.dot(&Vec3::x()).abs() < 1e-15 && b.v.dot(&Vec3::x()).abs() < 1e-15);
        assert!((b.u.norm() - 1.0).abs() < 1e-12 && (b.v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_beam_central_ray() {
        let d = GeometryDescriptor::cone_beam(1, 1, 1, 10.0, 10.0, 1.0, [4.0; 3]);
        let g = d.build().unwrap();
        assert_eq!(g.num_rays(), 1);
        let r = g.rays()[0];
        assert!((r.omega - Vec3::y()).norm() < 1e-15);
        assert!(r.s.norm() < 1e-15);
        assert!((g.source_position(0).unwrap() - Vec3::new(0.0, -10.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn cone_beam_rotation_symmetry() {
        let d = GeometryDescriptor::cone_beam(4, 3, 5, 20.0, 15.0, 0.7, [8.0; 3]);
        let g = d.build().unwrap();
        let s0 = g.source_position(0).unwrap();
        let s2 = g.source_position(2).unwrap();
        // rotation by pi about e1 negates the e2 and e3 components
        let rotated = Vec3::new(s0.x, -s0.y, -s0.z);
        assert!((s2 - rotated).norm() < 1e-12);
        assert_eq!(g.num_rays(), 4 * 3 * 5);
        g.rays().iter().for_each(check_ray);
    }

    #[test]
    fn cone_beam_rejects_source_inside_volume() {
        let d = GeometryDescriptor::cone_beam(8, 2, 2, 3.0, 10.0, 1.0, [10.0; 3]);
        assert!(matches!(d.build(), Err(Error::Geometry(_))));
        let mut bad = GeometryDescriptor::cone_beam(8, 2, 2, 30.0, 10.0, 1.0, [10.0; 3]);
        bad.detector_rows = 0;
        assert!(bad.build().is_err());
    }

    #[test]
    fn parallel_beam_shares_direction_per_view() {
        let g = GeometryDescriptor::parallel_beam(1, 4, 6, 0.5).build().unwrap();
        for r in g.rays() {
            assert!((r.omega - Vec3::y()).norm() < 1e-15);
            check_ray(r);
        }
        let g = GeometryDescriptor::parallel_beam(7, 3, 3, 1.3)
            .with_rotation_axis([0.0, 0.0, 1.0])
            .build()
            .unwrap();
        for v in 0..7 {
            let w0 = g.view(v)[0].omega;
            assert!(g.view(v).iter().all(|r| r.omega == w0));
        }
        g.rays().iter().for_each(check_ray);
    }

    #[test]
    fn digest_tracks_descriptor() {
        let a = GeometryDescriptor::parallel_beam(3, 2, 2, 1.0);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.num_views = 4;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn covering_pitch_fits_the_box_shadow() {
        let lo = Vec3::new(-2.0, -3.0, -1.0);
        let hi = -lo;
        let par = GeometryDescriptor::parallel_beam(1, 4, 6, 1.0).with_rotation_axis([0.0, 0.0, 1.0]);
        // view 0 looks along e1; the detector spans e2 (columns) and e3 (rows)
        assert!((par.covering_pitch(&lo, &hi).unwrap() - 1.0).abs() < 1e-15);
        let far = GeometryDescriptor::cone_beam(1, 4, 6, 1e6, 1e6, 1.0, [4.0, 6.0, 2.0])
            .with_rotation_axis([0.0, 0.0, 1.0]);
        assert!((far.covering_pitch(&lo, &hi).unwrap() - 2.0).abs() < 1e-4);
        let near = GeometryDescriptor::cone_beam(1, 4, 6, 1.5, 1.0, 1.0, [4.0, 6.0, 2.0]);
        assert!(near.covering_pitch(&lo, &hi).is_err());
    }
}
