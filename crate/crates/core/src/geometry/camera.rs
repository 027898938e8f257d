use std::fmt::Write as _;
use std::path::Path;

use super::GeometryError;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub(crate) fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_t_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Pinhole camera: intrinsics K and world-to-camera extrinsics [R|t].
///
/// Camera frame: x right, y down, z forward. A world point `p` maps to
/// `R·p + t` in the camera frame and then through K to pixel coordinates, where
/// pixel `(col, row)` covers `[col, col+1) × [row, row+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub image_width: usize,
    pub image_height: usize,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self, GeometryError> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            image_width,
            image_height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity pose with the given intrinsics.
    pub fn with_intrinsics(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        Self::new(fx, fy, cx, cy, IDENTITY, [0.0; 3], width, height)
    }

    /// Camera at world position `center` whose world-to-camera rotation is `rotation`.
    pub fn from_pose(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        center: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let rc = mat_vec(&rotation, &center);
        Self::new(fx, fy, cx, cy, rotation, [-rc[0], -rc[1], -rc[2]], width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(GeometryError::InvalidCamera("image dimensions must be positive".into()));
        }
        let rtr = mat_mul(
            &[
                [self.rotation[0][0], self.rotation[1][0], self.rotation[2][0]],
                [self.rotation[0][1], self.rotation[1][1], self.rotation[2][1]],
                [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]],
            ],
            &self.rotation,
        );
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (v - expect).abs() > 1e-9 {
                    return Err(GeometryError::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(GeometryError::InvalidCamera("translation must be finite".into()));
        }
        Ok(())
    }

    /// Camera centre in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        let c = mat_t_vec(&self.rotation, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, &p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn camera_to_world(&self, q: Vec3) -> Vec3 {
        let d = [
            q[0] - self.translation[0],
            q[1] - self.translation[1],
            q[2] - self.translation[2],
        ];
        mat_t_vec(&self.rotation, &d)
    }

    /// Pixel coordinates and camera-frame depth of a world point.
    pub fn project_point(&self, p: Vec3) -> Result<(f64, f64, f64), GeometryError> {
        let q = self.world_to_camera(p);
        if q[2] <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(q[2]));
        }
        Ok((self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2]))
    }

    /// World point seen at pixel coordinates `(u, v)` with camera-frame depth `depth`.
    pub fn backproject_pixel(&self, u: f64, v: f64, depth: f64) -> Result<Vec3, GeometryError> {
        if depth <= 0.0 || depth.is_nan() {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        let q = [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth];
        Ok(self.camera_to_world(q))
    }

    /// Integer pixel `(col, row)` containing `(u, v)`, if inside the image.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        (col < self.image_width && row < self.image_height).then_some((col, row))
    }

    /// World-frame direction (camera z component 1) through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        mat_t_vec(&self.rotation, &[(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
    }

    /// Plain-text form: a line `fx fy cx cy`, three rows of R, then t.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {} {}", self.fx, self.fy, self.cx, self.cy).unwrap();
        for row in &self.rotation {
            writeln!(s, "{} {} {}", row[0], row[1], row[2]).unwrap();
        }
        writeln!(
            s,
            "{} {} {}",
            self.translation[0], self.translation[1], self.translation[2]
        )
        .unwrap();
        s
    }

    /// Parses [`CameraModel::to_text`] output. The text carries no image size,
    /// so the caller supplies it (normally from the depth map).
    pub fn from_text(text: &str, image_width: usize, image_height: usize) -> Result<Self, GeometryError> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| GeometryError::FormatViolation(format!("camera value `{t}`: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let widths: Vec<usize> = rows.iter().map(Vec::len).collect();
        if widths != [4, 3, 3, 3, 3] {
            return Err(GeometryError::FormatViolation(format!(
                "camera file needs rows of 4,3,3,3,3 values, got {widths:?}"
            )));
        }
        let rotation = [
            [rows[1][0], rows[1][1], rows[1][2]],
            [rows[2][0], rows[2][1], rows[2][2]],
            [rows[3][0], rows[3][1], rows[3][2]],
        ];
        Self::new(
            rows[0][0],
            rows[0][1],
            rows[0][2],
            rows[0][3],
            rotation,
            [rows[4][0], rows[4][1], rows[4][2]],
            image_width,
            image_height,
        )
    }

    pub fn write_file(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path, image_width: usize, image_height: usize) -> Result<Self, GeometryError> {
        Self::from_text(&std::fs::read_to_string(path)?, image_width, image_height)
    }
}

/// Rotation about the camera y axis (yaw) then x axis (pitch), composed with a
/// base world-to-camera rotation.
pub fn yaw_pitch_rotation(base: &Mat3, yaw: f64, pitch: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let ry = [[cy, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    mat_mul(&rx, &mat_mul(&ry, base))
}
