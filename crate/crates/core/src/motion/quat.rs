//! Unit quaternions stored as `[w, x, y, z]`.

pub type Quat = [f64; 4];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn conj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn norm(q: Quat) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Unit quaternion in the direction of `q`; degenerate input maps to identity.
pub fn normalize(q: Quat) -> Quat {
    let n = norm(q);
    if n < 1e-12 || !n.is_finite() {
        return IDENTITY;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let n = vnorm(axis);
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

pub fn yaw(angle: f64) -> Quat {
    from_axis_angle([0.0, 0.0, 1.0], angle)
}

pub fn pitch(angle: f64) -> Quat {
    from_axis_angle([0.0, 1.0, 0.0], angle)
}

pub fn roll(angle: f64) -> Quat {
    from_axis_angle([1.0, 0.0, 0.0], angle)
}

pub fn to_matrix(q: Quat) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(q: Quat, v: Vec3) -> Vec3 {
    let m = to_matrix(q);
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Smallest rotation taking direction `from` onto direction `to`.
pub fn shortest_arc(from: Vec3, to: Vec3) -> Quat {
    let (a, b) = (vscale(from, 1.0 / vnorm(from)), vscale(to, 1.0 / vnorm(to)));
    let d = dot(a, b);
    if d < -1.0 + 1e-12 {
        // antiparallel: any perpendicular axis works
        let axis = if a[0].abs() < 0.9 { cross(a, [1.0, 0.0, 0.0]) } else { cross(a, [0.0, 1.0, 0.0]) };
        return from_axis_angle(axis, std::f64::consts::PI);
    }
    let c = cross(a, b);
    normalize([1.0 + d, c[0], c[1], c[2]])
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn vnorm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
