"""Batched quaternion and spatial (6-D) rigid-body algebra.

All public functions accept a leading batch axis N. Quaternions are
(N, 4) in w, x, y, z order and map body -> world: x_world = R(q) @ x_body.
Spatial motion vectors are [angular; linear], force vectors [moment; force],
both expressed in the frame named by the surrounding code.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quat(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    """Hamilton product a*b, batched."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_rotvec(v):
    """Exponential map: rotation vector (N, 3) -> unit quaternion (N, 4)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x via series near zero keeps this smooth and exact at v=0
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(angle == 0.0, 1.0, angle))
    return np.concatenate([np.cos(half), k * v], axis=-1)


def quat_to_rot(q):
    """Unit quaternion (N, 4) -> rotation matrix (N, 3, 3), body -> world."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_axis_angle(axis, angle):
    """Rodrigues rotation about a fixed unit axis (3,) for batched angles (N,)."""
    angle = np.asarray(angle)
    c, s = np.cos(angle), np.sin(angle)
    K = skew(np.asarray(axis, dtype=float)[None, :])[0]
    eye = np.eye(3, dtype=angle.dtype if angle.dtype.kind == "f" else float)
    return eye + s[..., None, None] * K + (1 - c)[..., None, None] * (K @ K)


def skew(v):
    """(..., 3) -> (..., 3, 3) cross-product matrix."""
    out = np.zeros(v.shape + (3,), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def cross(a, b):
    # np.cross with preallocated output is measurably faster in hot loops
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def xmotion_apply(E, r, m):
    """Transform a motion vector into a child frame.

    E: (N, 3, 3) rotation child <- parent, r: (N, 3) child origin in parent
    coords, m: (N, 6) motion vector in parent coords.
    """
    w, v = m[..., :3], m[..., 3:]
    w_c = np.einsum("...ij,...j->...i", E, w)
    v_c = np.einsum("...ij,...j->...i", E, v + cross(w, r))
    return np.concatenate([w_c, v_c], axis=-1)


def xforce_to_parent(E, r, f):
    """Transform a force vector from the child frame back to the parent.

    E, r as in xmotion_apply (child <- parent); f: (N, 6) in child coords.
    """
    n, fl = f[..., :3], f[..., 3:]
    f_p = np.einsum("...ji,...j->...i", E, fl)
    n_p = np.einsum("...ji,...j->...i", E, n) + cross(r, f_p)
    return np.concatenate([n_p, f_p], axis=-1)


def xmotion_matrix(E, r):
    """Explicit (N, 6, 6) motion transform child <- parent."""
    N = E.shape[0]
    X = np.zeros((N, 6, 6), dtype=E.dtype)
    X[:, :3, :3] = E
    X[:, 3:, 3:] = E
    X[:, 3:, :3] = -E @ skew(r)
    return X


def crm_apply(v, m):
    """Spatial motion cross product v x m for (N, 6) inputs."""
    w, vl = v[..., :3], v[..., 3:]
    mw, mv = m[..., :3], m[..., 3:]
    return np.concatenate([cross(w, mw), cross(vl, mw) + cross(w, mv)], axis=-1)


def crf_apply(v, f):
    """Spatial force cross product v x* f for (N, 6) inputs."""
    w, vl = v[..., :3], v[..., 3:]
    n, fl = f[..., :3], f[..., 3:]
    return np.concatenate([cross(w, n) + cross(vl, fl), cross(w, fl)], axis=-1)


def spatial_inertia(mass, com, inertia_com):
    """6x6 spatial inertia about the link frame origin.

    mass: scalar, com: (3,) link-frame offset of the center of mass,
    inertia_com: (3, 3) rotational inertia about the center of mass.
    """
    C = skew(np.asarray(com, dtype=float))
    I = np.zeros((6, 6))
    I[:3, :3] = inertia_com + mass * (C @ C.T)
    I[:3, 3:] = mass * C
    I[3:, :3] = mass * C.T
    I[3:, 3:] = mass * np.eye(3)
    return I
