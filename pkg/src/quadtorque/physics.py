"""Batched rigid-body dynamics for the floating-base quadruped.

Generalized coordinates per environment: 6 base DoF (spatial velocity
[angular; linear] in base coordinates) + one DoF per revolute joint. The
mass matrix comes from the composite-rigid-body algorithm, bias forces from
a recursive Newton-Euler sweep, and ground contact from a spring-damper
penalty normal force with regularized Coulomb friction (viscous below a slip
velocity, saturated at mu*f_n above). The sticking branch is integrated
implicitly so the 2 ms step stays stable for light feet; stick/slide regimes
are fixed up iteratively so the friction cone holds exactly.

Everything is vectorized over a leading batch axis; `step` is a pure
function of its inputs (bit-identical outputs for identical inputs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spatial as sp
from .config import RobotModel, SimConfig


class PhysicsError(RuntimeError):
    pass


class SimulationDiverged(PhysicsError):
    """A state component went non-finite; carries the offending time."""

    def __init__(self, time, detail=""):
        self.time = time
        super().__init__(f"simulation diverged at t={time}s {detail}".rstrip())


@dataclass
class ArticulatedModel:
    """Kinematic tree prepared for batched dynamics.

    Body 0 is the base; body j+1 is driven by joint j. `floating` selects
    between a 6-DoF free base and a welded base (test fixtures).
    """

    floating: bool
    parents: np.ndarray          # (B,) int, parents[0] = -1
    e_tree: np.ndarray           # (B, 3, 3) child-frame orientation in parent at q=0
    r_tree: np.ndarray           # (B, 3) child origin in parent frame
    axes: np.ndarray             # (B, 3) joint axis in child frame
    inertia: np.ndarray          # (B, 6, 6) spatial inertia about link frame
    masses: np.ndarray           # (B,)
    coms: np.ndarray             # (B, 3)
    torque_limit: np.ndarray = None   # (nj,)
    limit_lo: np.ndarray = None  # (nj,) joint position limits
    limit_hi: np.ndarray = None
    contact_body: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    contact_offset: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    contact_radius: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_feet: int = 0              # contacts [0, n_feet) are feet, the rest knees

    @property
    def n_bodies(self) -> int:
        return len(self.parents)

    @property
    def n_joints(self) -> int:
        return self.n_bodies - 1

    @property
    def n_dof(self) -> int:
        return 6 * self.floating + self.n_joints

    def joint_dof(self, j: int) -> int:
        return 6 * self.floating + j

    @classmethod
    def from_robot(cls, robot: RobotModel) -> "ArticulatedModel":
        names = ["trunk"] + [j.child for j in robot.joints]
        parents = np.array([-1] + [names.index(j.parent) for j in robot.joints])
        B = len(names)
        e_tree = np.tile(np.eye(3), (B, 1, 1))
        r_tree = np.zeros((B, 3))
        axes = np.zeros((B, 3))
        inertia = np.zeros((B, 6, 6))
        masses = np.zeros(B)
        coms = np.zeros((B, 3))
        link_by_name = {l.name: l for l in robot.links}
        for i, name in enumerate(names):
            link = link_by_name[name]
            inertia[i] = sp.spatial_inertia(link.mass, link.com, link.inertia)
            masses[i] = link.mass
            coms[i] = link.com
            if i > 0:
                joint = robot.joints[i - 1]
                r_tree[i] = joint.offset
                axes[i] = joint.axis
        contacts = [(names.index(f[0]), f[1], 0.0) for f in robot.feet]
        contacts += [(names.index(k[0]), k[1], k[2]) for k in robot.knee_spheres]
        return cls(
            floating=True,
            parents=parents,
            e_tree=e_tree,
            r_tree=r_tree,
            axes=axes,
            inertia=inertia,
            masses=masses,
            coms=coms,
            torque_limit=np.array([j.torque_limit for j in robot.joints]),
            limit_lo=np.array([j.pos_limits[0] for j in robot.joints]),
            limit_hi=np.array([j.pos_limits[1] for j in robot.joints]),
            contact_body=np.array([c[0] for c in contacts]),
            contact_offset=np.array([c[1] for c in contacts]),
            contact_radius=np.array([c[2] for c in contacts]),
            n_feet=len(robot.feet),
        )


@dataclass
class SimState:
    """Full dynamic state, batch-first (leading axis = environments)."""

    base_pos: np.ndarray        # (N, 3) world
    base_quat: np.ndarray       # (N, 4) wxyz, body -> world
    base_lin_vel: np.ndarray    # (N, 3) world frame
    base_ang_vel: np.ndarray    # (N, 3) body frame
    joint_pos: np.ndarray       # (N, nj)
    joint_vel: np.ndarray       # (N, nj)
    foot_contact: np.ndarray    # (N, 4) bool
    knee_contact: np.ndarray    # (N, 4) bool
    swing_time: np.ndarray      # (N, 4) seconds airborne; 0 while in contact
    time: np.ndarray            # (N,) seconds

    @classmethod
    def zeros(cls, n: int, n_joints: int = 12) -> "SimState":
        quat = np.zeros((n, 4))
        quat[:, 0] = 1.0
        return cls(
            base_pos=np.zeros((n, 3)), base_quat=quat,
            base_lin_vel=np.zeros((n, 3)), base_ang_vel=np.zeros((n, 3)),
            joint_pos=np.zeros((n, n_joints)), joint_vel=np.zeros((n, n_joints)),
            foot_contact=np.zeros((n, 4), dtype=bool),
            knee_contact=np.zeros((n, 4), dtype=bool),
            swing_time=np.zeros((n, 4)), time=np.zeros(n),
        )

    def copy(self) -> "SimState":
        return SimState(**{k: getattr(self, k).copy() for k in self.__dataclass_fields__})

    @property
    def n(self) -> int:
        return self.base_pos.shape[0]

    def select(self, idx) -> "SimState":
        return SimState(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})

    def assign(self, idx, other: "SimState") -> None:
        for k in self.__dataclass_fields__:
            getattr(self, k)[idx] = getattr(other, k)

    def finite_mask(self) -> np.ndarray:
        ok = np.ones(self.n, dtype=bool)
        for k in ("base_pos", "base_quat", "base_lin_vel", "base_ang_vel",
                  "joint_pos", "joint_vel"):
            ok &= np.isfinite(getattr(self, k)).all(axis=-1)
        return ok


@dataclass
class ContactReport:
    foot_normal: np.ndarray       # (N, 4) newtons, >= 0
    foot_tangential: np.ndarray   # (N, 4, 2) newtons, world x-y
    knee_contact: np.ndarray      # (N, 4) bool, penetration > 0
    foot_penetrating: np.ndarray  # (N, 4) bool, penetration > 0


# ---------------------------------------------------------------------------
# kinematics


def _forward_kinematics(model: ArticulatedModel, state: SimState):
    """World poses, body-frame spatial velocities, and joint transforms.

    Returns lists indexed by body: R_w (N,3,3) body->world, p_w (N,3),
    v_b (N,6) spatial velocity in body coords, E (N,3,3) child<-parent.
    """
    n = state.n
    B = model.n_bodies
    R_w, p_w, v_b, E = [None] * B, [None] * B, [None] * B, [None] * B
    if model.floating:
        R0 = sp.quat_to_rot(state.base_quat)
        R_w[0] = R0
        p_w[0] = state.base_pos
        v_lin_body = np.einsum("nji,nj->ni", R0, state.base_lin_vel)
        v_b[0] = np.concatenate([state.base_ang_vel, v_lin_body], axis=-1)
    else:
        R_w[0] = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        p_w[0] = np.zeros((n, 3))
        v_b[0] = np.zeros((n, 6))
    for i in range(1, B):
        lam = model.parents[i]
        rot = sp.rot_axis_angle(model.axes[i], state.joint_pos[:, i - 1])
        E[i] = np.swapaxes(rot, -1, -2) @ model.e_tree[i]
        R_w[i] = R_w[lam] @ np.swapaxes(E[i], -1, -2)
        p_w[i] = p_w[lam] + np.einsum("nij,j->ni", R_w[lam], model.r_tree[i])
        v = sp.xmotion_apply(E[i], model.r_tree[i][None, :], v_b[lam])
        v[:, :3] = v[:, :3] + model.axes[i][None, :] * state.joint_vel[:, i - 1 : i]
        v_b[i] = v
    return R_w, p_w, v_b, E


def contact_point_positions(model, state) -> np.ndarray:
    """World positions of the contact points, (N, C, 3)."""
    R_w, p_w, _, _ = _forward_kinematics(model, state)
    pos = [
        p_w[b] + np.einsum("nij,j->ni", R_w[b], off)
        for b, off in zip(model.contact_body, model.contact_offset)
    ]
    return np.stack(pos, axis=1)


def _contact_kinematics(model, R_w, p_w, v_b):
    """World positions and velocities of every contact point: (N, C, 3) x2."""
    pos, vel = [], []
    for c in range(len(model.contact_body)):
        b = model.contact_body[c]
        off = model.contact_offset[c]
        pos.append(p_w[b] + np.einsum("nij,j->ni", R_w[b], off))
        v_pt_body = v_b[b][:, 3:] + sp.cross(v_b[b][:, :3], off[None, :])
        vel.append(np.einsum("nij,nj->ni", R_w[b], v_pt_body))
    return np.stack(pos, axis=1), np.stack(vel, axis=1)


def _ancestor_joints(model, body):
    chain = []
    while body > 0:
        chain.append(body - 1)
        body = model.parents[body]
    return chain


def _contact_jacobians(model, R_w, p_w, contact_pos):
    """d(world point velocity)/d(generalized velocity): (N, C, 3, ndof)."""
    n = contact_pos.shape[0]
    C = len(model.contact_body)
    J = np.zeros((n, C, 3, model.n_dof))
    for c in range(C):
        b = model.contact_body[c]
        p = contact_pos[:, c]
        if model.floating:
            r_pb = np.einsum("nji,nj->ni", R_w[0], p - p_w[0])
            J[:, c, :, 0:3] = -(R_w[0] @ sp.skew(r_pb))
            J[:, c, :, 3:6] = R_w[0]
        for j in _ancestor_joints(model, b):
            body_j = j + 1
            axis_w = np.einsum("nij,j->ni", R_w[body_j], model.axes[body_j])
            J[:, c, :, model.joint_dof(j)] = sp.cross(axis_w, p - p_w[body_j])
    return J


# ---------------------------------------------------------------------------
# dynamics sweeps


def _gen_velocity(model, state) -> np.ndarray:
    if model.floating:
        R0 = sp.quat_to_rot(state.base_quat)
        v_lin_body = np.einsum("nji,nj->ni", R0, state.base_lin_vel)
        return np.concatenate([state.base_ang_vel, v_lin_body, state.joint_vel], axis=-1)
    return state.joint_vel.copy()


def _rnea_bias(model, state, R_w, v_b, E, gravity):
    """Generalized bias force (Coriolis, centrifugal, gravity), (N, ndof)."""
    n = state.n
    B = model.n_bodies
    # gravity enters as a fictitious +g upward base acceleration
    g_base = np.einsum("nji,j->ni", R_w[0], np.array([0.0, 0.0, gravity]))
    a = [None] * B
    a[0] = np.concatenate([np.zeros((n, 3)), g_base], axis=-1)
    f = [None] * B
    for i in range(B):
        if i > 0:
            lam = model.parents[i]
            ai = sp.xmotion_apply(E[i], model.r_tree[i][None, :], a[lam])
            s_qd = np.zeros((n, 6))
            s_qd[:, :3] = model.axes[i][None, :] * state.joint_vel[:, i - 1 : i]
            a[i] = ai + sp.crm_apply(v_b[i], s_qd)
        Iv = np.einsum("ij,nj->ni", model.inertia[i], v_b[i])
        Ia = np.einsum("ij,nj->ni", model.inertia[i], a[i])
        f[i] = Ia + sp.crf_apply(v_b[i], Iv)
    bias_joints = np.zeros((n, model.n_joints))
    for i in range(B - 1, 0, -1):
        bias_joints[:, i - 1] = f[i][:, :3] @ model.axes[i]
        lam = model.parents[i]
        f[lam] = f[lam] + sp.xforce_to_parent(E[i], model.r_tree[i][None, :], f[i])
    if model.floating:
        return np.concatenate([f[0], bias_joints], axis=-1)
    return bias_joints


def _crba(model, E, n, armature=0.0):
    """Joint-space mass matrix, (N, ndof, ndof); `armature` adds reflected
    rotor inertia to the joint diagonal."""
    B = model.n_bodies
    X = [None] * B
    for i in range(1, B):
        X[i] = sp.xmotion_matrix(E[i], np.broadcast_to(model.r_tree[i], (n, 3)))
    Ic = [np.broadcast_to(model.inertia[i], (n, 6, 6)).copy() for i in range(B)]
    for i in range(B - 1, 0, -1):
        lam = model.parents[i]
        Ic[lam] += np.einsum("nba,nbc,ncd->nad", X[i], Ic[i], X[i])
    H = np.zeros((n, model.n_dof, model.n_dof))
    if model.floating:
        H[:, :6, :6] = Ic[0]
    for j in range(model.n_joints):
        i = j + 1
        dj = model.joint_dof(j)
        F = np.einsum("nab,b->na", Ic[i][:, :, :3], model.axes[i])
        H[:, dj, dj] = F[:, :3] @ model.axes[i] + armature
        k = i
        while model.parents[k] > 0:
            F = np.einsum("nba,nb->na", X[k], F)
            k = model.parents[k]
            dk = model.joint_dof(k - 1)
            H[:, dj, dk] = H[:, dk, dj] = F[:, :3] @ model.axes[k]
        if model.floating:
            F = np.einsum("nba,nb->na", X[k], F)
            H[:, :6, dj] = F
            H[:, dj, :6] = F
    return H


def mechanical_energy(model, state, gravity, armature=0.0) -> np.ndarray:
    """Kinetic + gravitational potential energy per environment (including
    rotor kinetic energy when `armature` is nonzero)."""
    R_w, p_w, v_b, E = _forward_kinematics(model, state)
    H = _crba(model, E, state.n, armature)
    v = _gen_velocity(model, state)
    ke = 0.5 * np.einsum("nd,nde,ne->n", v, H, v)
    pe = np.zeros(state.n)
    for i in range(model.n_bodies):
        com_w = p_w[i] + np.einsum("nij,j->ni", R_w[i], model.coms[i])
        pe += model.masses[i] * gravity * com_w[:, 2]
    return ke + pe


# ---------------------------------------------------------------------------
# contact forces and the step


def _terrain_heights(terrain, points_xy):
    """points_xy: (N, C, 2) -> heights (N, C) for TerrainBatch or Heightfield."""
    if terrain is None:
        return np.full(points_xy.shape[:2], -np.inf)
    if hasattr(terrain, "n_env"):
        return terrain.height_at(points_xy)
    return terrain.height_at(points_xy[..., 0], points_xy[..., 1])


def _joint_soft_forces(model, joint_pos, joint_vel, torques, cfg):
    """Commanded torques plus viscous damping and soft position limits."""
    tau = torques - cfg.joint_damping * joint_vel
    if cfg.joint_limit_stiffness > 0 and model.limit_lo is not None:
        over = np.maximum(0.0, joint_pos - model.limit_hi[None, :])
        under = np.maximum(0.0, model.limit_lo[None, :] - joint_pos)
        viol = (over > 0) | (under > 0)
        tau = tau - cfg.joint_limit_stiffness * over + cfg.joint_limit_stiffness * under
        tau = tau - np.where(viol, cfg.joint_limit_damping * joint_vel, 0.0)
    return tau


def step_batch(model, state, torques, terrain, mu, cfg: SimConfig):
    """Advance every environment by one control step of cfg.dt.

    torques: (N, nj) commanded joint torques (already scaled and clamped);
    mu: scalar or (N,) friction coefficient. Returns (new_state, report,
    diverged_mask). Does not raise on divergence; callers decide.
    """
    limit = model.torque_limit
    if limit is not None and np.any(np.abs(torques) > limit[None, :] + 1e-9):
        raise PhysicsError("joint torques exceed the actuator limit; "
                           "the action pipeline must clamp before physics")
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (state.n,))
    h = cfg.dt / cfg.substeps
    s = state.copy()
    report = None
    for _ in range(cfg.substeps):
        s, report = _substep(model, s, torques, terrain, mu, h, cfg)
    # contact bookkeeping at the control rate
    if model.n_feet:
        s.foot_contact = report.foot_penetrating
        s.knee_contact = report.knee_contact
        s.swing_time = np.where(s.foot_contact, 0.0, state.swing_time + cfg.dt)
    s.time = state.time + cfg.dt
    diverged = ~s.finite_mask()
    if np.any(diverged):
        # freeze diverged rows at their previous (finite) values
        s.assign(diverged, state.select(diverged))
        s.time[diverged] = state.time[diverged] + cfg.dt
    return s, report, diverged


def _substep(model, state, torques, terrain, mu, h, cfg):
    n = state.n
    R_w, p_w, v_b, E = _forward_kinematics(model, state)
    v_gen = _gen_velocity(model, state)
    bias = _rnea_bias(model, state, R_w, v_b, E, cfg.gravity)
    H = _crba(model, E, n, cfg.joint_armature)

    tau = np.zeros((n, model.n_dof))
    ja = 6 if model.floating else 0
    tau[:, ja:] = _joint_soft_forces(model, state.joint_pos, state.joint_vel, torques, cfg)

    C = len(model.contact_body)
    if C:
        cp, cv = _contact_kinematics(model, R_w, p_w, v_b)
        heights = _terrain_heights(terrain, cp[..., :2])
        pen = heights - (cp[..., 2] - model.contact_radius[None, :])
        fn = np.where(
            pen > 0,
            np.maximum(0.0, cfg.contact_stiffness * pen
                       - cfg.contact_damping * cv[..., 2]),
            0.0,
        )
        J = _contact_jacobians(model, R_w, p_w, cp)
        Jxy = J[:, :, :2, :]
        tau_contact = np.einsum("ncd,nc->nd", J[:, :, 2, :], fn)

        v_slip = cfg.friction_slip_velocity
        D = mu[:, None] * fn / v_slip
        u = cv[..., :2]
        speed = np.linalg.norm(u, axis=-1)
        active = fn > 0
        stick = active & (speed <= v_slip)
        slide = active & ~stick
        u_dir = u / np.maximum(speed, 1e-12)[..., None]

        rhs_base = np.einsum("nde,ne->nd", H, v_gen) + h * (tau - bias + tau_contact)
        f_t = np.zeros((n, C, 2))
        # sticking contacts can only convert to sliding, so C+1 passes always
        # terminate with the friction cone satisfied exactly
        for _ in range(C + 1):
            f_slide = -(mu[:, None] * fn)[..., None] * u_dir * slide[..., None]
            A = H + h * np.einsum("nckd,nc,ncke->nde", Jxy, D * stick, Jxy)
            rhs = rhs_base + h * np.einsum("nckd,nck->nd", Jxy, f_slide)
            v_new = np.linalg.solve(A, rhs[..., None])[..., 0]
            u_new = np.einsum("nckd,nd->nck", Jxy, v_new)
            viol = stick & (np.linalg.norm(u_new, axis=-1) > v_slip)
            f_t = np.where(stick[..., None], -D[..., None] * u_new, f_slide)
            if not np.any(viol):
                break
            slide = slide | viol
            stick = stick & ~viol
            u_dir = np.where(
                viol[..., None],
                u_new / np.maximum(np.linalg.norm(u_new, axis=-1), 1e-12)[..., None],
                u_dir,
            )
    else:
        pen = np.zeros((n, 0))
        fn = np.zeros((n, 0))
        f_t = np.zeros((n, 0, 2))
        rhs = np.einsum("nde,ne->nd", H, v_gen) + h * (tau - bias)
        v_new = np.linalg.solve(H, rhs[..., None])[..., 0]

    out = state.copy()
    if model.floating:
        # the solved velocity coordinates ride with the body frame, so the
        # world conversion uses the *updated* orientation (frame-consistent
        # semi-implicit update; using the old frame leaks energy O(h) per step)
        w_new = v_new[:, 0:3]
        vl_body = v_new[:, 3:6]
        out.base_quat = sp.normalize_quat(
            sp.quat_mul(state.base_quat, sp.quat_from_rotvec(h * w_new))
        )
        R_new = sp.quat_to_rot(out.base_quat)
        vl_world = np.einsum("nij,nj->ni", R_new, vl_body)
        out.base_ang_vel = w_new
        out.base_lin_vel = vl_world
        out.base_pos = state.base_pos + h * vl_world
        out.joint_vel = v_new[:, 6:]
    else:
        out.joint_vel = v_new
    out.joint_pos = state.joint_pos + h * out.joint_vel

    nf = model.n_feet
    report = ContactReport(
        foot_normal=fn[:, :nf],
        foot_tangential=f_t[:, :nf],
        knee_contact=pen[:, nf:] > 0.0,
        foot_penetrating=pen[:, :nf] > 0.0,
    )
    return out, report


def step(state, torques, terrain, mu, model, cfg):
    """Single-step contract: raises SimulationDiverged on non-finite state."""
    new_state, report, diverged = step_batch(model, state, torques, terrain, mu, cfg)
    if np.any(diverged):
        idx = int(np.argmax(diverged))
        raise SimulationDiverged(float(state.time[idx]), f"(env {idx})")
    return new_state, report


def apply_push(state: SimState, v_xy) -> SimState:
    """Overwrite the base x-y world velocity; everything else untouched."""
    out = state.copy()
    v_xy = np.asarray(v_xy, dtype=float)
    out.base_lin_vel[:, 0] = v_xy[..., 0]
    out.base_lin_vel[:, 1] = v_xy[..., 1]
    return out
