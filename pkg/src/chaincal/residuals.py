"""Residual assembly over chain combinations, and its numerical Jacobian.

Per pose, a combination contributes:
  - 3 components per touch pair: mu * (FK_right - FK_left - eps_obs), mm
    scaled by the pixel-comparability weight mu = 320 / (d * pi/3),
  - 2 components per (arm, eye) reprojection pair:
    project(root_to_eye @ FK_arm) - observed pixel, px.

mu is recomputed per pose at every evaluation from the current estimate
(left-eye origin to left-arm end-effector distance, mm) unless overridden.
Estimated points at non-positive camera depth yield a large finite sentinel
residual instead of failing, and are counted.

Samples are duck-typed: anything with theta (20,), contact_noise (3,),
pixels {(arm, eye): (u, v)} and visible {(arm, eye): bool} works.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics
from .kinematics import ARM_CHAINS, EYE_CHAINS, RobotModel, SHARED_HEAD_LINKS, _chain_transforms, chain_q
from .parameters import FIELDS, ParameterMask

SENTINEL_PX = 1.0e6
_MU_NUM = 320.0
_MU_APERTURE = np.pi / 3.0

# forward-difference steps per field; angles use 1e-7 rad so the
# central-difference agreement bound holds with margin
FD_STEPS = {"a": 1e-3, "d": 1e-3, "alpha": 1e-7, "offset": 1e-7}

_TOUCH_ORDER = (("left_arm", "right_arm"),)
_REPROJ_ORDER = (
    ("left_arm", "left_eye"),
    ("left_arm", "right_eye"),
    ("right_arm", "left_eye"),
    ("right_arm", "right_eye"),
)

_NAMED_COMBOS = {
    "LARA": (_TOUCH_ORDER, ()),
    "LALEye": ((), (("left_arm", "left_eye"),)),
    "LAREye": ((), (("left_arm", "right_eye"),)),
    "RALEye": ((), (("right_arm", "left_eye"),)),
    "RAREye": ((), (("right_arm", "right_eye"),)),
    "LALREye": ((), (("left_arm", "left_eye"), ("left_arm", "right_eye"))),
    "LARALEye": (_TOUCH_ORDER, (("left_arm", "left_eye"), ("right_arm", "left_eye"))),
    "LARALREye": (_TOUCH_ORDER, _REPROJ_ORDER),
}


@dataclass(frozen=True)
class ChainCombo:
    """Which chains constrain the calibration: touch pairs + reprojection pairs."""

    touch: tuple = ()
    reprojection: tuple = ()
    label: str = ""

    def __post_init__(self):
        touch = tuple(tuple(p) for p in self.touch)
        reproj = tuple(tuple(p) for p in self.reprojection)
        if not touch and not reproj:
            raise ValueError("a combination needs at least one residual term")
        for a, b in touch:
            if a not in ARM_CHAINS or b not in ARM_CHAINS or a == b:
                raise ValueError(f"touch pair must be two distinct arms, got {(a, b)}")
        for arm, eye in reproj:
            if arm not in ARM_CHAINS or eye not in EYE_CHAINS:
                raise ValueError(f"reprojection pair must be (arm, eye), got {(arm, eye)}")
        if len(set(touch)) != len(touch) or len(set(reproj)) != len(reproj):
            raise ValueError("duplicate pair in combination")
        # canonical evaluation order, independent of construction order
        touch = tuple(p for p in _TOUCH_ORDER if p in touch)
        reproj = tuple(p for p in _REPROJ_ORDER if p in reproj)
        object.__setattr__(self, "touch", touch)
        object.__setattr__(self, "reprojection", reproj)
        if not self.label:
            object.__setattr__(self, "label", self._synth_label())

    def _synth_label(self):
        short = {"left_arm": "LA", "right_arm": "RA", "left_eye": "LEye", "right_eye": "REye"}
        for name, (t, r) in _NAMED_COMBOS.items():
            if t == self.touch and r == self.reprojection:
                return name
        parts = [f"touch({short[a]},{short[b]})" for a, b in self.touch]
        parts += [f"reproj({short[a]},{short[e]})" for a, e in self.reprojection]
        return "+".join(parts)

    @classmethod
    def from_name(cls, name: str) -> "ChainCombo":
        if name not in _NAMED_COMBOS:
            raise KeyError(f"unknown combination {name!r}; known: {sorted(_NAMED_COMBOS)}")
        touch, reproj = _NAMED_COMBOS[name]
        return cls(touch=touch, reprojection=reproj, label=name)

    @property
    def components_per_pose(self) -> int:
        return 3 * len(self.touch) + 2 * len(self.reprojection)


def combo_names() -> tuple:
    return tuple(_NAMED_COMBOS)


def mu_coefficient(distance_mm) -> np.ndarray:
    """Pixel-comparability weight for touch components at viewing distance d."""
    d = np.asarray(distance_mm, dtype=float)
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise ValueError(f"viewing distance must be positive and finite, got {distance_mm!r}")
    out = _MU_NUM / (d * _MU_APERTURE)
    return float(out) if out.ndim == 0 else out


@dataclass
class ResidualStats:
    behind_camera: int = 0


class ResidualProblem:
    """Precomputed arrays for fast repeated evaluation on one sample slice.

    Evaluation works on raw per-chain parameter tables so the Jacobian can
    bump single entries without rebuilding model objects. Use from_model /
    residual / jacobian; `stats` accumulates sentinel counts across calls.
    """

    def __init__(self, model: RobotModel, samples, combo: ChainCombo,
                 mask: ParameterMask | None = None, mu_override=None):
        if len(samples) == 0:
            raise ValueError("empty sample slice")
        self.combo = combo
        self.mask = mask
        self.intrinsics: CameraIntrinsics = model.intrinsics
        self.stats = ResidualStats()
        m = len(samples)
        thetas = np.array([s.theta for s in samples], dtype=float)
        self.eps = np.array([s.contact_noise for s in samples], dtype=float)

        self._needed = set()
        for a, b in combo.touch:
            self._needed.update((a, b))
        for arm, eye in combo.reprojection:
            self._needed.update((arm, eye))
        if combo.touch:
            # mu needs the left-eye origin and the left-arm end effector
            self._needed.update(("left_arm", "left_eye"))
        self._q = {c: chain_q(c, thetas) for c in self._needed}

        self.obs = {}
        for pair in combo.reprojection:
            rows = np.empty((m, 2))
            for i, s in enumerate(samples):
                if pair not in s.pixels or not s.visible.get(pair, False):
                    raise ValueError(
                        f"sample {i} has no observation for pair {pair}; "
                        f"the combination {combo.label} cannot be assembled"
                    )
                rows[i] = s.pixels[pair]
            self.obs[pair] = rows

        if mu_override is None:
            self._mu_fixed = None
        else:
            mu = np.asarray(mu_override, dtype=float)
            if mu.ndim == 0:
                mu = np.full(m, float(mu))
            if mu.shape != (m,):
                raise ValueError(f"mu override must be scalar or shape ({m},)")
            self._mu_fixed = mu

        self.n_poses = m
        self.dim = m * combo.components_per_pose
        self._base_tables = self.tables_from_model(model)
        if mask is not None:
            self._scatter = self._build_scatter(mask)

    def tables_from_model(self, model: RobotModel) -> dict:
        tables = {}
        for name in self._needed:
            chain = model.chain(name)
            tables[name] = (chain.params(), chain.fixed_tail)
        return tables

    def _build_scatter(self, mask: ParameterMask):
        """Map each free mask entry to the table cells it drives."""
        col = {f: i for i, f in enumerate(FIELDS)}
        scatter = []
        for e in mask.free_entries:
            cells = []
            if e.chain in self._needed:
                cells.append((e.chain, e.link, col[e.field]))
            if e.chain == "left_eye" and e.link < SHARED_HEAD_LINKS and "right_eye" in self._needed:
                cells.append(("right_eye", e.link, col[e.field]))
            scatter.append(tuple(cells))
        return tuple(scatter)

    def _fk(self, tables, name):
        params, tail = tables[name]
        return _chain_transforms(params, self._q[name], tail)

    def residual_from_tables(self, tables: dict) -> np.ndarray:
        T = {name: self._fk(tables, name) for name in self._needed}
        pos = {name: T[name][:, :3, 3] for name in T}
        blocks = []
        if self.combo.touch:
            if self._mu_fixed is not None:
                mu = self._mu_fixed
            else:
                d = np.linalg.norm(pos["left_eye"] - pos["left_arm"], axis=1)
                mu = mu_coefficient(d)
            for a, b in self.combo.touch:
                blocks.append((pos[b] - pos[a] - self.eps) * mu[:, None])
        for arm, eye in self.combo.reprojection:
            Te = T[eye]
            R = Te[:, :3, :3]
            rel = pos[arm] - Te[:, :3, 3]
            # camera-frame point: R^T (x - t)
            pe = np.einsum("mij,mi->mj", R, rel)
            z = pe[:, 2]
            behind = z <= 0.0
            uv = np.full((self.n_poses, 2), SENTINEL_PX)
            ok = ~behind
            if np.any(ok):
                uv[ok, 0] = self.intrinsics.fx * pe[ok, 0] / z[ok] + self.intrinsics.cx
                uv[ok, 1] = self.intrinsics.fy * pe[ok, 1] / z[ok] + self.intrinsics.cy
            n_behind = int(behind.sum())
            if n_behind:
                self.stats.behind_camera += n_behind
                uv[behind] = SENTINEL_PX
                blocks.append(np.where(behind[:, None], uv, uv - self.obs[(arm, eye)]))
            else:
                blocks.append(uv - self.obs[(arm, eye)])
        return np.concatenate(blocks, axis=1).reshape(-1)

    def _tables_with(self, vector) -> dict:
        tables = {name: (params.copy(), tail) for name, (params, tail) in self._base_tables.items()}
        for cells, value in zip(self._scatter, vector):
            for name, link, col in cells:
                tables[name][0][link, col] = value
        return tables

    def residual(self, vector) -> np.ndarray:
        """Residual at a packed free-parameter vector (requires a mask)."""
        return self.residual_from_tables(self._tables_with(vector))

    def jacobian(self, vector) -> np.ndarray:
        """Forward-difference Jacobian at a packed vector, one column per free entry."""
        base_tables = self._tables_with(vector)
        r0 = self.residual_from_tables(base_tables)
        J = np.empty((self.dim, len(vector)))
        for j, (entry, cells) in enumerate(zip(self.mask.free_entries, self._scatter)):
            h = FD_STEPS[entry.field]
            bumped = {name: (params.copy(), tail) for name, (params, tail) in base_tables.items()}
            for name, link, col in cells:
                bumped[name][0][link, col] = vector[j] + h
            J[:, j] = (self.residual_from_tables(bumped) - r0) / h
        return J


def touch_residual(model: RobotModel, sample) -> np.ndarray:
    """Unweighted contact residual FK_right - FK_left - eps_obs, mm."""
    from .kinematics import end_effector_position

    xl = end_effector_position(model.left_arm, chain_q("left_arm", sample.theta))
    xr = end_effector_position(model.right_arm, chain_q("right_arm", sample.theta))
    return xr - xl - np.asarray(sample.contact_noise, dtype=float)


def reprojection_residual(model: RobotModel, sample, arm: str, eye: str) -> np.ndarray:
    """Predicted-minus-observed pixel for one (arm, eye) pair.

    Returns the (SENTINEL_PX, SENTINEL_PX) sentinel when the estimated point
    falls at non-positive camera depth.
    """
    combo = ChainCombo(reprojection=((arm, eye),))
    prob = ResidualProblem(model, [sample], combo)
    return prob.residual_from_tables(prob.tables_from_model(model))


def assemble(model: RobotModel, mask, samples, combo: ChainCombo, mu_override=None) -> np.ndarray:
    """Stacked residual vector over a sample slice.

    Component order per pose: touch blocks, then reprojection blocks in
    canonical pair order; poses in slice order.
    """
    prob = ResidualProblem(model, samples, combo, mask=None, mu_override=mu_override)
    return prob.residual_from_tables(prob.tables_from_model(model))


def assemble_with_stats(model, mask, samples, combo, mu_override=None):
    prob = ResidualProblem(model, samples, combo, mask=None, mu_override=mu_override)
    vec = prob.residual_from_tables(prob.tables_from_model(model))
    return vec, prob.stats


def jacobian(model: RobotModel, mask: ParameterMask, samples, combo: ChainCombo,
             mu_override=None) -> np.ndarray:
    """Forward-difference Jacobian of the assembled residual, (dim, free_count)."""
    from .parameters import pack

    prob = ResidualProblem(model, samples, combo, mask=mask, mu_override=mu_override)
    return prob.jacobian(pack(model, mask))
