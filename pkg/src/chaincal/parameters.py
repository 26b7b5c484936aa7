"""Parameter selection, packing, and perturbation.

The estimation vector is a flat slice of the model's DH entries selected by
a mask. Values keep their native units (mm for a/d, rad for alpha/offset);
no pre-scaling is applied.

Frozen by default, per the identification setup:
  - all four fields of link 1 of every chain (the locked torso joint),
  - alpha of the last arm link,
  - the fingertip tail, which is never part of the mask at all.
The head links shared by both eye chains appear once, owned by left_eye.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from .kinematics import (
    ARM_CHAINS,
    CHAIN_NAMES,
    SHARED_HEAD_LINKS,
    DHLink,
    KinematicChain,
    RobotModel,
)

FIELDS = ("a", "d", "alpha", "offset")

# perturbation scales per unit factor p, from the perturbation recipe:
# offset p/100 rad, alpha p/1000 rad, lengths 0.1*p mm, all U[-1,1]
_PERTURB_SCALE = {"a": 0.1, "d": 0.1, "alpha": 1e-3, "offset": 1e-2}

_CHAIN_ALIASES = {
    "LA": "left_arm", "RA": "right_arm", "LEye": "left_eye", "REye": "right_eye",
    "left_arm": "left_arm", "right_arm": "right_arm",
    "left_eye": "left_eye", "right_eye": "right_eye",
}
_FIELD_ALIASES = {"a": "a", "d": "d", "alpha": "alpha", "offset": "offset", "offsets": "offset"}


class MaskEntry(NamedTuple):
    chain: str
    link: int  # 0-based link index within the owning chain
    field: str
    free: bool


def _canonical_identities():
    out = []
    for chain in CHAIN_NAMES:
        if chain in ARM_CHAINS:
            n = 8
            links = range(n)
        elif chain == "left_eye":
            links = range(6)
        else:
            # right eye owns only its non-shared links; the head rows are
            # left_eye's so each physical parameter appears exactly once
            links = range(SHARED_HEAD_LINKS, 6)
        for link in links:
            for fld in FIELDS:
                out.append((chain, link, fld))
    return tuple(out)


_IDENTITIES = _canonical_identities()


@dataclass(frozen=True)
class ParameterMask:
    """Free/frozen flag for every DH entry of the model, in canonical order."""

    entries: tuple

    def __post_init__(self):
        ids = tuple((e.chain, e.link, e.field) for e in self.entries)
        if ids != _IDENTITIES:
            raise ValueError("mask entries must enumerate the model in canonical order")
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def free_entries(self) -> tuple:
        return tuple(e for e in self.entries if e.free)

    @property
    def free_count(self) -> int:
        return sum(1 for e in self.entries if e.free)

    def with_overrides(self, overrides: Iterable[tuple]) -> "ParameterMask":
        """Return a mask with explicit (chain, link, field, free) overrides applied."""
        table = {(e.chain, e.link, e.field): e.free for e in self.entries}
        for chain, link, fld, free in overrides:
            chain = _CHAIN_ALIASES.get(chain, chain)
            key = (chain, int(link), fld)
            if key not in table:
                raise KeyError(f"no mask entry for {key}")
            table[key] = bool(free)
        return ParameterMask(tuple(
            MaskEntry(c, l, f, table[(c, l, f)]) for (c, l, f) in _IDENTITIES
        ))

    def describe(self) -> list:
        """Free entries as dicts, 1-based link numbers, for reports."""
        return [
            {"chain": e.chain, "link": e.link + 1, "field": e.field}
            for e in self.free_entries
        ]


def _is_frozen_by_rule(chain: str, link: int, field: str) -> bool:
    if link == 0:
        return True
    if chain in ARM_CHAINS and link == 7 and field == "alpha":
        return True
    return False


def default_mask(chains, fields=FIELDS) -> ParameterMask:
    """Build a mask freeing the given fields on the given chains.

    Args:
        chains: chain names (canonical or LA/RA/LEye/REye shorthand),
            or "all" for every chain.
        fields: field names among a, d, alpha, offset ("offsets" accepted),
            or "all".

    Shared head links count as part of either eye chain: selecting
    right_eye frees them too (they are the head the right camera hangs on).
    """
    if isinstance(chains, str):
        chains = [chains]
    if isinstance(fields, str):
        fields = [fields]
    chain_set = set()
    for c in chains:
        if c == "all":
            chain_set.update(CHAIN_NAMES)
            continue
        if c not in _CHAIN_ALIASES:
            raise KeyError(f"unknown chain {c!r}")
        chain_set.add(_CHAIN_ALIASES[c])
    field_set = set()
    for f in fields:
        if f == "all":
            field_set.update(FIELDS)
            continue
        if f not in _FIELD_ALIASES:
            raise KeyError(f"unknown field {f!r}")
        field_set.add(_FIELD_ALIASES[f])
    if not chain_set or not field_set:
        raise ValueError("selection must name at least one chain and one field")

    entries = []
    for chain, link, fld in _IDENTITIES:
        selected = chain in chain_set
        if chain == "left_eye" and link < SHARED_HEAD_LINKS and "right_eye" in chain_set:
            selected = True
        free = selected and fld in field_set and not _is_frozen_by_rule(chain, link, fld)
        entries.append(MaskEntry(chain, link, fld, free))
    return ParameterMask(tuple(entries))


def parse_mask_spec(spec: str) -> ParameterMask:
    """Mask from a compact "<chains>:<fields>" string.

    Chains and fields are joined with "+", e.g. "LA:all",
    "LA+RA:offset+alpha", "all:offsets". The field part may be omitted
    ("LA+RA") and defaults to all fields.
    """
    if not isinstance(spec, str) or not spec.strip():
        raise ValueError("mask spec must be a non-empty string")
    chains_part, sep, fields_part = spec.partition(":")
    chains = [c.strip() for c in chains_part.split("+") if c.strip()]
    if sep and not fields_part.strip():
        raise ValueError(f"mask spec {spec!r} has an empty field list")
    fields = [f.strip() for f in fields_part.split("+") if f.strip()] if sep else ["all"]
    if not chains:
        raise ValueError(f"mask spec {spec!r} has an empty chain list")
    return default_mask(chains, fields)


def pack(model: RobotModel, mask: ParameterMask) -> np.ndarray:
    """Extract the free entries of a model as a flat vector, mask order."""
    out = np.empty(mask.free_count)
    for i, e in enumerate(mask.free_entries):
        out[i] = getattr(model.chain(e.chain).links[e.link], e.field)
    return out


def unpack(model: RobotModel, mask: ParameterMask, vector) -> RobotModel:
    """Write a flat vector back into a model, returning a new RobotModel.

    Frozen entries are carried over untouched. Head rows written through
    left_eye entries land in both eye chains, keeping them identical.
    """
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (mask.free_count,):
        raise ValueError(f"expected vector of shape ({mask.free_count},), got {vector.shape}")
    updates = {}
    for e, value in zip(mask.free_entries, vector):
        updates.setdefault((e.chain, e.link), {})[e.field] = float(value)

    def rebuilt(chain: KinematicChain, owner: str) -> KinematicChain:
        links = list(chain.links)
        for (c, link), fields in updates.items():
            if c == owner:
                links[link] = replace(links[link], **fields)
        return KinematicChain(chain.name, tuple(links), fixed_tail=chain.fixed_tail)

    left_eye = rebuilt(model.left_eye, "left_eye")
    # graft the (possibly updated) shared head onto the right eye
    right_links = list(rebuilt(model.right_eye, "right_eye").links)
    right_links[:SHARED_HEAD_LINKS] = left_eye.links[:SHARED_HEAD_LINKS]
    right_eye = KinematicChain("right_eye", tuple(right_links), fixed_tail=model.right_eye.fixed_tail)

    return RobotModel(
        left_arm=rebuilt(model.left_arm, "left_arm"),
        right_arm=rebuilt(model.right_arm, "right_arm"),
        left_eye=left_eye,
        right_eye=right_eye,
        intrinsics=model.intrinsics,
        joint_limits=model.joint_limits,
    )


def mask_to_dict(mask: ParameterMask) -> dict:
    """JSON-ready form: the free entries, 1-based link numbers."""
    return {"free": mask.describe()}


def mask_from_dict(data: dict) -> ParameterMask:
    free = {(e["chain"], int(e["link"]) - 1, e["field"]) for e in data["free"]}
    unknown = free - set(_IDENTITIES)
    if unknown:
        raise ValueError(f"unknown mask entries: {sorted(unknown)}")
    return ParameterMask(tuple(
        MaskEntry(c, l, f, (c, l, f) in free) for (c, l, f) in _IDENTITIES
    ))


def perturb(model: RobotModel, mask: ParameterMask, p: float, rng) -> RobotModel:
    """Perturb the free entries of a model with factor p.

    Each free entry gets an additive U[-1,1] draw scaled per field:
    offsets by p/100 rad, alphas by p/1000 rad, lengths by 0.1*p mm.
    Draws happen in mask order. Frozen entries are untouched bit-exact.
    """
    if p < 0:
        raise ValueError("perturbation factor must be >= 0")
    free = mask.free_entries
    draws = rng.uniform(-1.0, 1.0, len(free))
    vec = pack(model, mask)
    for i, e in enumerate(free):
        vec[i] += _PERTURB_SCALE[e.field] * p * draws[i]
    return unpack(model, mask, vec)
