"""Kronecker-structured sensing operators and their serialization.

Two operator families, both mapping an H x W image to an m x n measurement:

* KCS: a single pair (phi: m x H, psi: n x W), Y = phi @ X @ psi.T.
  Equivalent to the mn x HW matrix kron(psi, phi) acting on vec(X).
* AKCS: one pair (phi_i: 1 x H, psi_i: n x W) per measurement row, so
  row i of Y is phi_i @ X @ psi_i.T. Row block i of the materialized
  matrix is kron(psi_i, phi_i).

Operators are immutable after construction. They never normalize their
inputs; coherence analysis normalizes internally and reconstruction uses
the raw matrices.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import InvalidDimensionError, ShapeError, SizeBudgetError
from .linalg import as_matrix, element_budget, gaussian_matrix, make_rng

BLOB_MAGIC = b"AKCS"
BLOB_VERSION = 1
BLOB_KIND_ARRAY = 1
BLOB_KIND_MEASUREMENT = 2
_HEADER = struct.Struct("<4sIIIII")  # magic, version, kind, d0, d1, d2


def _check_ratio(m: int, n: int, height: int, width: int) -> None:
    ratio = (m * n) / (height * width)
    if not 0.0 < ratio <= 1.0:
        raise InvalidDimensionError(
            f"sampling ratio {m}*{n}/({height}*{width}) = {ratio:.4f} outside (0, 1]"
        )


@dataclass(frozen=True, eq=False)
class KcsOperator:
    """Shared-pair operator: Y = phi @ X @ psi.T."""

    phi: np.ndarray  # (m, H)
    psi: np.ndarray  # (n, W)

    def __post_init__(self):
        object.__setattr__(self, "phi", as_matrix(self.phi, "phi"))
        object.__setattr__(self, "psi", as_matrix(self.psi, "psi"))
        m, height = self.phi.shape
        n, width = self.psi.shape
        if min(m, height, n, width) < 1:
            raise InvalidDimensionError("operator factors need positive dimensions")
        _check_ratio(m, n, height, width)

    scheme = "kcs"

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.phi.shape[1], self.psi.shape[1]

    @property
    def measurement_shape(self) -> tuple[int, int]:
        return self.phi.shape[0], self.psi.shape[0]

    @property
    def sampling_ratio(self) -> float:
        m, n = self.measurement_shape
        height, width = self.image_shape
        return (m * n) / (height * width)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.phi.tobytes())
        digest.update(self.psi.tobytes())
        m, n = self.measurement_shape
        height, width = self.image_shape
        return f"kcs:{height}x{width}->{m}x{n}:{digest.hexdigest()[:12]}"

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _check_image(self, x)
        return self.phi @ x @ self.psi.T

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = _check_measurement_array(self, y)
        return self.phi.T @ y @ self.psi

    def materialize(self, budget: int | None = None) -> np.ndarray:
        from .linalg import kron

        return kron(self.psi, self.phi, budget=budget)


@dataclass(frozen=True, eq=False)
class AkcsOperator:
    """Row-adaptive operator: row i of Y is phis[i] @ X @ psis[i].T."""

    phis: np.ndarray  # (m, H); row i is the 1 x H row factor for measurement row i
    psis: np.ndarray  # (m, n, W); slab i is the n x W column factor

    def __post_init__(self):
        phis = np.asarray(self.phis, dtype=np.float64)
        psis = np.asarray(self.psis, dtype=np.float64)
        if phis.ndim != 2:
            raise ShapeError(f"phis must be (m, H), got {phis.shape}")
        if psis.ndim != 3:
            raise ShapeError(f"psis must be (m, n, W), got {psis.shape}")
        if phis.shape[0] != psis.shape[0]:
            raise ShapeError(
                f"row count mismatch: {phis.shape[0]} phi rows vs {psis.shape[0]} psi slabs"
            )
        if not (np.all(np.isfinite(phis)) and np.all(np.isfinite(psis))):
            raise ShapeError("operator factors contain non-finite entries")
        m, height = phis.shape
        _, n, width = psis.shape
        if min(m, height, n, width) < 1:
            raise InvalidDimensionError("operator factors need positive dimensions")
        _check_ratio(m, n, height, width)
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "psis", psis)

    scheme = "akcs"

    @classmethod
    def from_pairs(cls, pairs) -> "AkcsOperator":
        """Build from a sequence of (phi_i: 1 x H, psi_i: n x W) pairs."""
        phis = np.vstack([as_matrix(p, "phi_i") for p, _ in pairs])
        psis = np.stack([as_matrix(q, "psi_i") for _, q in pairs])
        return cls(phis, psis)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.phis.shape[1], self.psis.shape[2]

    @property
    def measurement_shape(self) -> tuple[int, int]:
        return self.phis.shape[0], self.psis.shape[1]

    @property
    def sampling_ratio(self) -> float:
        m, n = self.measurement_shape
        height, width = self.image_shape
        return (m * n) / (height * width)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.phis.tobytes())
        digest.update(self.psis.tobytes())
        m, n = self.measurement_shape
        height, width = self.image_shape
        return f"akcs:{height}x{width}->{m}x{n}:{digest.hexdigest()[:12]}"

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _check_image(self, x)
        return np.einsum("ih,hw,irw->ir", self.phis, x, self.psis)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = _check_measurement_array(self, y)
        return np.einsum("ih,ir,irw->hw", self.phis, y, self.psis)

    def materialize(self, budget: int | None = None) -> np.ndarray:
        m, n = self.measurement_shape
        height, width = self.image_shape
        n_elems = m * n * height * width
        limit = element_budget(budget)
        if n_elems > limit:
            raise SizeBudgetError(
                f"materialized operator would hold {n_elems} elements, over budget {limit}"
            )
        blocks = [np.kron(self.psis[i], self.phis[i : i + 1]) for i in range(m)]
        return np.vstack(blocks)


SensingOperator = Union[KcsOperator, AkcsOperator]


@dataclass(frozen=True, eq=False)
class Measurement:
    """An m x n measurement tied to the operator that produced it."""

    y: np.ndarray
    operator_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "y", as_matrix(self.y, "measurement"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape


def _check_image(op: SensingOperator, x) -> np.ndarray:
    x = as_matrix(x, "image")
    if x.shape != op.image_shape:
        raise ShapeError(f"image shape {x.shape} does not match operator {op.image_shape}")
    return x


def _check_measurement_array(op: SensingOperator, y) -> np.ndarray:
    if isinstance(y, Measurement):
        y = y.y
    y = as_matrix(y, "measurement")
    if y.shape != op.measurement_shape:
        raise ShapeError(
            f"measurement shape {y.shape} does not match operator {op.measurement_shape}"
        )
    return y


def kcs_forward(op: KcsOperator, x) -> Measurement:
    if not isinstance(op, KcsOperator):
        raise ShapeError(f"kcs_forward needs a KcsOperator, got {type(op).__name__}")
    return Measurement(op.forward(x), op.fingerprint)


def akcs_forward(op: AkcsOperator, x) -> Measurement:
    if not isinstance(op, AkcsOperator):
        raise ShapeError(f"akcs_forward needs an AkcsOperator, got {type(op).__name__}")
    return Measurement(op.forward(x), op.fingerprint)


def kcs_adjoint(op: KcsOperator, y) -> np.ndarray:
    return op.adjoint(y)


def akcs_adjoint(op: AkcsOperator, y) -> np.ndarray:
    return op.adjoint(y)


def materialize_kcs(op: KcsOperator, budget: int | None = None) -> np.ndarray:
    return op.materialize(budget=budget)


def materialize_akcs(op: AkcsOperator, budget: int | None = None) -> np.ndarray:
    return op.materialize(budget=budget)


def flatten_akcs(y) -> np.ndarray:
    """Stack a measurement row-major (row i contiguous) into a column vector."""
    if isinstance(y, Measurement):
        y = y.y
    y = as_matrix(y, "measurement")
    return y.reshape(-1, 1, order="C").copy()


def akcs_from_kcs(op: KcsOperator) -> AkcsOperator:
    """Degenerate row-adaptive operator sharing one (phi, psi) pair; its
    forward output equals the KCS output exactly."""
    m = op.phi.shape[0]
    psis = np.repeat(op.psi[None, :, :], m, axis=0)
    return AkcsOperator(op.phi.copy(), psis)


class SamplingPlan(NamedTuple):
    m: int
    n: int
    achieved_ratio: float


def sampling_plan(height: int, width: int, target_sr: float) -> SamplingPlan:
    """Split a target sampling ratio symmetrically: m = round(sqrt(sr)*H),
    n = round(sqrt(sr)*W), each clamped to [1, H] / [1, W]."""
    if height < 1 or width < 1:
        raise InvalidDimensionError(f"image dims must be positive, got {height}x{width}")
    if not 0.0 < target_sr <= 1.0:
        raise InvalidDimensionError(f"target sampling ratio {target_sr} outside (0, 1]")
    root = np.sqrt(target_sr)
    m = min(max(int(round(root * height)), 1), height)
    n = min(max(int(round(root * width)), 1), width)
    return SamplingPlan(m, n, (m * n) / (height * width))


def gaussian_kcs(height: int, width: int, m: int, n: int, seed: int) -> KcsOperator:
    """Seeded Gaussian KCS operator; draw order is phi then psi."""
    rng = make_rng(seed)
    phi = gaussian_matrix(m, height, rng)
    psi = gaussian_matrix(n, width, rng)
    return KcsOperator(phi, psi)


def gaussian_akcs(height: int, width: int, m: int, n: int, seed: int) -> AkcsOperator:
    """Seeded Gaussian AKCS operator; pairs drawn row by row (phi_i, psi_i)."""
    rng = make_rng(seed)
    pairs = []
    for _ in range(m):
        phi_i = gaussian_matrix(1, height, rng)
        psi_i = gaussian_matrix(n, width, rng)
        pairs.append((phi_i, psi_i))
    return AkcsOperator.from_pairs(pairs)


def gaussian_operator(scheme: str, height: int, width: int, m: int, n: int, seed: int) -> SensingOperator:
    if scheme == "kcs":
        return gaussian_kcs(height, width, m, n, seed)
    if scheme == "akcs":
        return gaussian_akcs(height, width, m, n, seed)
    raise InvalidDimensionError(f"unknown scheme {scheme!r}")


# --- serialization ---------------------------------------------------------


def write_blob(path, arr: np.ndarray, kind: int = BLOB_KIND_ARRAY) -> None:
    """Write a 2-D or 3-D float64 array as header + little-endian payload."""
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if arr.ndim == 2:
        dims = (arr.shape[0], arr.shape[1], 0)
    elif arr.ndim == 3:
        dims = arr.shape
    else:
        raise ShapeError(f"blob arrays must be 2-D or 3-D, got {arr.ndim}-D")
    header = _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, kind, *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8").tobytes())


def read_blob(path) -> tuple[np.ndarray, int]:
    """Read a blob, returning (array, kind)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ShapeError(f"blob too short for header: {len(raw)} bytes")
    magic, version, kind, d0, d1, d2 = _HEADER.unpack_from(raw)
    if magic != BLOB_MAGIC:
        raise ShapeError(f"bad blob magic {magic!r}, expected {BLOB_MAGIC!r}")
    if version != BLOB_VERSION:
        raise ShapeError(f"unsupported blob version {version}")
    shape = (d0, d1) if d2 == 0 else (d0, d1, d2)
    expected = _HEADER.size + 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ShapeError(f"blob payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(shape).copy()
    return arr, kind


def save_measurement(path, meas: Measurement) -> None:
    write_blob(path, meas.y, kind=BLOB_KIND_MEASUREMENT)


def load_measurement(path, operator_id: str = "") -> Measurement:
    arr, kind = read_blob(path)
    if kind != BLOB_KIND_MEASUREMENT:
        raise ShapeError(f"blob at {path} is not a measurement (kind {kind})")
    return Measurement(arr, operator_id)


def operator_to_json(op: SensingOperator, seed: int | None = None,
                     blob_dir=None, blob_prefix: str = "operator") -> dict:
    """JSON document describing an operator.

    With ``seed`` given the document is self-contained ({scheme, H, W, m, n,
    seed}) and :func:`operator_from_json` regenerates the Gaussian operator.
    Otherwise factor matrices are written as blobs beside ``blob_dir`` and
    referenced by relative path.
    """
    height, width = op.image_shape
    m, n = op.measurement_shape
    doc = {"scheme": op.scheme, "H": height, "W": width, "m": m, "n": n}
    if seed is not None:
        doc["seed"] = int(seed)
        return doc
    if blob_dir is None:
        raise ValueError("blob_dir is required when no seed is recorded")
    blob_dir = Path(blob_dir)
    if isinstance(op, KcsOperator):
        names = {"phi": op.phi, "psi": op.psi}
    else:
        names = {"phis": op.phis, "psis": op.psis}
    doc["blobs"] = {}
    for name, arr in names.items():
        fname = f"{blob_prefix}_{name}.bin"
        write_blob(blob_dir / fname, arr)
        doc["blobs"][name] = fname
    return doc


def operator_from_json(doc: dict, base_dir=None) -> SensingOperator:
    scheme = doc["scheme"]
    height, width, m, n = int(doc["H"]), int(doc["W"]), int(doc["m"]), int(doc["n"])
    if "seed" in doc:
        return gaussian_operator(scheme, height, width, m, n, int(doc["seed"]))
    blobs = doc.get("blobs")
    if not blobs:
        raise ValueError("operator document has neither seed nor blobs")
    base = Path(base_dir) if base_dir is not None else Path(".")
    if scheme == "kcs":
        phi, _ = read_blob(base / blobs["phi"])
        psi, _ = read_blob(base / blobs["psi"])
        return KcsOperator(phi, psi)
    if scheme == "akcs":
        phis, _ = read_blob(base / blobs["phis"])
        psis, _ = read_blob(base / blobs["psis"])
        return AkcsOperator(phis, psis)
    raise ValueError(f"unknown scheme {scheme!r}")


def load_operator(path) -> SensingOperator:
    """Load an operator from a JSON document (blob paths resolve beside it)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    return operator_from_json(doc, base_dir=path.parent)
