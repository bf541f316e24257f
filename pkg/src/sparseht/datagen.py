"""Synthetic instance generation, corruption models, and instance files.

Design matrices are equicorrelated Gaussian: each row is N(0, S) with
S_jj = 1 and S_jl = c for j != l. Rows are drawn as
sqrt(1-c) * g + sqrt(c) * z * 1 with g a d-vector of standard normals and z
a shared scalar normal, which realizes exactly that covariance without
forming S. Sparse truths have exactly k_star nonzero entries drawn uniform
on (-2, 2) excluding zero.

Corruption is described by small frozen spec objects (Missing, Additive,
Multiplicative) that are shared between the data path (apply_corruption)
and the estimator path (models.make_corrupted_quadratic), so a corrupted
instance always carries the exact parameters the estimator needs.

Instances round-trip through a little-endian binary container (magic
b"SHTI") plus a JSON sidecar holding the generation spec. The container is
byte-stable for a fixed seed; the sidecar is written with sorted keys so
that repeated generation produces identical files.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from sparseht.rng import (
    STREAM_CORRUPT,
    STREAM_DESIGN,
    STREAM_LABELS,
    STREAM_MEASURE,
    STREAM_NOISE,
    STREAM_TRUTH,
    philox_rng,
)

_MAGIC = b"SHTI"
_VERSION = 1
_KIND_CODES = {"linear": 1, "logistic": 2, "lowrank": 3}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


# ---------------------------------------------------------------------------
# corruption specs


@dataclass(frozen=True)
class Missing:
    """Entries are zeroed independently with probability rho."""

    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("missing-data rate rho must lie in [0, 1)")


@dataclass(frozen=True)
class Additive:
    """Independent additive noise W added to the design.

    ``noise`` is a scalar standard deviation, a per-column standard
    deviation vector, or a full covariance matrix Sigma_W.
    """

    noise: Union[float, np.ndarray]

    def covariance(self, d: int) -> np.ndarray:
        """Sigma_W as a (d, d) matrix."""
        noise = np.asarray(self.noise, dtype=np.float64)
        if noise.ndim == 0:
            if noise < 0:
                raise ValueError("additive noise std must be nonnegative")
            return float(noise) ** 2 * np.eye(d)
        if noise.ndim == 1:
            if noise.shape[0] != d:
                raise ValueError("per-column noise std has wrong length")
            if np.any(noise < 0):
                raise ValueError("additive noise std must be nonnegative")
            return np.diag(noise**2)
        if noise.ndim == 2:
            if noise.shape != (d, d):
                raise ValueError("noise covariance has wrong shape")
            if not np.allclose(noise, noise.T, atol=1e-12):
                raise ValueError("noise covariance must be symmetric")
            if np.linalg.eigvalsh(noise).min() < -1e-10:
                raise ValueError("noise covariance must be positive semidefinite")
            return noise
        raise ValueError("noise must be a scalar, vector, or matrix")


@dataclass(frozen=True)
class Multiplicative:
    """Entrywise multiplicative corruption Z = A * U.

    Either ``keep_prob`` (U Bernoulli, the observed-entry probability) or
    explicit first/second moments of the corruption rows must be given.
    Moment entries must be nonzero because the estimator divides by them.
    """

    keep_prob: Optional[float] = None
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.keep_prob is not None:
            if not 0.0 < self.keep_prob <= 1.0:
                raise ValueError("keep_prob must lie in (0, 1]")
        elif self.first_moment is None or self.second_moment is None:
            raise ValueError(
                "multiplicative corruption needs keep_prob or both moments"
            )

    def moments(self, d: int):
        """(E u, E u u^T) as arrays of shape (d,) and (d, d)."""
        if self.keep_prob is not None:
            q = float(self.keep_prob)
            m1 = np.full(d, q)
            m2 = np.full((d, d), q * q)
            np.fill_diagonal(m2, q)
            return m1, m2
        m1 = np.asarray(self.first_moment, dtype=np.float64)
        m2 = np.asarray(self.second_moment, dtype=np.float64)
        if m1.shape != (d,) or m2.shape != (d, d):
            raise ValueError("moment arrays have wrong shape")
        if np.any(m1 == 0.0) or np.any(m2 == 0.0):
            raise ValueError("corruption moments must have no zero entries")
        return m1, m2


CorruptionSpec = Union[Missing, Additive, Multiplicative]


# ---------------------------------------------------------------------------
# generation primitives


def gen_equicorrelated_design(nb: int, d: int, c: float, seed: int) -> np.ndarray:
    """(nb, d) design with unit-variance columns and pairwise correlation c."""
    if nb < 1 or d < 1:
        raise ValueError("design dimensions must be positive")
    if not 0.0 <= c < 1.0:
        raise ValueError("column correlation c must lie in [0, 1)")
    rng = philox_rng(seed, STREAM_DESIGN)
    g = rng.standard_normal((nb, d))
    if c == 0.0:
        return g
    z = rng.standard_normal((nb, 1))
    return np.sqrt(1.0 - c) * g + np.sqrt(c) * z


def gen_sparse_truth(d: int, k_star: int, seed: int) -> np.ndarray:
    """d-vector with exactly k_star nonzeros, values uniform on (-2, 2)."""
    if not 1 <= k_star <= d:
        raise ValueError("k_star must lie in [1, d]")
    rng = philox_rng(seed, STREAM_TRUTH)
    support = np.sort(rng.choice(d, size=k_star, replace=False))
    vals = rng.uniform(-2.0, 2.0, size=k_star)
    while np.any(vals == 0.0):  # measure-zero but the support size is a contract
        vals[vals == 0.0] = rng.uniform(-2.0, 2.0, size=int(np.sum(vals == 0.0)))
    theta = np.zeros(d)
    theta[support] = vals
    return theta


def gen_linear_responses(
    design: np.ndarray, truth: np.ndarray, sigma: float, seed: int
) -> np.ndarray:
    """y = A theta_star + sigma * eps with standard normal eps."""
    if sigma < 0:
        raise ValueError("noise level sigma must be nonnegative")
    clean = design @ truth
    if sigma == 0.0:
        return clean
    rng = philox_rng(seed, STREAM_NOISE)
    return clean + sigma * rng.standard_normal(design.shape[0])


def gen_logistic_responses(design: np.ndarray, truth: np.ndarray, seed: int) -> np.ndarray:
    """Bernoulli 0/1 labels with P(y=1) = sigmoid(a^T theta_star)."""
    z = design @ truth
    p = np.empty_like(z)
    pos = z >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    p[~pos] = ez / (1.0 + ez)
    rng = philox_rng(seed, STREAM_LABELS)
    return (rng.random(z.shape[0]) < p).astype(np.float64)


def apply_corruption(design: np.ndarray, spec: CorruptionSpec, seed: int):
    """Corrupted copy of the design, plus the spec echoed back.

    The echo keeps the sampling and estimation sides tied to one object.
    """
    rng = philox_rng(seed, STREAM_CORRUPT)
    if isinstance(spec, Missing):
        mask = rng.random(design.shape) < spec.rho
        corrupted = np.where(mask, 0.0, design)
    elif isinstance(spec, Additive):
        noise = np.asarray(spec.noise, dtype=np.float64)
        if noise.ndim == 2:
            cov = spec.covariance(design.shape[1])
            chol = np.linalg.cholesky(cov + 1e-15 * np.eye(design.shape[1]))
            corrupted = design + rng.standard_normal(design.shape) @ chol.T
        else:
            spec.covariance(design.shape[1])  # runs the validation
            corrupted = design + rng.standard_normal(design.shape) * noise
    elif isinstance(spec, Multiplicative):
        if spec.keep_prob is None:
            raise ValueError("sampling multiplicative corruption needs keep_prob")
        u = (rng.random(design.shape) < spec.keep_prob).astype(np.float64)
        corrupted = design * u
    else:
        raise TypeError(f"unknown corruption spec {type(spec).__name__}")
    return corrupted, spec


# ---------------------------------------------------------------------------
# instances


@dataclass
class SyntheticInstance:
    """A generated problem: data arrays plus the recipe that produced them.

    ``design`` is (nb, d) for vector problems and (nb, d, p) for low-rank
    sensing, where each slice is one measurement matrix. ``spec`` records
    every generation parameter including the seed, so an instance file is
    self-describing.
    """

    kind: str
    design: np.ndarray
    responses: np.ndarray
    truth: Optional[np.ndarray]
    sigma: float
    n_batches: int
    batch_size: int
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown instance kind {self.kind!r}")
        nb = self.design.shape[0]
        if self.responses.shape != (nb,):
            raise ValueError("responses length must match the design")
        if self.n_batches * self.batch_size != nb:
            raise ValueError("n_batches * batch_size must equal the sample count")


def _resolve_batches(nb: int, n_batches: Optional[int]) -> int:
    if n_batches is None:
        n_batches = max(1, nb // 5)  # default batch size 5
    if nb % n_batches != 0:
        raise ValueError("n_batches must divide the sample count")
    return n_batches


def gen_regression_instance(
    nb: int,
    d: int,
    k_star: int,
    c: float,
    sigma: float,
    seed: int,
    n_batches: Optional[int] = None,
) -> SyntheticInstance:
    """Sparse linear regression instance with equicorrelated design."""
    n_batches = _resolve_batches(nb, n_batches)
    design = gen_equicorrelated_design(nb, d, c, seed)
    truth = gen_sparse_truth(d, k_star, seed)
    responses = gen_linear_responses(design, truth, sigma, seed)
    spec = dict(
        kind="linear", nb=nb, d=d, k_star=k_star, c=c, sigma=sigma,
        seed=seed, n_batches=n_batches,
    )
    return SyntheticInstance(
        "linear", design, responses, truth, sigma,
        n_batches, nb // n_batches, spec,
    )


def gen_logistic_instance(
    nb: int,
    d: int,
    k_star: int,
    seed: int,
    c: float = 0.0,
    radius_mult: float = 10.0,
    n_batches: Optional[int] = None,
) -> SyntheticInstance:
    """Sparse logistic regression instance.

    The instance records an l2 radius of radius_mult * ||theta_star||_2;
    solvers project onto that ball, which keeps margins bounded.
    """
    n_batches = _resolve_batches(nb, n_batches)
    design = gen_equicorrelated_design(nb, d, c, seed)
    truth = gen_sparse_truth(d, k_star, seed)
    responses = gen_logistic_responses(design, truth, seed)
    radius = radius_mult * float(np.linalg.norm(truth))
    spec = dict(
        kind="logistic", nb=nb, d=d, k_star=k_star, c=c, seed=seed,
        radius=radius, n_batches=n_batches,
    )
    return SyntheticInstance(
        "logistic", design, responses, truth, 0.0,
        n_batches, nb // n_batches, spec,
    )


def gen_lowrank_instance(
    d: int,
    p: int,
    k_star: int,
    nb: int,
    sigma: float,
    seed: int,
    n_batches: Optional[int] = None,
) -> SyntheticInstance:
    """Low-rank matrix sensing instance.

    Theta_star = U V^T with U (d, k_star) and V (p, k_star) filled with
    N(0, 1/sqrt(k_star)) entries (variance 1/sqrt(k_star)), so Theta_star
    entries have unit variance. Measurement matrices are standard normal
    and responses are trace inner products plus noise.
    """
    if k_star < 1 or k_star > min(d, p):
        raise ValueError("k_star must lie in [1, min(d, p)]")
    if sigma < 0:
        raise ValueError("noise level sigma must be nonnegative")
    n_batches = _resolve_batches(nb, n_batches)
    rng_t = philox_rng(seed, STREAM_TRUTH)
    scale = k_star ** -0.25  # std = sqrt(1/sqrt(k_star))
    u = rng_t.standard_normal((d, k_star)) * scale
    v = rng_t.standard_normal((p, k_star)) * scale
    truth = u @ v.T
    rng_m = philox_rng(seed, STREAM_MEASURE)
    design = rng_m.standard_normal((nb, d, p))
    clean = design.reshape(nb, d * p) @ truth.ravel()
    if sigma == 0.0:
        responses = clean
    else:
        rng_n = philox_rng(seed, STREAM_NOISE)
        responses = clean + sigma * rng_n.standard_normal(nb)
    spec = dict(
        kind="lowrank", nb=nb, d=d, p=p, k_star=k_star, sigma=sigma,
        seed=seed, n_batches=n_batches,
    )
    return SyntheticInstance(
        "lowrank", design, responses, truth, sigma,
        n_batches, nb // n_batches, spec,
    )


# ---------------------------------------------------------------------------
# container io


def _sidecar_path(path: str) -> str:
    return str(path) + ".json"


def save_instance(inst: SyntheticInstance, path: str) -> None:
    """Write the binary container and its JSON sidecar."""
    design = np.ascontiguousarray(inst.design, dtype=np.float64)
    responses = np.ascontiguousarray(inst.responses, dtype=np.float64)
    has_truth = inst.truth is not None
    dims = list(design.shape) + [inst.n_batches, inst.batch_size, int(has_truth)]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHH", _MAGIC, _VERSION, _KIND_CODES[inst.kind]))
        fh.write(struct.pack("<H", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}q", *dims))
        fh.write(design.astype("<f8").tobytes(order="C"))
        fh.write(responses.astype("<f8").tobytes(order="C"))
        if has_truth:
            truth = np.ascontiguousarray(inst.truth, dtype=np.float64)
            fh.write(truth.astype("<f8").tobytes(order="C"))
    sidecar = dict(inst.spec)
    sidecar.setdefault("kind", inst.kind)
    sidecar["sigma"] = inst.sigma
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(", ", ": "))
        fh.write("\n")


def load_instance(path: str) -> SyntheticInstance:
    """Read an instance container written by save_instance."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise ValueError(f"{path}: truncated header")
        magic, version, kind_code = struct.unpack("<4sHH", head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an instance container")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        if kind_code not in _KIND_NAMES:
            raise ValueError(f"{path}: unknown instance kind code {kind_code}")
        kind = _KIND_NAMES[kind_code]
        (ndims,) = struct.unpack("<H", fh.read(2))
        dims = struct.unpack(f"<{ndims}q", fh.read(8 * ndims))
        *shape, n_batches, batch_size, has_truth = dims
        shape = tuple(shape)
        want_ndim = 3 if kind == "lowrank" else 2
        if len(shape) != want_ndim:
            raise ValueError(f"{path}: {kind} container has wrong rank")
        nb = shape[0]
        raw = fh.read()
    count = int(np.prod(shape))
    need = count + nb + (int(np.prod(shape[1:])) if has_truth else 0)
    data = np.frombuffer(raw, dtype="<f8", count=need)
    if data.shape[0] != need:
        raise ValueError(f"{path}: truncated payload")
    design = data[:count].reshape(shape).astype(np.float64)
    responses = data[count : count + nb].astype(np.float64)
    truth = None
    if has_truth:
        truth = data[count + nb :].reshape(shape[1:]).astype(np.float64)
    try:
        with open(_sidecar_path(path)) as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"{path}: missing JSON sidecar {_sidecar_path(path)}")
    sigma = float(spec.get("sigma", 0.0))
    return SyntheticInstance(
        kind, design, responses, truth, sigma, int(n_batches), int(batch_size), spec
    )


# ---------------------------------------------------------------------------
# libsvm reader


def load_libsvm(path: str, n_features: Optional[int] = None, map_labels: bool = False):
    """Dense (design, labels) from a libsvm/svmlight text file.

    Feature indices are 1-based in the file and shifted down by one here.
    The width is ``n_features`` when given, otherwise the largest index
    seen. With ``map_labels`` the labels {-1, +1} are mapped to {0, 1}.
    """
    rows = []
    labels = []
    width = 0
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ValueError(f"{path}:{ln}: bad label {parts[0]!r}")
            feats = {}
            for tok in parts[1:]:
                idx, _, val = tok.partition(":")
                try:
                    idx = int(idx)
                    val = float(val)
                except ValueError:
                    raise ValueError(f"{path}:{ln}: bad feature token {tok!r}")
                if idx < 1:
                    raise ValueError(f"{path}:{ln}: feature index {idx} is not 1-based")
                if idx in feats:
                    raise ValueError(f"{path}:{ln}: duplicate feature index {idx}")
                if n_features is not None and idx > n_features:
                    raise ValueError(
                        f"{path}:{ln}: feature index {idx} exceeds n_features"
                    )
                feats[idx] = val
            if feats:
                width = max(width, max(feats))
            labels.append(label)
            rows.append(feats)
    if n_features is not None:
        width = n_features
    if width == 0:
        raise ValueError(f"{path}: no features found and n_features not given")
    design = np.zeros((len(rows), width))
    for r, feats in enumerate(rows):
        for idx, val in feats.items():
            design[r, idx - 1] = val
    y = np.asarray(labels, dtype=np.float64)
    if map_labels:
        bad = ~np.isin(y, (-1.0, 1.0))
        if np.any(bad):
            raise ValueError(f"{path}: labels must be -1/+1 to map to 0/1")
        y = (y + 1.0) / 2.0
    return design, y
