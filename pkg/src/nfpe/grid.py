"""Uniform truncated-domain grids and the discrete operators built on them.

The domain is [-L, L]^d (d = 1 or 2) split into n cells per axis; fields hold
cell averages.  Two boundary closures are supported for the Laplacian and the
Helmholtz inverse:

* ``no_flux``       mirror ghost cells, conserves the discrete integral
* ``zero_dirichlet`` zero ghost cells

The drift divergence uses first-order donor-cell upwinding with zero flux
through the outermost faces, so its output always sums to zero exactly.

Fields are value types and every operator is a pure function; results are
bitwise deterministic (solves are direct, no iteration-order ambiguity).
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.ndimage
import scipy.sparse
import scipy.sparse.linalg

from .errors import GridMismatch, HelmholtzError

BOUNDARIES = ("no_flux", "zero_dirichlet")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-L, L]^d with n cells per axis."""

    d: int
    half_width: float
    n: int
    boundary: str = "no_flux"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 8:
            raise ValueError(f"need at least 8 cells per axis, got {self.n}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    def axis_centers(self) -> np.ndarray:
        return -self.half_width + (np.arange(self.n) + 0.5) * self.dx

    def axis_edges(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n + 1) * self.dx

    def cell_centers(self) -> np.ndarray:
        """Cell-center coordinates, shape (n^d, d)."""
        c = self.axis_centers()
        if self.d == 1:
            return c[:, None]
        x, y = np.meshgrid(c, c, indexing="ij")
        return np.stack([x.ravel(), y.ravel()], axis=1)


@dataclass
class Field:
    """Cell-averaged scalar function on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(f"non-finite field value at cell {tuple(bad)}")

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


@dataclass(frozen=True)
class FieldNorms:
    l1: float
    l2: float
    linf: float
    h_minus_1: float


def constant_field(grid: GridSpec, value: float) -> Field:
    return Field(grid, np.full(grid.shape, float(value)))


def require_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"grids differ: {a.grid} vs {b.grid}")


def l1_distance(a: Field, b: Field) -> float:
    require_same_grid(a, b)
    return float(np.abs(a.values - b.values).sum() * a.grid.cell_volume)


# ---------------------------------------------------------------------------
# Laplacian


def _pad_ghost(values: np.ndarray, boundary: str) -> np.ndarray:
    if boundary == "no_flux":
        # mirror ghost: zero normal gradient at the wall
        return np.pad(values, 1, mode="edge")
    # antisymmetric ghost: the value vanishes at the wall itself (second order);
    # corners are never read by the 5-point stencil
    p = np.pad(values, 1, mode="constant")
    if values.ndim == 1:
        p[0] = -values[0]
        p[-1] = -values[-1]
    else:
        p[0, 1:-1] = -values[0, :]
        p[-1, 1:-1] = -values[-1, :]
        p[1:-1, 0] = -values[:, 0]
        p[1:-1, -1] = -values[:, -1]
    return p


def apply_laplacian(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Second-order centered Laplacian on raw cell values."""
    p = _pad_ghost(values, grid.boundary)
    inv2 = 1.0 / grid.dx**2
    if grid.d == 1:
        return (p[:-2] - 2.0 * values + p[2:]) * inv2
    core = -4.0 * values + p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    return core * inv2


def laplacian(u: Field) -> Field:
    return Field(u.grid, apply_laplacian(u.values, u.grid))


@functools.lru_cache(maxsize=32)
def laplacian_matrix(grid: GridSpec) -> scipy.sparse.csr_matrix:
    """Sparse matrix of the discrete Laplacian (same stencil as apply_laplacian)."""
    n = grid.n
    inv2 = 1.0 / grid.dx**2
    main = -2.0 * np.ones(n)
    if grid.boundary == "no_flux":
        main[0] = main[-1] = -1.0
    else:
        main[0] = main[-1] = -3.0
    off = np.ones(n - 1)
    t = scipy.sparse.diags([off, main, off], [-1, 0, 1], format="csr") * inv2
    if grid.d == 1:
        return t
    eye = scipy.sparse.identity(n, format="csr")
    return (scipy.sparse.kron(t, eye) + scipy.sparse.kron(eye, t)).tocsr()


def h1_seminorm_sq(u: Field) -> float:
    """Discrete Dirichlet energy sum over faces; equals -(u, lap u) * dx^d exactly."""
    g = u.grid
    v = u.values
    w = g.cell_volume / g.dx**2
    total = 0.0
    if g.d == 1:
        total += float(np.sum((v[1:] - v[:-1]) ** 2)) * w
        if g.boundary == "zero_dirichlet":
            # wall sits half a cell out: one-sided gradient 2 u0/dx
            total += 2.0 * float(v[0] ** 2 + v[-1] ** 2) * w
        return total
    total += float(np.sum((v[1:, :] - v[:-1, :]) ** 2)) * w
    total += float(np.sum((v[:, 1:] - v[:, :-1]) ** 2)) * w
    if g.boundary == "zero_dirichlet":
        total += 2.0 * float(np.sum(v[0, :] ** 2 + v[-1, :] ** 2)) * w
        total += 2.0 * float(np.sum(v[:, 0] ** 2 + v[:, -1] ** 2)) * w
    return total


# ---------------------------------------------------------------------------
# Helmholtz inverse (eps*I - Lap)^{-1}

_HELMHOLTZ_RESIDUAL_TOL = 1e-10


@functools.lru_cache(maxsize=16)
def _helmholtz_banded(grid: GridSpec, eps: float) -> np.ndarray:
    """Symmetric banded form of eps*I - Lap for the 1D direct solve."""
    n = grid.n
    inv2 = 1.0 / grid.dx**2
    ab = np.zeros((2, n))
    ab[0, 1:] = -inv2
    ab[1, :] = eps + 2.0 * inv2
    if grid.boundary == "no_flux":
        ab[1, 0] = eps + inv2
        ab[1, -1] = eps + inv2
    else:
        ab[1, 0] = eps + 3.0 * inv2
        ab[1, -1] = eps + 3.0 * inv2
    return ab


@functools.lru_cache(maxsize=16)
def _helmholtz_factor_2d(grid: GridSpec, eps: float):
    a = (eps * scipy.sparse.identity(grid.n**2) - laplacian_matrix(grid)).tocsc()
    return scipy.sparse.linalg.splu(a)


def apply_helmholtz_inverse(values: np.ndarray, grid: GridSpec, eps: float) -> np.ndarray:
    if grid.d == 1:
        u = scipy.linalg.solveh_banded(_helmholtz_banded(grid, eps), values)
    else:
        u = _helmholtz_factor_2d(grid, eps).solve(values.ravel()).reshape(grid.shape)
    # Direct solves land at machine accuracy; the check guards corrupt factors.
    resid = values - (eps * u - apply_laplacian(u, grid))
    scale = max(float(np.abs(values).sum() * grid.cell_volume), 1e-300)
    rel = float(np.abs(resid).sum() * grid.cell_volume) / scale
    if rel > _HELMHOLTZ_RESIDUAL_TOL:
        raise HelmholtzError("Helmholtz solve did not reach requested residual", rel)
    return u


def helmholtz_inverse(f: Field, eps: float) -> Field:
    """Solve (eps*I - Lap) u = f with the grid's boundary closure."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return Field(f.grid, apply_helmholtz_inverse(f.values, f.grid, eps))


def norms(u: Field) -> FieldNorms:
    vol = u.grid.cell_volume
    v = u.values
    phi = apply_helmholtz_inverse(v, u.grid, 1.0)
    quad = float(np.sum(v * phi) * vol)
    return FieldNorms(
        l1=float(np.abs(v).sum() * vol),
        l2=float(np.sqrt(np.sum(v * v) * vol)),
        linf=float(np.abs(v).max()) if v.size else 0.0,
        h_minus_1=float(np.sqrt(max(quad, 0.0))),
    )


# ---------------------------------------------------------------------------
# Upwind divergence


def apply_divergence_upwind(
    components: list[np.ndarray], face_velocity: list[np.ndarray], grid: GridSpec
) -> np.ndarray:
    """Donor-cell divergence of the face fluxes v * G, zero at domain faces.

    components[axis] holds the transported cell quantity for that axis and
    face_velocity[axis] the face-normal velocity samples, with axis-0 faces
    shaped (n+1,) in 1D and (n+1, n) in 2D.
    """
    out = np.zeros(grid.shape)
    inv = 1.0 / grid.dx
    for axis in range(grid.d):
        G = np.moveaxis(np.asarray(components[axis]), axis, 0)
        v = np.moveaxis(np.asarray(face_velocity[axis]), axis, 0)
        if v.shape[0] != grid.n + 1:
            raise ValueError("face velocity has wrong leading size")
        flux = np.zeros_like(v)
        vin = v[1:-1]
        flux[1:-1] = np.where(vin >= 0.0, vin * G[:-1], vin * G[1:])
        div = (flux[1:] - flux[:-1]) * inv
        out += np.moveaxis(div, 0, axis)
    return out


def divergence_upwind(
    components: list[Field], face_velocity: list[np.ndarray]
) -> Field:
    grid = components[0].grid
    if len(components) != grid.d:
        raise ValueError(f"need {grid.d} components, got {len(components)}")
    for c in components[1:]:
        require_same_grid(components[0], c)
    vals = apply_divergence_upwind([c.values for c in components], face_velocity, grid)
    return Field(grid, vals)


def face_points(grid: GridSpec, axis: int) -> np.ndarray:
    """Coordinates of face centers normal to `axis`, shape (faces, d)."""
    e = grid.axis_edges()
    c = grid.axis_centers()
    if grid.d == 1:
        return e[:, None]
    if axis == 0:
        x, y = np.meshgrid(e, c, indexing="ij")
    else:
        x, y = np.meshgrid(c, e, indexing="ij")
    return np.stack([x.ravel(), y.ravel()], axis=1)


def sample_face_velocity(grid: GridSpec, vector_field) -> list[np.ndarray]:
    """Evaluate a vector field x -> D(x) at face centers, one array per axis."""
    out = []
    for axis in range(grid.d):
        pts = face_points(grid, axis)
        vals = np.asarray(vector_field(pts))[:, axis]
        shape = (grid.n + 1,) if grid.d == 1 else (
            (grid.n + 1, grid.n) if axis == 0 else (grid.n, grid.n + 1)
        )
        out.append(vals.reshape(shape))
    return out


# ---------------------------------------------------------------------------
# Mollification


def bump_profile(s: np.ndarray) -> np.ndarray:
    """C-infinity bump exp(-1/(1-s^2)) on |s|<1, zero outside (unnormalized)."""
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si * si))
    return out


def _mollifier_weights(eps: float, dx: float) -> np.ndarray | None:
    m = int(np.floor(eps / dx))
    if m < 1:
        return None
    offsets = np.arange(-m, m + 1) * dx
    w = bump_profile(offsets / eps)
    return w / w.sum()


def mollify_field(u: Field, eps: float) -> Field:
    """Convolve with a normalized discrete bump of radius eps (zero padding).

    Returns the field unchanged when the radius does not resolve a cell.
    """
    w = _mollifier_weights(eps, u.grid.dx)
    if w is None:
        return u.copy()
    vals = u.values
    for axis in range(u.grid.d):
        vals = scipy.ndimage.convolve1d(vals, w, axis=axis, mode="constant", cval=0.0)
    return Field(u.grid, vals)


# ---------------------------------------------------------------------------
# Field I/O

_BINARY_MAGIC = b"NFPEF1\x00\x00"


def fmt(x) -> str:
    """Shortest float literal that round-trips (CSV uses '.' decimals)."""
    return repr(float(x))


def write_field_csv(u: Field, path) -> None:
    g = u.grid
    c = g.axis_centers()
    with open(path, "w", newline="\n") as fh:
        if g.d == 1:
            fh.write("x,value\n")
            for x, v in zip(c, u.values):
                fh.write(f"{fmt(x)},{fmt(v)}\n")
        else:
            fh.write("x,y,value\n")
            for i in range(g.n):
                for j in range(g.n):
                    fh.write(f"{fmt(c[i])},{fmt(c[j])},{fmt(u.values[i, j])}\n")


def read_field_csv(path, boundary: str = "no_flux") -> Field:
    data = np.genfromtxt(path, delimiter=",", names=True)
    cols = data.dtype.names
    if cols == ("x", "value"):
        x = np.asarray(data["x"], dtype=float)
        dx = x[1] - x[0]
        grid = GridSpec(1, -(x[0] - dx / 2.0), len(x), boundary)
        return Field(grid, np.asarray(data["value"], dtype=float))
    if cols == ("x", "y", "value"):
        x = np.unique(np.asarray(data["x"], dtype=float))
        dx = x[1] - x[0]
        n = len(x)
        grid = GridSpec(2, -(x[0] - dx / 2.0), n, boundary)
        return Field(grid, np.asarray(data["value"], dtype=float).reshape(n, n))
    raise ValueError(f"unrecognized field CSV header {cols}")


def write_field_binary(u: Field, path) -> None:
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<iidd", g.d, g.n, g.half_width, g.dx))
        fh.write(u.values.astype("<f8").tobytes())


def read_field_binary(path, boundary: str = "no_flux") -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
        if magic != _BINARY_MAGIC:
            raise ValueError("not an nfpe binary field file")
        d, n, half_width, dx = struct.unpack("<iidd", fh.read(24))
        grid = GridSpec(d, half_width, n, boundary)
        if abs(grid.dx - dx) > 1e-12 * max(dx, 1.0):
            raise ValueError("inconsistent dx in binary header")
        vals = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.shape)
    return Field(grid, vals.copy())
