"""Periodic grids, fields, and spectral calculus.

Uniform tensor grids on periodic boxes in one and two dimensions. Spectra use
numpy's real-FFT layout (last axis halved) and are normalized by the total
point count, so the ``[0, ..., 0]`` coefficient is the mean of the field and
Parseval's identity reads::

    ∫ f g dx = |Ω| Σ_k w_k Re(f̂_k conj(ĝ_k))

with the multiplicity ``w_k ∈ {1, 2}`` accounting for the conjugate modes the
halved layout drops. First-derivative multiplier tables zero the Nyquist mode
on every axis; the reference Laplacian is assembled from the same tables so
``div(grad f)`` equals the diagonal Laplacian to round-off. Products are
dealiased by a sharp cutoff at ``|m_i| <= floor(N_i / 3)`` per axis.
"""
from __future__ import annotations

import dataclasses
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, ValidationError

__all__ = [
    "PeriodicGrid",
    "ScalarField",
    "VectorField",
    "gradient",
    "divergence",
    "curl",
    "perp",
    "dealias",
    "multiply_dealiased",
]


@dataclasses.dataclass(frozen=True, eq=False)
class PeriodicGrid:
    """Uniform periodic grid with cached spectral tables.

    Parameters
    ----------
    shape
        Points per axis, ``(N,)`` or ``(N1, N2)``. Each entry must be even
        and at least 8 so the Nyquist/dealiasing conventions are meaningful.
    lengths
        Box edge lengths, positive finite floats, same arity as ``shape``.
    """

    shape: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self) -> None:
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(ell) for ell in self.lengths)
        if len(shape) not in (1, 2):
            raise ValidationError(f"grid dimension must be 1 or 2, got {len(shape)}")
        if len(lengths) != len(shape):
            raise ValidationError(
                f"lengths arity {len(lengths)} does not match shape arity {len(shape)}"
            )
        for n in shape:
            if n < 8 or n % 2 != 0:
                raise ValidationError(f"points per axis must be even and >= 8, got {n}")
        for ell in lengths:
            if not np.isfinite(ell) or ell <= 0.0:
                raise ValidationError(f"box lengths must be positive finite, got {ell}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    # ------------------------------------------------------------------ geometry

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        return tuple(ell / n for ell, n in zip(self.lengths, self.shape))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def axis_coords(self) -> tuple[np.ndarray, ...]:
        """1D coordinate arrays per axis, ``x_i[j] = j * dx_i``."""
        out = []
        for n, dx in zip(self.shape, self.spacings):
            x = np.arange(n, dtype=np.float64) * dx
            x.flags.writeable = False
            out.append(x)
        return tuple(out)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Dense coordinate arrays of the full grid shape."""
        mesh = np.meshgrid(*self.axis_coords, indexing="ij")
        for arr in mesh:
            arr.flags.writeable = False
        return tuple(mesh)

    def compatible(self, other: "PeriodicGrid") -> bool:
        """Same shape and box lengths (up to float equality)."""
        return self.shape == other.shape and self.lengths == other.lengths

    # ------------------------------------------------------------------ spectral tables

    @cached_property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.shape[-1] // 2 + 1,)

    def _axis_view(self, arr: np.ndarray, axis: int) -> np.ndarray:
        """Reshape a per-axis 1D table so it broadcasts over the spectrum."""
        view = [1] * self.dim
        view[axis] = arr.shape[0]
        out = arr.reshape(view)
        out.flags.writeable = False
        return out

    @cached_property
    def mode_numbers(self) -> tuple[np.ndarray, ...]:
        """Integer mode numbers per axis, broadcastable over the spectrum.

        Non-final axes run over ``0, 1, ..., N/2, -N/2+1, ..., -1``; the
        final (halved) axis runs over ``0, ..., N/2``.
        """
        out = []
        for axis, n in enumerate(self.shape):
            if axis == self.dim - 1:
                m = np.arange(n // 2 + 1, dtype=np.int64)
            else:
                m = np.rint(np.fft.fftfreq(n) * n).astype(np.int64)
            out.append(self._axis_view(m, axis))
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Radian wavenumbers ``k_i = 2π m_i / L_i`` per axis (Nyquist kept)."""
        out = []
        for axis, (m, ell) in enumerate(zip(self.mode_numbers, self.lengths)):
            k = (2.0 * np.pi / ell) * m.astype(np.float64)
            k.flags.writeable = False
            out.append(k)
        return tuple(out)

    @cached_property
    def deriv_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavenumber tables for derivatives: Nyquist mode zeroed per axis."""
        out = []
        for axis, (m, k, n) in enumerate(
            zip(self.mode_numbers, self.wavenumbers, self.shape)
        ):
            kd = np.where(np.abs(m) == n // 2, 0.0, k)
            kd.flags.writeable = False
            out.append(kd)
        return tuple(out)

    @cached_property
    def laplacian_multiplier(self) -> np.ndarray:
        """Diagonal symbol of div∘grad, ``-Σ_i k_i²`` with zeroed Nyquist."""
        out = -sum(kd * kd for kd in self.deriv_wavenumbers)
        out = np.broadcast_to(out, self.spectral_shape).copy()
        out.flags.writeable = False
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean keep-mask, true where ``|m_i| <= floor(N_i/3)`` on every axis."""
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m, n in zip(self.mode_numbers, self.shape):
            mask &= np.abs(m) <= n // 3
        mask.flags.writeable = False
        return mask

    @cached_property
    def mode_multiplicity(self) -> np.ndarray:
        """Parseval weights on the halved layout: 1 for self-conjugate final-axis
        modes (0 and Nyquist), 2 otherwise."""
        m_last = self.mode_numbers[-1]
        n_last = self.shape[-1]
        w = np.where((m_last == 0) | (m_last == n_last // 2), 1.0, 2.0)
        w = np.broadcast_to(w, self.spectral_shape).copy()
        w.flags.writeable = False
        return w

    # ------------------------------------------------------------------ transforms

    @cached_property
    def _axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    def fft(self, f: np.ndarray) -> np.ndarray:
        """Normalized spectrum of a scalar array; ``fft(f)[0,...,0]`` is the mean."""
        return np.fft.rfftn(f, axes=self._axes) / self.size

    def ifft(self, spec: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`fft`, returning a real array of the grid shape."""
        return np.fft.irfftn(spec * self.size, s=self.shape, axes=self._axes)

    def _spectral_axes(self, f: np.ndarray) -> tuple[int, ...]:
        return tuple(range(f.ndim - self.dim, f.ndim))

    # ------------------------------------------------------------------ calculus

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Gradient of a scalar array, stacked as ``(dim, *shape)``."""
        spec = np.fft.rfftn(f, axes=self._axes)
        out = np.empty((self.dim,) + self.shape, dtype=np.float64)
        for axis, kd in enumerate(self.deriv_wavenumbers):
            out[axis] = np.fft.irfftn(1j * kd * spec, s=self.shape, axes=self._axes)
        return out

    def divergence(self, u: np.ndarray) -> np.ndarray:
        """Divergence of a stacked vector array ``(dim, *shape)``."""
        spec = 0.0
        for axis, kd in enumerate(self.deriv_wavenumbers):
            spec = spec + 1j * kd * np.fft.rfftn(u[axis], axes=self._axes)
        return np.fft.irfftn(spec, s=self.shape, axes=self._axes)

    def curl(self, u: np.ndarray) -> np.ndarray:
        """Scalar curl ``∂x u_y - ∂y u_x`` in 2D; identically zero in 1D."""
        if self.dim == 1:
            return np.zeros(self.shape, dtype=np.float64)
        kx, ky = self.deriv_wavenumbers
        spec = 1j * kx * np.fft.rfftn(u[1], axes=self._axes) - 1j * ky * np.fft.rfftn(
            u[0], axes=self._axes
        )
        return np.fft.irfftn(spec, s=self.shape, axes=self._axes)

    def perp(self, u: np.ndarray) -> np.ndarray:
        """Counterclockwise rotation ``(u_x, u_y) -> (-u_y, u_x)``. 2D only."""
        if self.dim != 2:
            raise ValidationError("perp is only defined on 2D grids")
        return np.stack((-u[1], u[0]))

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Project out modes beyond the 1/3 cutoff (scalars or stacked vectors)."""
        axes = self._spectral_axes(f)
        spec = np.fft.rfftn(f, axes=axes)
        spec *= self.dealias_mask
        return np.fft.irfftn(spec, s=self.shape, axes=axes)

    def multiply_dealiased(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Pointwise product followed by the dealiasing projection."""
        return self.dealias(f * g)

    # ------------------------------------------------------------------ quadrature

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoidal (here: exact rectangle) quadrature of a scalar array."""
        return float(f.sum() * self.cell_volume)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """L² inner product; for stacked vectors this is ``∫ u · v``."""
        return float((f * g).sum() * self.cell_volume)

    def norm_l2(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(f, f), 0.0)))


def _as_readonly(data: np.ndarray, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != shape:
        raise ValidationError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _check_same_grid(a: "ScalarField | VectorField", b: "ScalarField | VectorField") -> None:
    if a.grid is not b.grid and not a.grid.compatible(b.grid):
        raise GridMismatchError("fields live on different grids")


@dataclasses.dataclass(frozen=True, eq=False)
class ScalarField:
    """Immutable scalar field sampled on a :class:`PeriodicGrid`."""

    grid: PeriodicGrid
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_readonly(self.data, self.grid.shape, "scalar field"))

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.coords), dtype=np.float64))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.data + other.data)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.data - other.data)

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.data)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, self.data * other.data)
        return ScalarField(self.grid, self.data * float(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ScalarField":
        return ScalarField(self.grid, self.data / float(scalar))

    def mean(self) -> float:
        return float(self.data.mean())

    def norm_l2(self) -> float:
        return self.grid.norm_l2(self.data)


@dataclasses.dataclass(frozen=True, eq=False)
class VectorField:
    """Immutable velocity-like field, components stacked as ``(dim, *shape)``."""

    grid: PeriodicGrid
    data: np.ndarray

    def __post_init__(self) -> None:
        shape = (self.grid.dim,) + self.grid.shape
        object.__setattr__(self, "data", _as_readonly(self.data, shape, "vector field"))

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.data[axis])

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.data + other.data)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.data - other.data)

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.data)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return VectorField(self.grid, self.data * other.data)
        return VectorField(self.grid, self.data * float(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "VectorField":
        return VectorField(self.grid, self.data / float(scalar))

    def dot(self, other: "VectorField") -> ScalarField:
        _check_same_grid(self, other)
        return ScalarField(self.grid, np.einsum("i...,i...->...", self.data, other.data))

    def norm_l2(self) -> float:
        return self.grid.norm_l2(self.data)


# ---------------------------------------------------------------------- field ops


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, f.grid.gradient(f.data))


def divergence(u: VectorField) -> ScalarField:
    return ScalarField(u.grid, u.grid.divergence(u.data))


def curl(u: VectorField) -> ScalarField:
    return ScalarField(u.grid, u.grid.curl(u.data))


def perp(u: VectorField) -> VectorField:
    return VectorField(u.grid, u.grid.perp(u.data))


def dealias(f):
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, f.grid.dealias(f.data))
    if isinstance(f, VectorField):
        return VectorField(f.grid, f.grid.dealias(f.data))
    raise ValidationError(f"dealias expects a field, got {type(f).__name__}")


def multiply_dealiased(f: ScalarField, g: ScalarField) -> ScalarField:
    _check_same_grid(f, g)
    return ScalarField(f.grid, f.grid.multiply_dealiased(f.data, g.data))
