"""Fourier-optics simulation and multi-plane light converter design.

Fields are sampled on a uniform grid; free-space propagation uses the
angular spectrum method with the exact nonparaxial transfer function
exp(i*z*sqrt(k^2 - kx^2 - ky^2)), evanescent components suppressed.
Propagation zero-pads the field 2x by default to suppress periodic
wraparound; pad_factor=1 gives the strictly unitary periodic transform.

A converter is an ordered stack of phase masks separated by a uniform
free-space spacing.  Stacks are designed by wavefront matching: each
plane's phase is repeatedly set to conjugate the summed overlap between
the forward-propagated inputs and the back-propagated targets.

Array convention: amplitude[ix, iy] with x = (ix - nx//2) * pitch and
y = (iy - ny//2) * pitch, both in meters.
"""

from __future__ import annotations

import functools
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTransferError,
    GeometryError,
    InvalidConfigError,
    InvalidInputError,
    InvalidModeSetError,
    SamplingError,
)

TWO_PI = 2.0 * np.pi

MAGIC = b"MPLC"
FORMAT_STACK = 1
FORMAT_FIELD = 2
_HEADER = struct.Struct("<4sIIIIddd")  # magic, version, nx, ny, P, pitch, wl, spacing

ORTHOGONALITY_TOL = 1e-6


class EvanescentClippingWarning(UserWarning):
    """Emitted when suppressed evanescent components carried real power."""


@dataclass(frozen=True)
class GridSpec:
    """Sampling grid: pixel counts, pixel pitch and wavelength in meters."""

    nx: int
    ny: int
    pitch: float
    wavelength: float

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise InvalidInputError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if self.pitch <= 0.0 or self.wavelength <= 0.0:
            raise InvalidInputError("pitch and wavelength must be > 0")

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) - self.nx // 2) * self.pitch

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) - self.ny // 2) * self.pitch

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength


@dataclass(frozen=True)
class OpticalField:
    """Complex field sampled on a grid."""

    grid: GridSpec
    amplitude: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=np.complex128)
        if amp.shape != (self.grid.nx, self.grid.ny):
            raise GeometryError(
                f"amplitude shape {amp.shape} does not match grid "
                f"{(self.grid.nx, self.grid.ny)}"
            )
        if not np.isfinite(amp).all():
            raise InvalidInputError("field amplitude contains non-finite values")
        object.__setattr__(self, "amplitude", amp)

    @property
    def power(self) -> float:
        return float((np.abs(self.amplitude) ** 2).sum() * self.grid.pitch**2)

    def normalized(self) -> "OpticalField":
        p = self.power
        if p <= 0.0:
            raise InvalidInputError("cannot normalize a zero-power field")
        return OpticalField(self.grid, self.amplitude / math.sqrt(p))


def inner(bra: OpticalField, ket: OpticalField) -> complex:
    """<bra|ket> = sum conj(bra) * ket * pitch^2."""
    if bra.grid != ket.grid:
        raise GeometryError("fields live on different grids")
    return complex((bra.amplitude.conj() * ket.amplitude).sum() * bra.grid.pitch**2)


def superpose(fields, coefficients) -> OpticalField:
    """Linear combination sum_m c_m * field_m on a common grid."""
    fields = list(fields)
    coefficients = np.asarray(coefficients)
    if len(fields) != len(coefficients):
        raise InvalidInputError("need one coefficient per field")
    amp = np.zeros_like(fields[0].amplitude)
    for c, f in zip(coefficients, fields):
        if f.grid != fields[0].grid:
            raise GeometryError("fields live on different grids")
        amp = amp + c * f.amplitude
    return OpticalField(fields[0].grid, amp)


@dataclass(frozen=True)
class ApertureLayout:
    """Non-overlapping circular apertures on a square grid or a line.

    arrangement "grid" places count = side^2 apertures on a side-by-side
    square lattice; flat aperture index (row-1)*side + col matches the
    mode-grid convention used by the square-root MUB pair (rows step
    along y, columns along x).  arrangement "line" places them along x.
    """

    count: int
    radius: float
    spacing: float
    arrangement: str = "grid"

    def __post_init__(self):
        if self.count < 1:
            raise InvalidInputError(f"need at least one aperture, got {self.count}")
        if self.radius <= 0.0 or self.spacing <= 0.0:
            raise InvalidInputError("radius and spacing must be > 0")
        if self.spacing < 2.0 * self.radius:
            raise GeometryError(
                f"apertures overlap: spacing {self.spacing} < 2*radius {2 * self.radius}"
            )
        if self.arrangement not in ("grid", "line"):
            raise InvalidInputError(f"unknown arrangement '{self.arrangement}'")
        if self.arrangement == "grid" and math.isqrt(self.count) ** 2 != self.count:
            raise InvalidInputError(
                f"grid arrangement needs a square count, got {self.count}"
            )

    def centers(self) -> np.ndarray:
        """(count, 2) array of (x, y) aperture centers, flat-index order."""
        if self.arrangement == "line":
            offs = (np.arange(self.count) - (self.count - 1) / 2.0) * self.spacing
            return np.stack([offs, np.zeros(self.count)], axis=1)
        side = math.isqrt(self.count)
        rows, cols = np.divmod(np.arange(self.count), side)
        x = (cols - (side - 1) / 2.0) * self.spacing
        y = (rows - (side - 1) / 2.0) * self.spacing
        return np.stack([x, y], axis=1)


def make_aperture_modes(layout: ApertureLayout, grid: GridSpec) -> list[OpticalField]:
    """Unit-power uniform disk modes, one per aperture, in flat order.

    Disjoint supports make distinct modes exactly orthogonal.  Raises
    GeometryError unless every aperture fits the grid with a two-pixel
    margin.
    """
    xx = grid.x[:, None]
    yy = grid.y[None, :]
    margin = 2.0 * grid.pitch
    modes = []
    for cx, cy in layout.centers():
        if (
            cx - layout.radius < grid.x[0] + margin
            or cx + layout.radius > grid.x[-1] - margin
            or cy - layout.radius < grid.y[0] + margin
            or cy + layout.radius > grid.y[-1] - margin
        ):
            raise GeometryError(
                f"aperture at ({cx:.2e}, {cy:.2e}) m with radius {layout.radius:.2e} m "
                f"does not fit the {grid.nx}x{grid.ny} grid with a 2-pixel margin"
            )
        disk = ((xx - cx) ** 2 + (yy - cy) ** 2 <= layout.radius**2).astype(np.complex128)
        if not disk.any():
            raise GeometryError(
                f"aperture radius {layout.radius:.2e} m is below the grid pitch"
            )
        modes.append(OpticalField(grid, disk).normalized())
    return modes


@dataclass(frozen=True)
class PhaseMaskStack:
    """Ordered phase masks (radians, wrapped to [0, 2pi)) with uniform spacing."""

    grid: GridSpec
    masks: np.ndarray
    plane_spacing: float

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=float)
        if masks.ndim != 3 or masks.shape[0] < 1:
            raise InvalidInputError("masks must be a (P, nx, ny) array with P >= 1")
        if masks.shape[1:] != (self.grid.nx, self.grid.ny):
            raise GeometryError(
                f"mask shape {masks.shape[1:]} does not match grid "
                f"{(self.grid.nx, self.grid.ny)}"
            )
        object.__setattr__(self, "masks", np.mod(masks, TWO_PI))

    @property
    def planes(self) -> int:
        return int(self.masks.shape[0])


# ---------------------------------------------------------------------------
# Propagation.


@functools.lru_cache(maxsize=16)
def _transfer_function(
    nx: int, ny: int, pitch: float, wavelength: float, distance: float
) -> tuple[np.ndarray, np.ndarray]:
    """exp(i*z*kz) on the propagating band and the band's boolean mask."""
    k = TWO_PI / wavelength
    kx = TWO_PI * np.fft.fftfreq(nx, pitch)[:, None]
    ky = TWO_PI * np.fft.fftfreq(ny, pitch)[None, :]
    kz_sq = k**2 - kx**2 - ky**2
    propagating = kz_sq > 0.0
    kz = np.sqrt(np.where(propagating, kz_sq, 0.0))
    h = np.where(propagating, np.exp(1j * distance * kz), 0.0)
    h.setflags(write=False)
    propagating.setflags(write=False)
    return h, propagating


def max_propagation_distance(grid: GridSpec, pad_factor: int = 2) -> float:
    """Longest distance the padded grid propagates without transfer-function
    aliasing: N * pitch^2 * sqrt(1 - (wavelength/(2*pitch))^2) / wavelength
    per axis, limited by the smaller axis."""
    n = min(grid.nx, grid.ny) * pad_factor
    s = 1.0 - (grid.wavelength / (2.0 * grid.pitch)) ** 2
    if s <= 0.0:
        # The grid resolves the whole propagating band; the Nyquist-based
        # criterion does not constrain the distance.
        return math.inf
    return n * grid.pitch**2 * math.sqrt(s) / grid.wavelength


def _check_sampling(grid: GridSpec, distance: float, pad_factor: int) -> None:
    z_max = max_propagation_distance(grid, pad_factor)
    if abs(distance) > z_max:
        s = 1.0 - (grid.wavelength / (2.0 * grid.pitch)) ** 2
        n_req = abs(distance) * grid.wavelength / (grid.pitch**2 * math.sqrt(s))
        n_min = math.ceil(n_req / pad_factor)
        raise SamplingError(
            f"distance {distance:.4g} m exceeds the anti-aliasing bound "
            f"{z_max:.4g} m of this grid; increase the grid to at least "
            f"{n_min} pixels per axis (at pad factor {pad_factor}) or enlarge "
            "the pitch"
        )


def _propagate_array(
    amps: np.ndarray, grid: GridSpec, distance: float, pad_factor: int
) -> np.ndarray:
    """Angular-spectrum propagation of (..., nx, ny) amplitudes."""
    if pad_factor < 1:
        raise InvalidConfigError(f"pad_factor must be >= 1, got {pad_factor}")
    _check_sampling(grid, distance, pad_factor)
    nx, ny = grid.nx, grid.ny
    if pad_factor > 1:
        px, py = nx * pad_factor, ny * pad_factor
        ox, oy = (px - nx) // 2, (py - ny) // 2
        work = np.zeros(amps.shape[:-2] + (px, py), dtype=np.complex128)
        work[..., ox : ox + nx, oy : oy + ny] = amps
    else:
        px, py = nx, ny
        ox = oy = 0
        work = amps.astype(np.complex128, copy=True)
    h, propagating = _transfer_function(px, py, grid.pitch, grid.wavelength, distance)
    spectrum = np.fft.fft2(work, axes=(-2, -1))
    clipped = np.abs(spectrum[..., ~propagating]) ** 2
    if clipped.size:
        total = float((np.abs(spectrum) ** 2).sum())
        if total > 0.0 and float(clipped.sum()) / total > 1e-12:
            warnings.warn(
                f"evanescent components carried {clipped.sum() / total:.3e} of the "
                "spectral power and were suppressed",
                EvanescentClippingWarning,
                stacklevel=3,
            )
    out = np.fft.ifft2(spectrum * h, axes=(-2, -1))
    return out[..., ox : ox + nx, oy : oy + ny]


def propagate(field: OpticalField, distance: float, pad_factor: int = 2) -> OpticalField:
    """Free-space propagation by `distance` (negative reverses direction).

    pad_factor=2 (default) zero-pads the window to suppress periodic
    wraparound; pad_factor=1 applies the exact periodic transform, which
    is strictly unitary and satisfies the semigroup and inversion
    identities to machine precision.
    """
    return OpticalField(
        field.grid, _propagate_array(field.amplitude, field.grid, distance, pad_factor)
    )


def apply_mask(field: OpticalField, mask, plane: int | None = None) -> OpticalField:
    """Multiply by exp(i*phase); power is preserved exactly.

    `mask` is a phase array or a PhaseMaskStack, in which case `plane`
    selects the mask (1-based).
    """
    if isinstance(mask, PhaseMaskStack):
        if plane is None:
            raise InvalidInputError("selecting from a stack needs a plane index")
        if not 1 <= plane <= mask.planes:
            raise InvalidInputError(f"plane {plane} outside 1..{mask.planes}")
        phase = mask.masks[plane - 1]
    else:
        phase = np.asarray(mask, dtype=float)
    if phase.shape != field.amplitude.shape:
        raise GeometryError(
            f"mask shape {phase.shape} does not match field {field.amplitude.shape}"
        )
    return OpticalField(field.grid, field.amplitude * np.exp(1j * phase))


def forward_pass(
    stack: PhaseMaskStack, field: OpticalField, pad_factor: int = 2
) -> OpticalField:
    """Send a field through the converter to the detection plane.

    Applies mask p then propagates one plane spacing, for every plane,
    followed by one final spacing to the detection plane; an all-zero
    stack therefore reduces to free propagation over
    (planes + 1) * plane_spacing.
    """
    if stack.grid != field.grid:
        raise GeometryError("stack and field grids differ")
    amps = field.amplitude
    for p in range(stack.planes):
        amps = amps * np.exp(1j * stack.masks[p])
        amps = _propagate_array(amps, stack.grid, stack.plane_spacing, pad_factor)
    amps = _propagate_array(amps, stack.grid, stack.plane_spacing, pad_factor)
    return OpticalField(field.grid, amps)


def _mode_matrix(fields) -> np.ndarray:
    return np.stack([f.amplitude for f in fields])


def _check_orthonormal(fields, what: str) -> None:
    mat = _mode_matrix(fields)
    pitch2 = fields[0].grid.pitch ** 2
    flat = mat.reshape(len(fields), -1)
    gram = flat.conj() @ flat.T * pitch2
    if np.abs(gram - np.eye(len(fields))).max() > ORTHOGONALITY_TOL:
        raise InvalidModeSetError(
            f"{what} are not orthonormal "
            f"(max Gram deviation {np.abs(gram - np.eye(len(fields))).max():.3e})"
        )


def wavefront_match(
    inputs,
    targets,
    planes: int,
    plane_spacing: float,
    iterations: int = 30,
    pad_factor: int = 2,
) -> PhaseMaskStack:
    """Design converter masks mapping each input mode to its target mode.

    Each iteration sweeps the planes in order.  At plane p the forward
    fields (inputs propagated through planes 1..p-1 with the current
    masks) are compared against the backward fields (targets propagated
    back from the detection plane through planes P..p+1), and the mask is
    set to

        phase_p = -arg( sum_modes forward_p * conj(backward_p) )

    pointwise.  The procedure is deterministic: identical inputs produce
    bit-identical stacks.
    """
    inputs = list(inputs)
    targets = list(targets)
    if planes < 1 or iterations < 1:
        raise InvalidConfigError("planes and iterations must both be >= 1")
    if len(inputs) != len(targets) or not inputs:
        raise InvalidConfigError(
            f"need equally many inputs and targets, got {len(inputs)} and {len(targets)}"
        )
    grid = inputs[0].grid
    for f in inputs + targets:
        if f.grid != grid:
            raise GeometryError("all modes must share one grid")
    _check_orthonormal(inputs, "input modes")
    _check_orthonormal(targets, "target modes")

    fwd0 = _mode_matrix(inputs)  # (d, nx, ny), fields just before plane 1
    tgt = _mode_matrix(targets)  # fields at the detection plane
    masks = np.zeros((planes, grid.nx, grid.ny))

    def back(a):
        return _propagate_array(a, grid, -plane_spacing, pad_factor)

    def fwd(a):
        return _propagate_array(a, grid, plane_spacing, pad_factor)

    for _ in range(iterations):
        # Backward fields just after each mask, from the current stack.
        backward = [None] * planes
        b = back(back(tgt))
        backward[planes - 1] = b
        for p in range(planes - 2, -1, -1):
            b = back(b * np.exp(-1j * masks[p + 1]))
            backward[p] = b
        # Forward sweep, updating each plane before passing through it.
        f = fwd0
        for p in range(planes):
            overlap = (f * backward[p].conj()).sum(axis=0)
            masks[p] = np.mod(-np.angle(overlap), TWO_PI)
            f = fwd(f * np.exp(1j * masks[p]))
    return PhaseMaskStack(grid, masks, plane_spacing)


def matching_objective(
    stack: PhaseMaskStack, inputs, targets, pad_factor: int = 2
) -> float:
    """Mean squared overlap between converter outputs and their targets."""
    overlaps = [
        abs(inner(t, forward_pass(stack, f, pad_factor))) ** 2
        for f, t in zip(inputs, targets)
    ]
    return float(np.mean(overlaps))


def transfer_matrix(
    stack: PhaseMaskStack, inputs, output_modes, pad_factor: int = 2
) -> np.ndarray:
    """T[i, j] = <output_mode_i | converter(input_j)>.

    Output modes must be mutually orthonormal so column power measures
    captured power (<= 1 for any passive stack).
    """
    inputs = list(inputs)
    output_modes = list(output_modes)
    _check_orthonormal(output_modes, "output modes")
    pitch2 = stack.grid.pitch ** 2
    outs_flat = np.stack(
        [forward_pass(stack, f, pad_factor).amplitude.ravel() for f in inputs]
    )
    modes_flat = np.stack([m.amplitude.ravel() for m in output_modes])
    t = modes_flat.conj() @ outs_flat.T * pitch2
    col_power = (np.abs(t) ** 2).sum(axis=0)
    if col_power.max() > 1.0 + 1e-6:
        raise InvalidInputError(
            f"transfer column captured power {col_power.max():.9f} exceeds 1"
        )
    return t


@dataclass(frozen=True)
class SorterMetrics:
    """Quality summary of a mode-sorter transfer matrix."""

    transfer: np.ndarray
    fidelity: float
    mean_crosstalk: float
    insertion_loss_db: float

    def __post_init__(self):
        t = np.asarray(self.transfer, dtype=np.complex128)
        object.__setattr__(self, "transfer", t)
        col_power = (np.abs(t) ** 2).sum(axis=0)
        if col_power.size and col_power.max() > 1.0 + 1e-9:
            raise InvalidInputError(
                f"transfer column captured power {col_power.max():.9f} exceeds 1"
            )

    def to_dict(self) -> dict:
        return {
            "fidelity": self.fidelity,
            "mean_crosstalk": self.mean_crosstalk,
            "insertion_loss_db": self.insertion_loss_db,
            "transfer_re": self.transfer.real.tolist(),
            "transfer_im": self.transfer.imag.tolist(),
        }

    def save_json(self, path) -> None:
        import json

        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def sorter_metrics(transfer: np.ndarray, intended: np.ndarray | None = None) -> SorterMetrics:
    """Fidelity, crosstalk and insertion loss of a transfer matrix.

    fidelity = |trace(U^dagger T)|^2 / (d * total captured power) against
    the intended unitary U (identity by default); crosstalk averages the
    off-diagonal share of each column's captured power after composing
    with U^dagger; insertion loss is -10*log10(mean column captured power).
    """
    t = np.asarray(transfer, dtype=np.complex128)
    d = t.shape[0]
    if t.shape != (d, d):
        raise InvalidInputError(f"transfer matrix must be square, got {t.shape}")
    u = np.eye(d, dtype=np.complex128) if intended is None else np.asarray(intended)
    if u.shape != (d, d):
        raise InvalidInputError("intended unitary shape does not match the transfer")
    col_power = (np.abs(t) ** 2).sum(axis=0)
    captured = float(col_power.sum())
    if captured <= 0.0:
        raise DegenerateTransferError("transfer matrix captures no power")
    fidelity = float(np.abs(np.trace(u.conj().T @ t)) ** 2 / (d * captured))
    m = u.conj().T @ t
    live = col_power > 0.0
    diag = np.abs(np.diag(m)) ** 2
    crosstalk = float(((col_power[live] - diag[live]) / col_power[live]).mean())
    loss_db = float(-10.0 * math.log10(col_power.mean()))
    return SorterMetrics(t, fidelity, crosstalk, max(loss_db, 0.0))


# ---------------------------------------------------------------------------
# Binary container (little-endian): header then float64 payload.
#   stack: P planes of nx*ny phases, row-major
#   field: nx*ny samples, re/im interleaved


def save_stack(stack: PhaseMaskStack, path) -> None:
    g = stack.grid
    header = _HEADER.pack(
        MAGIC, FORMAT_STACK, g.nx, g.ny, stack.planes, g.pitch, g.wavelength,
        stack.plane_spacing,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(stack.masks, dtype="<f8").tobytes())


def save_field(field: OpticalField, path) -> None:
    g = field.grid
    header = _HEADER.pack(MAGIC, FORMAT_FIELD, g.nx, g.ny, 1, g.pitch, g.wavelength, 0.0)
    interleaved = np.empty((g.nx, g.ny, 2))
    interleaved[..., 0] = field.amplitude.real
    interleaved[..., 1] = field.amplitude.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(interleaved, dtype="<f8").tobytes())


def _read_header(fh, path):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise InvalidInputError(f"{path}: truncated header")
    magic, version, nx, ny, planes, pitch, wavelength, spacing = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    return version, nx, ny, planes, pitch, wavelength, spacing


def load_stack(path) -> PhaseMaskStack:
    with open(path, "rb") as fh:
        version, nx, ny, planes, pitch, wavelength, spacing = _read_header(fh, path)
        if version != FORMAT_STACK:
            raise InvalidInputError(f"{path}: not a phase-mask container")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != planes * nx * ny:
        raise InvalidInputError(f"{path}: payload size mismatch")
    grid = GridSpec(nx, ny, pitch, wavelength)
    return PhaseMaskStack(grid, data.reshape(planes, nx, ny).copy(), spacing)


def load_field(path) -> OpticalField:
    with open(path, "rb") as fh:
        version, nx, ny, _, pitch, wavelength, _ = _read_header(fh, path)
        if version != FORMAT_FIELD:
            raise InvalidInputError(f"{path}: not a field container")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 2 * nx * ny:
        raise InvalidInputError(f"{path}: payload size mismatch")
    pairs = data.reshape(nx, ny, 2)
    grid = GridSpec(nx, ny, pitch, wavelength)
    return OpticalField(grid, pairs[..., 0] + 1j * pairs[..., 1])


def save_mask_pgm(stack: PhaseMaskStack, plane: int, path) -> None:
    """Dump one mask as a 16-bit PGM, phase mapped linearly 0..2pi -> 0..65535."""
    if not 1 <= plane <= stack.planes:
        raise InvalidInputError(f"plane {plane} outside 1..{stack.planes}")
    mask = stack.masks[plane - 1]
    levels = np.round(mask / TWO_PI * 65535.0).astype(">u2")
    # PGM raster is row-major with width first; our axis 0 is x.
    with open(path, "wb") as fh:
        fh.write(f"P5\n{stack.grid.nx} {stack.grid.ny}\n65535\n".encode())
        fh.write(np.ascontiguousarray(levels.T).tobytes())
