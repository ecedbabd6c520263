"""Finite-length dipole fields, rigid rotations, array superposition and
per-chain coupling coefficients.

The single-antenna model is a zero-radius finite-length dipole with a
sinusoidal current distribution, evaluated in closed form in the local
cylindrical frame of the dipole.  Elements are placed in a global frame by a
position and a proper rotation mapping the local z-axis (the dipole axis)
onto the element orientation.  Fields of an array are pure superpositions of
element fields (no mutual coupling), and the coupling of the whole array to
a polarized observation point is the projection of the superposed field onto
the point's orientation vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import C0, ETA0

RHO_MIN = 1e-6          # m; guard radius around the dipole axis
FRAME_CYL = "cylindrical-local"
FRAME_CART = "cartesian-global"


class AxisSingularityError(ValueError):
    """Observation point on (or numerically at) a dipole axis."""


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("point coordinates must be finite")
    return a


@dataclass(frozen=True)
class FieldVector:
    """Complex electric field 3-vector (V/m) with an explicit frame tag.

    Addition is only defined between cartesian-global vectors; mixing frames
    is a bug and raises.
    """

    components: np.ndarray
    frame: str = FRAME_CART

    def __post_init__(self):
        c = np.asarray(self.components, dtype=complex).reshape(3)
        c.flags.writeable = False
        object.__setattr__(self, "components", c)
        if self.frame not in (FRAME_CYL, FRAME_CART):
            raise ValueError(f"unknown frame tag {self.frame!r}")

    def __add__(self, other: "FieldVector") -> "FieldVector":
        if self.frame != other.frame:
            raise ValueError("cannot add field vectors in different frames")
        if self.frame != FRAME_CART:
            raise ValueError("field addition is only defined in the global cartesian frame")
        return FieldVector(self.components + other.components, self.frame)

    def dot(self, direction) -> complex:
        if self.frame != FRAME_CART:
            raise ValueError("projection requires a cartesian-global field")
        return complex(np.dot(self.components, np.asarray(direction, dtype=float)))


def validate_rotation(rot: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    rot = np.asarray(rot, dtype=float).reshape(3, 3)
    if not np.allclose(rot.T @ rot, np.eye(3), atol=tol):
        raise ValueError("rotation must be orthonormal (R^T R = I)")
    if np.linalg.det(rot) < 0:
        raise ValueError("rotation must be proper (det = +1)")
    return rot


def rotation_for_axis(axis: str) -> np.ndarray:
    """Proper rotation mapping the local z-axis onto a global coordinate axis."""
    if axis == "z":
        return np.eye(3)
    if axis == "y":
        # rotate about x by -90 deg: z -> y
        return np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    if axis == "x":
        # rotate about y by +90 deg: z -> x
        return np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    raise ValueError(f"axis must be 'x', 'y' or 'z', got {axis!r}")


def dipole_field_cyl(l: float, current: complex, f: float, obs) -> FieldVector:
    """Electric field of a z-oriented finite dipole at one local-frame point.

    Closed form for a sinusoidal current distribution, returned as
    (E_rho, E_phi, E_z) in the dipole's cylindrical frame.  E_phi is
    identically zero.

    Parameters
    ----------
    l : dipole length, m
    current : complex feed current amplitude, A
    f : frequency, Hz
    obs : (x, y, z) observation point in the dipole's local cartesian frame, m
    """
    if l <= 0:
        raise ValueError(f"dipole length must be positive, got {l}")
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    x, y, z = _as_point(obs)
    rho = np.hypot(x, y)
    if rho <= RHO_MIN:
        raise AxisSingularityError(
            f"observation point within {RHO_MIN} m of the dipole axis (rho={rho:.3e})"
        )
    e_rho, e_z = _dipole_components(l, current, f, rho, z)
    return FieldVector(np.array([e_rho, 0.0, e_z], dtype=complex), FRAME_CYL)


def _dipole_components(l, current, f, rho, z):
    """Vectorizable core of the closed-form dipole field (rho, z broadcast)."""
    k = 2.0 * np.pi * f / C0
    dz_m = z - 0.5 * l
    dz_p = z + 0.5 * l
    r0 = np.sqrt(rho * rho + z * z)
    r1 = np.sqrt(rho * rho + dz_m * dz_m)
    r2 = np.sqrt(rho * rho + dz_p * dz_p)
    g0 = np.exp(-1j * k * r0) / r0
    g1 = np.exp(-1j * k * r1) / r1
    g2 = np.exp(-1j * k * r2) / r2
    cap = 2.0 * np.cos(0.5 * k * l) * g0
    scale = 1j * ETA0 * current * l / (4.0 * np.pi)
    e_rho = scale / rho * (dz_m * g1 + dz_p * g2 - z * cap)
    e_z = -scale * (g1 + g2 - cap)
    return e_rho, e_z


def cyl_to_cart(field_cyl: FieldVector, local_point) -> np.ndarray:
    """Convert a local cylindrical field vector to local cartesian components."""
    if field_cyl.frame != FRAME_CYL:
        raise ValueError("expected a cylindrical-local field vector")
    x, y, _ = _as_point(local_point)
    phi = np.arctan2(y, x)
    e_rho, e_phi, e_z = field_cyl.components
    return np.array(
        [
            e_rho * np.cos(phi) - e_phi * np.sin(phi),
            e_rho * np.sin(phi) + e_phi * np.cos(phi),
            e_z,
        ],
        dtype=complex,
    )


@dataclass(frozen=True)
class DipoleElement:
    """One dipole: position, orientation rotation, length and feed weighting.

    `rotation` maps the local z-axis (the dipole axis) into the global frame.
    `amplitude_scale` is the per-element share of the chain current (power
    split within a unit cell), `phase_shift` an electrical tilt phase.
    """

    position: np.ndarray
    rotation: np.ndarray
    length: float
    chain_id: int
    amplitude_scale: float = 1.0
    phase_shift: float = 0.0

    def __post_init__(self):
        pos = _as_point(self.position)
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        rot = validate_rotation(self.rotation)
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        if self.length <= 0:
            raise ValueError("dipole length must be positive")
        if not (0.0 < self.amplitude_scale <= 1.0):
            raise ValueError("amplitude_scale must lie in (0, 1]")
        if self.chain_id < 0:
            raise ValueError("chain_id must be non-negative")

    @property
    def axis(self) -> np.ndarray:
        """Dipole axis direction in the global frame."""
        return self.rotation[:, 2]

    @property
    def feed_weight(self) -> complex:
        return self.amplitude_scale * np.exp(1j * self.phase_shift)


@dataclass(frozen=True)
class ArrayLayout:
    """A set of dipole elements grouped into transceiver chains.

    All chains share the same impedance and per-chain radiating power; the
    per-element amplitude scales of each chain must sum (in power) to one.
    """

    elements: tuple
    n_chains: int
    impedance_ohm: float = 50.0
    chain_power_w: float = 10.0 ** 0.7   # 37 dBm

    def __post_init__(self):
        elems = tuple(self.elements)
        object.__setattr__(self, "elements", elems)
        if self.impedance_ohm <= 0:
            raise ValueError("impedance must be positive")
        if self.chain_power_w < 0:
            raise ValueError("chain power must be non-negative")
        if self.n_chains <= 0:
            raise ValueError("n_chains must be positive")
        split = np.zeros(self.n_chains)
        for e in elems:
            if not isinstance(e, DipoleElement):
                raise TypeError("elements must be DipoleElement instances")
            if e.chain_id >= self.n_chains:
                raise ValueError(f"element chain_id {e.chain_id} out of range")
            split[e.chain_id] += e.amplitude_scale ** 2
        if np.any(split == 0):
            raise ValueError("every chain must drive at least one element")
        if not np.allclose(split, 1.0, atol=1e-9):
            raise ValueError("per-chain amplitude_scale^2 must sum to 1 (equal power split)")

    def chain_elements(self, chain_id: int):
        return [e for e in self.elements if e.chain_id == chain_id]


def feed_current(p_watts: float, z_ohm: float) -> float:
    """Average feed current from radiating power and impedance (Ohm's law)."""
    if z_ohm <= 0:
        raise ValueError(f"impedance must be positive, got {z_ohm}")
    if p_watts < 0:
        raise ValueError(f"power must be non-negative, got {p_watts}")
    return float(np.sqrt(p_watts / z_ohm))


def element_field(elem: DipoleElement, current: complex, f: float, obs) -> FieldVector:
    """Field of one element at a global-frame point, in the global frame.

    The observation point is mapped into the element's local frame with the
    transposed rotation, the closed-form cylindrical field is evaluated
    there, converted to cartesian components at the local point, and rotated
    back into the global frame.  The element's amplitude split and phase
    shift multiply the chain current.
    """
    obs = _as_point(obs)
    delta = obs - elem.position
    local = elem.rotation.T @ delta
    f_cyl = dipole_field_cyl(elem.length, current * elem.feed_weight, f, local)
    return FieldVector(elem.rotation @ cyl_to_cart(f_cyl, local), FRAME_CART)


def _element_field_vs_freq(elem: DipoleElement, freqs: np.ndarray, obs) -> np.ndarray:
    """Per-unit-chain-current global-frame field of one element, (3, nf)."""
    delta = _as_point(obs) - elem.position
    lx, ly, lz = elem.rotation.T @ delta
    rho = np.hypot(lx, ly)
    if rho <= RHO_MIN:
        raise AxisSingularityError(
            f"source point lies on the axis of element at {elem.position}"
        )
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be positive")
    e_rho, e_z = _dipole_components(elem.length, elem.feed_weight, freqs, rho, lz)
    phi = np.arctan2(ly, lx)
    local = np.vstack([e_rho * np.cos(phi), e_rho * np.sin(phi), e_z])
    return elem.rotation @ local


def array_field(layout: ArrayLayout, chain_currents: Sequence[complex], f: float, obs) -> FieldVector:
    """Superposed field of the whole array for given per-chain currents."""
    currents = np.asarray(chain_currents, dtype=complex).reshape(-1)
    if currents.size != layout.n_chains:
        raise ValueError(
            f"expected {layout.n_chains} chain currents, got {currents.size}"
        )
    total = np.zeros(3, dtype=complex)
    for idx, elem in enumerate(layout.elements):
        try:
            fv = element_field(elem, currents[elem.chain_id], f, obs)
        except AxisSingularityError as err:
            raise AxisSingularityError(f"element {idx}: {err}") from err
        total += fv.components
    return FieldVector(total, FRAME_CART)


def _check_orientation(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    if abs(np.linalg.norm(p) - 1.0) > 1e-9:
        raise ValueError(f"orientation must be a unit vector, |p|={np.linalg.norm(p):.12f}")
    return p


def coupling_matrix(layout: ArrayLayout, source_pos, orientation, freqs) -> np.ndarray:
    """Per-chain complex coupling to a polarized point, per frequency.

    h[n, j] is the projection onto `orientation` of the field radiated by
    chain n's elements at unit chain current, evaluated at freqs[j] and
    scaled by the chain feed current.  The same kernel serves the forward
    (TX -> source) and backward (source -> RX) links; proportionality
    constants are unity, absolute levels being fixed later relative to the
    noise floor.
    """
    p = _check_orientation(orientation)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    obs = _as_point(source_pos)
    i_feed = feed_current(layout.chain_power_w, layout.impedance_ohm)
    h = np.zeros((layout.n_chains, freqs.size), dtype=complex)
    for idx, elem in enumerate(layout.elements):
        try:
            e = _element_field_vs_freq(elem, freqs, obs)
        except AxisSingularityError as err:
            raise AxisSingularityError(f"element {idx}: {err}") from err
        h[elem.chain_id] += p @ e
    return h * i_feed


def coupling_vector(layout: ArrayLayout, source_pos, orientation, f: float) -> np.ndarray:
    """Per-chain coupling coefficients at a single frequency, shape (n_chains,)."""
    return coupling_matrix(layout, source_pos, orientation, [float(f)])[:, 0]


def element_coupling_matrix(layout: ArrayLayout, source_pos, orientation, freqs) -> np.ndarray:
    """Like coupling_matrix but per element, shape (n_elements, nf).

    Used for per-antenna power maps; chain grouping is deliberately not
    applied.
    """
    p = _check_orientation(orientation)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    obs = _as_point(source_pos)
    i_feed = feed_current(layout.chain_power_w, layout.impedance_ohm)
    h = np.zeros((len(layout.elements), freqs.size), dtype=complex)
    for idx, elem in enumerate(layout.elements):
        h[idx] = p @ _element_field_vs_freq(elem, freqs, obs)
    return h * i_feed


# ---------------------------------------------------------------------------
# layout builders


def wavelength(f: float) -> float:
    return C0 / f


def paper_16t16r_layout(
    f_design: float = 1_842.75e6,
    impedance_ohm: float = 50.0,
    chain_power_w: float = 10.0 ** 0.7,
) -> ArrayLayout:
    """16-chain dual-polarized URA: 32 crossed-dipole positions on a 4x8 grid.

    Half-wave dipoles on a half-wavelength grid in the z=0 plane (boresight
    +z).  Each chain drives a column of four same-polarization dipoles (one
    unit cell, equal power split); even chains are vertical (y-axis), odd
    chains horizontal (x-axis).
    """
    lam = wavelength(f_design)
    d = 0.5 * lam
    length = 0.5 * lam
    rot_v = rotation_for_axis("y")
    rot_h = rotation_for_axis("x")
    elements = []
    n_cols, n_rows = 4, 8
    for chain in range(16):
        group = chain // 2
        col = group % n_cols
        row_block = group // n_cols          # 0: rows 0..3, 1: rows 4..7
        vertical = chain % 2 == 0
        for i in range(4):
            row = 4 * row_block + i
            pos = ((col - (n_cols - 1) / 2) * d, (row - (n_rows - 1) / 2) * d, 0.0)
            elements.append(
                DipoleElement(
                    position=np.array(pos),
                    rotation=rot_v if vertical else rot_h,
                    length=length,
                    chain_id=chain,
                    amplitude_scale=0.5,
                )
            )
    return ArrayLayout(tuple(elements), 16, impedance_ohm, chain_power_w)


def small_2t2r_layout(
    f_design: float = 1_842.75e6,
    impedance_ohm: float = 50.0,
    chain_power_w: float = 10.0 ** 0.7,
) -> ArrayLayout:
    """Reduced desk-scale array: one column of four crossed-dipole positions.

    Chain 0 drives the four vertical dipoles, chain 1 the four horizontal
    ones.
    """
    lam = wavelength(f_design)
    d = 0.5 * lam
    length = 0.5 * lam
    rot_v = rotation_for_axis("y")
    rot_h = rotation_for_axis("x")
    elements = []
    for row in range(4):
        pos = np.array([0.0, (row - 1.5) * d, 0.0])
        elements.append(DipoleElement(pos, rot_v, length, 0, amplitude_scale=0.5))
        elements.append(DipoleElement(pos, rot_h, length, 1, amplitude_scale=0.5))
    return ArrayLayout(tuple(elements), 2, impedance_ohm, chain_power_w)
