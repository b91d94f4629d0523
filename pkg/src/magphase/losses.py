"""The Gaussian/von Mises loss family and the eight composite schemes.

Losses are written against autodiff tensors on the estimated side and
accept plain arrays (or tensors) for targets. Every term normalizes by
its input's frame count, so batched segment losses and full-utterance
losses are directly comparable. The derivative losses apply the wrapped
finite difference to both the true and the estimated phase and evaluate
the von Mises NLL over the reduced shapes; the concentration matrix is
cropped at the earlier (lower) index to match.

Scheme weights (w_pha, w_grd, w_ifr):

    M  = (0, 0, 0)            J4 = (1/2, 1/2, 0)
    J1 = (1, 0, 0)            J5 = (1/2, 0, 1/2)
    J2 = (0, 1, 0)            J6 = (0, 1/2, 1/2)
    J3 = (0, 0, 1)            J7 = (1/3, 1/3, 1/3)

The composite total is reg + mag + var plus the weighted phase terms;
for scheme M the phase components are still evaluated and reported but
carry no gradient into the total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidArgumentError, NumericsError, ShapeError
from .model import concentration

LN_TWO_PI = float(np.log(2.0 * np.pi))
SIGMA_MAG_FLOOR = 1e-6
LOG_GUARD = 1e-12

SCHEME_WEIGHTS = {
    "M": (0.0, 0.0, 0.0),
    "J1": (1.0, 0.0, 0.0),
    "J2": (0.0, 1.0, 0.0),
    "J3": (0.0, 0.0, 1.0),
    "J4": (0.5, 0.5, 0.0),
    "J5": (0.5, 0.0, 0.5),
    "J6": (0.0, 0.5, 0.5),
    "J7": (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
}


@dataclass(frozen=True)
class LossScheme:
    """One of the eight training objectives."""

    id: str
    w_pha: float
    w_grd: float
    w_ifr: float

    @classmethod
    def from_id(cls, scheme_id: str) -> "LossScheme":
        if scheme_id not in SCHEME_WEIGHTS:
            raise ConfigError(
                f"unknown scheme {scheme_id!r}; expected one of {sorted(SCHEME_WEIGHTS)}"
            )
        return cls(scheme_id, *SCHEME_WEIGHTS[scheme_id])

    @property
    def joint(self) -> bool:
        return self.id != "M"


@dataclass
class LossReport:
    """Per-batch scalar values of every component plus the weighted total."""

    reg: float
    mag: float
    var: float
    pha: float
    grd: float
    ifr: float
    total: float

    def to_dict(self):
        return {
            "reg": self.reg, "mag": self.mag, "var": self.var,
            "pha": self.pha, "grd": self.grd, "ifr": self.ifr,
            "total": self.total,
        }

    def to_json_line(self, **extra) -> str:
        record = dict(extra)
        record.update(self.to_dict())
        return json.dumps(record, sort_keys=True)


def _as_target(x, like):
    """Targets enter the graph as constants."""
    if isinstance(x, ad.Tensor):
        return ad.Tensor(x.data)
    return ad.Tensor(np.asarray(x, dtype=like.data.dtype))


def _frames(t, feature_axis=-2) -> int:
    """Number of frames: total size divided by the feature-axis length."""
    return int(t.size // t.shape[feature_axis])


def kl_regularizer(mu_q, sigma_q):
    """KL from N(mu, sigma^2 I) to the standard normal, averaged per frame.

    (1/2N) sum(mu^2 + sigma^2 - ln sigma^2 - 1); nonnegative, zero only
    at mu=0, sigma=1.
    """
    mu_q = ad.as_tensor(mu_q)
    sigma_q = ad.as_tensor(sigma_q)
    if np.any(sigma_q.data <= 0):
        raise NumericsError("kl_regularizer requires sigma_q > 0")
    s2 = ad.square(sigma_q)
    term = ad.sub(ad.add(ad.square(mu_q), s2), ad.log(ad.clamp_min(s2, LOG_GUARD)))
    n = _frames(mu_q)
    return ad.mul(ad.sub(ad.tensor_sum(term), float(mu_q.size)), 0.5 / n)


def magnitude_nll(a, a_hat, sigma_mag):
    """Gaussian NLL of the magnitudes, (1/2N) sum(ln 2 pi s^2 + (a-a_hat)^2/s^2).

    sigma_mag is floored at 1e-6 to keep the quotient finite.
    """
    a_hat = ad.as_tensor(a_hat)
    a = _as_target(a, a_hat)
    sigma_mag = ad.as_tensor(sigma_mag)
    if a.shape != a_hat.shape or a.shape != sigma_mag.shape:
        raise ShapeError("magnitude_nll requires equal shapes")
    s2 = ad.square(ad.clamp_min(sigma_mag, SIGMA_MAG_FLOOR))
    err = ad.square(ad.sub(a, a_hat))
    term = ad.add(ad.add(ad.log(s2), LN_TWO_PI), ad.div(err, s2))
    return ad.mul(ad.tensor_sum(term), 0.5 / _frames(a))


def variance_reg(sigma_mag):
    """Pull the magnitude variances down: (1/N) sum(sigma^2)."""
    sigma_mag = ad.as_tensor(sigma_mag)
    if np.any(sigma_mag.data < 0):
        raise NumericsError("variance_reg requires sigma_mag >= 0")
    return ad.mul(ad.tensor_sum(ad.square(sigma_mag)), 1.0 / _frames(sigma_mag))


def von_mises_nll(psi, psi_hat, kappa):
    """Von Mises NLL, (1/N) sum(ln 2 pi I0(kappa) - kappa cos(psi - psi_hat)).

    N is the frame (column) count of the input, so the same function
    serves the phase loss and the reduced-shape derivative losses.
    Invariant under adding multiples of 2 pi to either angle argument.
    """
    psi_hat = ad.as_tensor(psi_hat)
    psi = _as_target(psi, psi_hat)
    kappa = ad.as_tensor(kappa)
    if psi.shape != psi_hat.shape or psi.shape != kappa.shape:
        raise ShapeError("von_mises_nll requires equal shapes")
    if np.any(kappa.data < 0):
        raise NumericsError("von_mises_nll requires kappa >= 0")
    norm = ad.add(ad.log_bessel_i0(kappa), LN_TWO_PI)
    fit = ad.mul(kappa, ad.cos(ad.sub(psi, psi_hat)))
    n = int(psi.size // psi.shape[-2])
    return ad.mul(ad.tensor_sum(ad.sub(norm, fit)), 1.0 / n)


def _diff_freq(t):
    return ad.wrap_angle(ad.sub(t[..., :-1, :], t[..., 1:, :]))


def _diff_time(t):
    return ad.wrap_angle(ad.sub(t[..., 1:], t[..., :-1]))


def gd_loss(psi, psi_hat, kappa_grd):
    """Von Mises NLL between the group delays of true and estimated phase.

    Both sides pass through wrap(psi[f] - psi[f+1]); kappa is cropped to
    the lower frequency index, shape (F-1, N).
    """
    psi_hat = ad.as_tensor(psi_hat)
    psi = _as_target(psi, psi_hat)
    kappa_grd = ad.as_tensor(kappa_grd)
    if psi.shape[-2] < 2:
        raise InvalidArgumentError("gd_loss needs at least 2 frequency bins")
    return von_mises_nll(
        _diff_freq(psi), _diff_freq(psi_hat), kappa_grd[..., :-1, :]
    )


def if_loss(psi, psi_hat, kappa_ifr):
    """Von Mises NLL between the instantaneous frequencies of both phases.

    Both sides pass through wrap(psi[n+1] - psi[n]); kappa is cropped to
    the earlier frame index, shape (F, N-1).
    """
    psi_hat = ad.as_tensor(psi_hat)
    psi = _as_target(psi, psi_hat)
    kappa_ifr = ad.as_tensor(kappa_ifr)
    if psi.shape[-1] < 2:
        raise InvalidArgumentError("if_loss needs at least 2 frames")
    return von_mises_nll(
        _diff_time(psi), _diff_time(psi_hat), kappa_ifr[..., :-1]
    )


def composite(scheme: LossScheme, a, a_hat, sigma_mag, psi, psi_hat,
              mu_q, sigma_q):
    """All components plus the scheme-weighted total.

    Returns ``(total, report)`` where ``total`` is the differentiable
    scalar and ``report`` carries every component value. Zero-weighted
    phase terms are evaluated for the report but excluded from the
    total, so they contribute no gradient.
    """
    reg = kl_regularizer(mu_q, sigma_q)
    mag = magnitude_nll(a, a_hat, sigma_mag)
    var = variance_reg(sigma_mag)
    kappa = concentration(a_hat)
    pha = von_mises_nll(psi, psi_hat, kappa)
    grd = gd_loss(psi, psi_hat, kappa)
    ifr = if_loss(psi, psi_hat, kappa)

    total = ad.add(ad.add(reg, mag), var)
    for weight, term in ((scheme.w_pha, pha), (scheme.w_grd, grd), (scheme.w_ifr, ifr)):
        if weight != 0.0:
            total = ad.add(total, ad.mul(term, weight))

    report = LossReport(
        reg=reg.item(), mag=mag.item(), var=var.item(),
        pha=pha.item(), grd=grd.item(), ifr=ifr.item(),
        total=total.item(),
    )
    return total, report
