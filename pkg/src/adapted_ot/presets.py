"""Named coefficient pairs used by the experiment drivers and the self-test,
so the reference experiments are one flag away on the command line."""

from __future__ import annotations

from .model import affine, constant, ou

# name -> (drift_x, vol_x, drift_y, vol_y)
PRESETS = {
    # constant drift gap, common unit volatility: sync cost 1/3 at p=2
    "drift-gap": (constant(1.0), constant(1.0, role="diffusion"),
                  constant(0.0), constant(1.0, role="diffusion")),
    # driftless, volatility 1 vs 0.5: sync cost 0.125 at p=2
    "vol-gap": (constant(0.0), constant(1.0, role="diffusion"),
                constant(0.0), constant(0.5, role="diffusion")),
    # mean reversion with a volatility gap: sync cost 0.283834 at p=2
    "ou-vol": (ou(1.0), constant(1.0, role="diffusion"),
               ou(1.0), constant(2.0, role="diffusion")),
    # mean-reverting versus driftless diffusion
    "ou-vs-flat": (ou(1.0), constant(1.0, role="diffusion"),
                   constant(0.0), constant(1.0, role="diffusion")),
    # gentle affine drift against a constant pair
    "affine-mix": (affine(0.5, -0.5), constant(1.0, role="diffusion"),
                   constant(0.0), constant(0.5, role="diffusion")),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        from .model import ConfigError
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
