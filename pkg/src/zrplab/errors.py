"""Exception types shared across the package."""


class ZrplabError(Exception):
    """Base class for all errors raised by zrplab."""


class DegenerateRateError(ZrplabError):
    """Rate function violates g(0)=0, g(k)>0 for k>=1, or is empty/negative."""


class SeriesDivergenceError(ZrplabError):
    """Fugacity series did not converge within the hard term cap."""


class RateTableExhaustedError(SeriesDivergenceError):
    """A tabulated rate function ended before the series converged."""


class DensityUnreachableError(ZrplabError):
    """No fugacity below the cap reproduces the requested density."""


class BlockTooLargeError(ZrplabError):
    """Block diameter 2*ell+1 exceeds the torus side."""


class EmptySiteError(ZrplabError):
    """Attempted to move a particle out of an empty site."""


class AbsorbingStateError(ZrplabError):
    """Total jump rate is zero (empty torus); no further events exist."""


class KernelError(ZrplabError):
    """Invalid jump kernel (bad probabilities, zero drift, self jumps, ...)."""


class ProfileAmplitudeError(ZrplabError):
    """Perturbation drives some local density nonpositive."""


class CflError(ZrplabError):
    """Requested time step violates the explicit-Euler stability bound."""


class BlowUpError(ZrplabError):
    """Finite-difference solution left the physical range (negative density)."""


class EnumerationCapError(ZrplabError):
    """Canonical state space larger than the enumeration cap."""


class NotATailError(ZrplabError):
    """Tail threshold lies at or below the mean density."""


class CutoffError(ZrplabError):
    """Density cutoff inconsistent with the particle count on the block."""


class DisconnectedSpaceError(ZrplabError):
    """Canonical state graph is not connected under the given kernel."""


class SnapshotFormatError(ZrplabError):
    """Snapshot file is malformed or has an unsupported version."""


class ConfigError(ZrplabError):
    """Experiment configuration failed validation."""


class SchemaError(ZrplabError):
    """A result CSV does not match its documented schema."""
