"""Exception hierarchy for the solver pipeline.

Every failure mode of the pipeline maps to one of these classes; the CLI
translates them into documented exit codes (see ``charfront.cli``).
"""


class CharfrontError(Exception):
    """Base class for all package errors."""


class ConfigError(CharfrontError):
    """Bad run configuration, manifest, or CLI arguments."""


class UnknownModel(ConfigError):
    """Requested builtin model name does not exist."""


class BadParams(ConfigError):
    """Builtin model parameters violate their admissibility constraints."""


class NonHyperbolic(CharfrontError):
    """Complex or (nearly) repeated eigenvalues: the state left the
    strictly hyperbolic region."""


class NoBlowup(CharfrontError):
    """The wave-speed profile has nonnegative slope everywhere; the simple
    wave never focuses."""


class Degenerate(CharfrontError):
    """Generic non-degeneracy fails at the blowup point (non-unique
    minimizer or vanishing third derivative)."""


class NotInvertible(CharfrontError):
    """Characteristic map queried at or beyond the blowup time."""


class EnvelopeViolation(CharfrontError):
    """A singular-profile envelope bound admits no finite constant."""

    def __init__(self, bound_id, message=""):
        self.bound_id = bound_id
        super().__init__(f"envelope bound {bound_id} violated" + (f": {message}" if message else ""))


class BracketViolation(CharfrontError):
    """Shock-foot labels fell outside the (4/5, 6/5) t^{3/2} bracket by
    more than the allowed slack."""


class NoRoot(CharfrontError):
    """No characteristic label reaches the queried curve point."""


class NewtonDiverged(CharfrontError):
    """A Newton solve failed to converge (amplitude or states out of range)."""


class InnerDiverged(CharfrontError):
    """Two-sided characteristic iteration stopped contracting."""


class OuterDiverged(CharfrontError):
    """Shock-speed fixed-point iteration stopped contracting."""


class BootstrapViolation(CharfrontError):
    """An iterate broke the |phi| <= M^4 t^2 style a-priori bounds."""


class NoShock(CharfrontError):
    """Shock locator found no jump above the smearing noise floor."""


class BoxExit(CharfrontError):
    """A finite-volume cell left the admissible state box."""


class InsufficientSpan(CharfrontError):
    """Too few samples or decades for a meaningful regression."""
