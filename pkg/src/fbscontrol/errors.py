"""Exception types shared across the solver stack."""


class FbsControlError(Exception):
    """Base class for all library errors."""


class EvaluatorError(FbsControlError):
    """A coefficient evaluator returned a non-finite value.

    Carries the probe point so the offending coefficient can be inspected.
    """

    def __init__(self, name, probe):
        self.name = name
        self.probe = probe
        super().__init__(f"evaluator {name!r} returned a non-finite value at probe {probe}")


class NonFiniteError(FbsControlError):
    """A simulation step produced NaN/Inf; reports the first offending (path, node)."""

    def __init__(self, label, path, node):
        self.label = label
        self.path = int(path)
        self.node = int(node)
        super().__init__(f"non-finite value in {label!r} at path={path}, node={node}")


class NoConvergenceError(FbsControlError):
    """An iterative solve (Picard sweep or per-node fixed point) did not converge."""

    def __init__(self, context, residual, detail=None):
        self.context = context
        self.residual = float(residual)
        self.detail = detail
        msg = f"{context}: no convergence, residual={residual:.3e}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InvertibilityError(FbsControlError):
    """The invertibility margin |1 - <p, sigma_z>| dropped below c_min."""

    def __init__(self, margin, c_min, where=""):
        self.margin = float(margin)
        self.c_min = float(c_min)
        self.where = where
        msg = f"invertibility margin {margin:.3e} < c_min={c_min:.3e}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class ConfigError(FbsControlError):
    """A run configuration field is missing or invalid; names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")
