"""Exception hierarchy shared across the package."""


class PsstuneError(Exception):
    """Base class for all package errors."""


class StructuralError(PsstuneError):
    """Dimension mismatch, unknown mode id, unknown reset id, bad topology."""


class ConfigurationError(PsstuneError):
    """Inconsistent model configuration (parameters, exciter/PSS wiring)."""


class ScenarioError(PsstuneError):
    """Scenario or case file fails validation (grid alignment, ordering, ids)."""


class PowerFlowError(PsstuneError):
    """Newton-Raphson power flow failed to converge."""

    def __init__(self, message, mismatch=None, iterations=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class NewtonError(PsstuneError):
    """Newton solve of the discretized DAE failed.

    ``stage`` is one of 'init', 'step', 'junction'; ``t`` and ``mode``
    locate the failure along the trajectory.
    """

    def __init__(self, message, residual_norm=None, t=None, mode=None, stage=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.t = t
        self.mode = mode
        self.stage = stage


class SensitivityError(PsstuneError):
    """Sensitivity initialization, propagation, or jump failed."""


class LineSearchError(PsstuneError):
    """Armijo backtracking exhausted its budget without sufficient decrease."""

    def __init__(self, message, m_tried=None):
        super().__init__(message)
        self.m_tried = m_tried
