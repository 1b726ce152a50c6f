"""Exception taxonomy shared across the engine.

Skill-level failures (grasp slips, detection misses, unreachable poses) are
recoverable: the executor converts them into recovery attempts instead of
letting them propagate. Everything else signals a caller bug or a broken
environment and is allowed to escape.
"""

from __future__ import annotations


class DexSimError(Exception):
    """Base class for every error raised by this package."""

    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- geometry / kinematics ---------------------------------------------------

class NonOrthonormalRotation(DexSimError):
    code = "NonOrthonormalRotation"


class FractionOutOfRange(DexSimError):
    code = "FractionOutOfRange"


class JointLimitViolation(DexSimError):
    code = "JointLimitViolation"


class Unreachable(DexSimError):
    code = "Unreachable"


class InvalidCount(DexSimError):
    code = "InvalidCount"


# --- grasp scoring -----------------------------------------------------------

class ZeroNormFeature(DexSimError):
    code = "ZeroNormFeature"


class EmptyCandidateSet(DexSimError):
    code = "EmptyCandidateSet"


# --- blackboard --------------------------------------------------------------

class TypeMismatch(DexSimError):
    code = "TypeMismatch"


class DimensionMismatch(DexSimError):
    code = "DimensionMismatch"


class UnknownSlot(DexSimError):
    code = "UnknownSlot"


# --- simulated world ---------------------------------------------------------

class AmbiguousQuery(DexSimError):
    code = "AmbiguousQuery"


class EmptyMask(DexSimError):
    code = "EmptyMask"


class NoFeasibleGrasp(DexSimError):
    code = "NoFeasibleGrasp"


class InvalidEffect(DexSimError):
    code = "InvalidEffect"


class SceneFormatError(DexSimError):
    code = "SceneFormatError"


# --- skills ------------------------------------------------------------------

class UnknownSkill(DexSimError):
    code = "UnknownSkill"


class InputSchemaViolation(DexSimError):
    code = "InputSchemaViolation"


class DetectionBelowThreshold(DexSimError):
    code = "DetectionBelowThreshold"


class GraspSlip(DexSimError):
    code = "GraspSlip"


class SlotAuditViolation(DexSimError):
    code = "SlotAuditViolation"


# Failures a skill may report without crashing the run; the executor routes
# these through the recovery path.
RECOVERABLE = (
    DetectionBelowThreshold,
    GraspSlip,
    Unreachable,
    EmptyCandidateSet,
    EmptyMask,
    NoFeasibleGrasp,
    AmbiguousQuery,
    InvalidEffect,
)


# --- planner -----------------------------------------------------------------

class EmptyCommand(DexSimError):
    code = "EmptyCommand"


class BackendUnavailable(DexSimError):
    code = "BackendUnavailable"


class MalformedPlanOutput(DexSimError):
    code = "MalformedPlanOutput"


class ValidationFailed(DexSimError):
    code = "ValidationFailed"


class UnknownSkillName(ValidationFailed):
    code = "UnknownSkillName"


class LengthMismatch(ValidationFailed):
    code = "LengthMismatch"


# --- executor / transcripts --------------------------------------------------

class RecoveryBudgetExhausted(DexSimError):
    code = "RecoveryBudgetExhausted"


class SinkUnavailable(DexSimError):
    code = "SinkUnavailable"


class DigestMismatch(DexSimError):
    code = "DigestMismatch"


class SchemaVersionMismatch(DexSimError):
    code = "SchemaVersionMismatch"


class ConfigError(DexSimError):
    code = "ConfigError"
