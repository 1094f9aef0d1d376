# --------------------------------------------------------------------
# errors.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Monday March 3, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------


# --------------------------------------------------------------------
class UvhError(Exception):
    pass


# --------------------------------------------------------------------
class ConfigurationError(UvhError):
    def __init__(self, key, reason=None):
        super().__init__(
            f'Invalid configuration for "{key}"' + (f": {reason}" if reason else ".")
        )
        self.key = key
        self.reason = reason


# --------------------------------------------------------------------
class TemplateError(UvhError):
    def __init__(self, reason):
        super().__init__("Invalid skinned template: %s" % reason)
        self.reason = reason


# --------------------------------------------------------------------
class DegenerateGeometryError(UvhError):
    def __init__(self, face, message=None):
        super().__init__(message or "Face %d has zero area." % face)
        self.face = face


# --------------------------------------------------------------------
class ProjectionError(UvhError):
    def __init__(self, count):
        super().__init__(
            "Dispersed projection found no candidate face for %d point(s)." % count
        )
        self.count = count


# --------------------------------------------------------------------
class ContractViolation(UvhError):
    def __init__(self, what):
        super().__init__("Contract violation: %s" % what)
        self.what = what


# --------------------------------------------------------------------
class NonFiniteGradientError(UvhError):
    def __init__(self, param):
        super().__init__(f'Gradient of parameter "{param}" is not finite.')
        self.param = param


# --------------------------------------------------------------------
class NonFiniteLossError(UvhError):
    def __init__(self, step, dump_path=None):
        super().__init__(
            "Loss became non-finite at step %d" % step
            + (f", failing batch saved to {dump_path}." if dump_path else ".")
        )
        self.step = step
        self.dump_path = dump_path


# --------------------------------------------------------------------
class UndefinedMetricError(UvhError):
    def __init__(self, reason):
        super().__init__("Metric is undefined: %s" % reason)
        self.reason = reason


# --------------------------------------------------------------------
class ManifestError(UvhError):
    def __init__(self, path, reason):
        super().__init__(f'Manifest "{path}": {reason}')
        self.path = path
        self.reason = reason


# --------------------------------------------------------------------
class CheckpointMismatchError(UvhError):
    def __init__(self, what, expected, found):
        super().__init__(
            f'Checkpoint {what} mismatch: expected "{expected}", found "{found}".'
        )
        self.what = what
        self.expected = expected
        self.found = found


# --------------------------------------------------------------------
class InternalError(UvhError):
    pass
