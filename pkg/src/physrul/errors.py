"""Exception types shared across the pipeline."""


class PhysrulError(Exception):
    """Base class for all package errors."""


class MalformedLine(PhysrulError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason or 'malformed record'}")


class NonContiguousCycles(PhysrulError):
    def __init__(self, unit_id):
        self.unit_id = unit_id
        super().__init__(f"unit {unit_id}: cycle numbers are not consecutive from 1")


class MissingRulFile(PhysrulError):
    pass


class TrajectoryTooShort(PhysrulError):
    def __init__(self, unit_id):
        self.unit_id = unit_id
        super().__init__(f"unit {unit_id}: trajectory shorter than window length")


class TooFewPaths(PhysrulError):
    pass


class DegenerateInput(PhysrulError):
    pass


class OutOfRange(PhysrulError):
    pass


class LengthExceedsSupport(PhysrulError):
    pass


class ShapeMismatch(PhysrulError):
    pass


class EmptyBatch(PhysrulError):
    pass


class MissingPhysics(PhysrulError):
    def __init__(self, sensor_id):
        self.sensor_id = sensor_id
        super().__init__(f"no physics available for sensor {sensor_id}")
