class IonFringeError(Exception):
    exit_code = 1


class ValidationError(IonFringeError, ValueError):
    """Bad input: configuration, data file, or argument outside its domain."""

    exit_code = 2


class ConvergenceError(IonFringeError, RuntimeError):
    """A numerical solver or fit failed to converge."""

    exit_code = 3
