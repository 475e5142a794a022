"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: malformed config, out-of-range value, shape mismatch.

    The CLI maps this to exit code 2; anything else that escapes is an
    internal error and exits 1.
    """
