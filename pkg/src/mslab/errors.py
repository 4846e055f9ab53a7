class NumericalError(RuntimeError):
    """A linear solve or factorization failed; the message carries diagnostics."""
