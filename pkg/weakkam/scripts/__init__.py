from .run_stages import run_stages  # noqa: F401
