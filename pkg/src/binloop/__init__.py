"""binloop package root

Keep this file lightweight: the numeric modules pull in numpy/scipy, and the CLI entry
point should not be imported just because the package is. `main` is a lazy wrapper
that imports the real entry point only when called.
"""

# Package version (single source of truth for runtime version display).
# If the project is built with setuptools_scm, it will write `src/binloop/_version.py`.
# Otherwise fall back to a default value for local development.
try:
  from ._version import version as __version__  # type: ignore
except Exception:
  __version__ = "0.1.0"

def main() -> int:
  """Lazy entry point that imports the real `main` only when invoked."""
  from .main import main as _real_main
  return _real_main()

__all__ = ["main", "__version__"]
