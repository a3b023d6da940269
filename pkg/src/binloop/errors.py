from pathlib import Path


class BinloopError(Exception):
  pass


class DataError(BinloopError):
  '''Bad or unreadable input data; the CLI reports these with exit code 2.'''
  pass


class DecodeError(DataError):
  pass


class EmptyFile(DataError):
  pass


class IndexFormatError(DataError):
  pass


class ParseError(DataError):

  def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
    self.path = Path(path) if path is not None else None
    self.line = line
    where = ''
    if self.path is not None:
      where = f'{self.path}'
      if line is not None:
        where += f':{line}'
      where += ': '
    super().__init__(f'{where}{message}')


class InvalidDimensions(BinloopError, ValueError):
  pass


class DimensionMismatch(BinloopError, ValueError):
  pass


class NonMonotoneId(BinloopError, ValueError):
  pass


class UsageError(BinloopError):
  '''Bad command-line input that argparse cannot catch; the CLI exits with code 1.'''
  pass
