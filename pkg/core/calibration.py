import os
from pathlib import Path

# Shipped table, regenerated by `main.py calibrate`
DEFAULT_TABLE_PATH = Path(__file__).resolve().parent.parent / "data" / "vblast_at.txt"


class CalibrationError(LookupError):
    """Raised when an (M, N) configuration has no a_t coefficient."""


class CalibrationTable:
    """V-BLAST a_t coefficients keyed by (M, N)."""

    def __init__(self, entries=None, header=None):
        self.entries = dict(entries or {})
        self.header = list(header or [])

    def __contains__(self, key):
        return key in self.entries

    def a_t(self, n_tx, n_rx):
        try:
            return self.entries[(n_tx, n_rx)]
        except KeyError:
            raise CalibrationError(
                f"no a_t calibration entry for V-BLAST {n_tx}x{n_rx}; "
                f"run `main.py calibrate --configs {n_tx}x{n_rx}`"
            ) from None

    def require(self, configs):
        """Fail early if any (M, N) in configs is missing."""
        missing = sorted(c for c in configs if c not in self.entries)
        if missing:
            names = ", ".join(f"{m}x{n}" for m, n in missing)
            raise CalibrationError(f"missing a_t calibration entries: {names}")

    def update(self, n_tx, n_rx, value):
        self.entries[(n_tx, n_rx)] = float(value)

    @classmethod
    def load(cls, path=None):
        path = Path(path) if path is not None else DEFAULT_TABLE_PATH
        entries = {}
        header = []
        with open(path) as f:
            for line_no, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    header.append(line[1:].strip())
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}:{line_no}: expected 'M N a_t', got {line!r}")
                try:
                    m, n, a_t = int(parts[0]), int(parts[1]), float(parts[2])
                except ValueError:
                    raise ValueError(f"{path}:{line_no}: malformed entry {line!r}") from None
                if not 1 <= m <= n:
                    raise ValueError(f"{path}:{line_no}: V-BLAST needs 1 <= M <= N, got {m}x{n}")
                entries[(m, n)] = a_t
        return cls(entries, header)

    def save(self, path):
        path = Path(path)
        os.makedirs(path.parent, exist_ok=True)
        with open(path, "w") as f:
            for line in self.header:
                f.write(f"# {line}\n")
            for (m, n), a_t in sorted(self.entries.items()):
                f.write(f"{m} {n} {a_t!r}\n")
        return path
