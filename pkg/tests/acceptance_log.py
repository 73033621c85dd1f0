"""Pass/fail lines of the acceptance criteria, printed after the test run."""

LINES: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    LINES[n] = f"ACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
