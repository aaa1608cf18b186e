"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: dict = {}


def report(n: int, ok: bool, detail: str, status: str | None = None) -> bool:
    LINES[n] = f"criterion {n:2d}: {status or ('PASS' if ok else 'FAIL')}  {detail}"
    print(LINES[n])
    return ok
