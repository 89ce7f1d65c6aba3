"""Collects one summary line per acceptance criterion for the end-of-run report."""

LINES = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
    print(LINES[-1])
    return ok
