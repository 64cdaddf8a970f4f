"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> bool:
    RESULTS.append((name, bool(ok), detail))
    return bool(ok)
