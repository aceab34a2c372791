"""Collects one verdict per acceptance criterion for the end-of-run summary."""
RESULTS: dict[int, tuple[bool, str]] = {}


def report(number: int, passed: bool, detail: str) -> bool:
    RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)
