"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import sys

LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
    LINES.append(line)
    print(line, file=sys.__stdout__, flush=True)
