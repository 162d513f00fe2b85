import struct

import numpy as np
import pytest


def write_raw_wav(path, data: bytes, rate: int, channels: int, bits: int, fmt_tag: int = 1):
    """Hand-assemble a RIFF/WAVE file around an already-encoded data body."""
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    if len(data) % 2:
        body += b"\x00"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


def write_int16_wav(path, frames, rate=44100):
    frames = np.asarray(frames, dtype="<i2")
    channels = 1 if frames.ndim == 1 else frames.shape[1]
    return write_raw_wav(path, frames.tobytes(), rate, channels, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance reporting: tests marked ``criterion(n, title)`` are folded into one
# PASS/FAIL/SKIP line per criterion at the end of the run.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: end-to-end training runs (minutes)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = mark.args
        entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})
        entry["outcomes"].append(report.outcome)
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            entry["details"].append(report.longrepr[2])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outs = entry["outcomes"]
        if "failed" in outs:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = "; ".join(dict.fromkeys(entry["details"]))
        terminalreporter.write_line(f"criterion {number} {verdict}: {entry['title']}"
                                    + (f" | {detail}" if detail else ""))
