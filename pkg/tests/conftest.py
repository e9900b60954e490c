from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from findbench import generator

FIXTURES = Path(__file__).parent / "fixtures"


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_spec_dataset(root: Path, records: list[dict], seed: int = 0) -> Path:
    """Dataset directory from hand-written manifest records (no generator involved)."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "dataset.json").write_text(json.dumps({"seed": seed, "format_version": generator.FORMAT_VERSION}))
    (root / "manifest.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records))
    return root


@pytest.fixture(scope="session")
def golden() -> dict:
    return json.loads((FIXTURES / "golden_exec.json").read_text())


@pytest.fixture(scope="session")
def golden_dir(tmp_path_factory, golden) -> Path:
    return write_spec_dataset(tmp_path_factory.mktemp("golden"), golden["specs"])


@pytest.fixture(scope="session")
def golden_ds(golden_dir) -> generator.Dataset:
    return generator.load_dataset(golden_dir)


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory) -> Path:
    """20 numeric, 10 string and every relation variant, with trained networks."""
    manifest = generator.sample_dataset(1, numeric_count=20, string_count=10, relation_count=None)
    generator.make_test_sets(manifest)
    out = tmp_path_factory.mktemp("small")
    generator.write_dataset(manifest, out, generator.train_weights(manifest))
    return out


@pytest.fixture(scope="session")
def small_ds(small_dir) -> generator.Dataset:
    return generator.load_dataset(small_dir)


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.failed or rep.when == "call" or number not in _ACCEPTANCE:
        detail = getattr(item, "acceptance_detail", "")
        _ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL" if rep.failed else "SKIP", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
