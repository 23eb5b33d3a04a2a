from pathlib import Path

import pytest

from ftbench.lang import compile_script, dir_loader

FIXTURES = Path(__file__).parent / "fixtures"


def compile_fixture(*parts: str, extra: str = ""):
    """Compile one or more fixture files concatenated, with includes
    resolved next to the first file."""
    paths = [FIXTURES / p for p in parts]
    text = "".join(p.read_text() for p in paths) + extra
    return compile_script(text, dir_loader(paths[0].parent), paths[0].name)


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES
