import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cer.embed import BuiltinHashEmbedder, EmbedderConfig
from cer.subjectivity import load_lexicon

DEMO_DIR = Path(__file__).parent.parent / "demo"


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon("builtin")


@pytest.fixture()
def embedder():
    return BuiltinHashEmbedder(EmbedderConfig(dim=64, seed=0))


@pytest.fixture()
def demo_workspace(tmp_path):
    """Copy of the shipped demo corpus/claims/config in a scratch directory."""
    import shutil

    work = tmp_path / "demo"
    shutil.copytree(DEMO_DIR, work, ignore=shutil.ignore_patterns("work"))
    return work
