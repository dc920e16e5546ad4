import numpy as np
import pytest

from shoutcomp.data import Dataset, Domain, EmbeddingRecord, Gender

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def corpus_shaped(n_speakers=22, n_contents=24, dim=3, seed=0) -> Dataset:
    """Labelled dataset laid out like the stereo corpus: speakers x contents x 2 domains."""
    rng = np.random.default_rng(seed)
    recs = []
    for s in range(n_speakers):
        g = Gender.MALE if s < n_speakers // 2 else Gender.FEMALE
        for dom in (Domain.NORMAL, Domain.SHOUTED):
            for c in range(n_contents):
                recs.append(EmbeddingRecord(f"s{s}_c{c}_{dom.value}", f"s{s}", dom, g,
                                            rng.standard_normal(dim)))
    return Dataset(recs)


@pytest.fixture(scope="session")
def corpus():
    return corpus_shaped()
