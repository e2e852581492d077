import numpy as np
import pytest

from transw.data import Split, TripleDataset, Vocab
from transw.model import TransW
from transw.words import WordEmbeddingTable


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def write(tmp_path):
    def _write(name, lines):
        return write_lines(tmp_path / name, lines)
    return _write


def random_transw(rng, dim=3, n_words=6, n_entities=5, n_relations=3, max_tokens=3, norm="L2",
                  fine_tune=False, project=False, empty_ok=True):
    """A TransW model over random words, entities and relations with perturbed parameters."""
    words = [f"w{i}" for i in range(n_words)]
    lo = 0 if empty_ok else 1

    def toks():
        return [words[j] for j in rng.integers(0, n_words, rng.integers(lo, max_tokens + 1))]

    ent = [toks() for _ in range(n_entities)]
    rel = [toks() for _ in range(n_relations)]
    table = WordEmbeddingTable(words, rng.normal(0, 1, (n_words, dim)))
    model = TransW.init(ent, rel, table, norm=norm, seed=int(rng.integers(1 << 30)), fine_tune=fine_tune,
                        project=project)
    model.conn_ent += rng.normal(0, 0.3, model.conn_ent.shape)
    model.conn_rel += rng.normal(0, 0.3, model.conn_rel.shape)
    model.b_ent += rng.normal(0, 0.3, dim)
    model.b_rel += rng.normal(0, 0.3, dim)
    return model, table


@pytest.fixture
def tiny_dataset():
    ents = Vocab(["Casino_Royale", "Daniel_Craig", "Agent_007", "Skyfall"])
    rels = Vocab(["/film/film/starring", "/film/performance/character"])
    train = Split(np.array([[0, 0, 1], [3, 0, 1], [2, 1, 1]]))
    return TripleDataset(ents, rels, train)


# acceptance criteria outcomes, printed after the run
ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
