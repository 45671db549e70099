from pathlib import Path

import numpy as np
import pytest

from damp.schemas.corpus import AdaptationDataset, Domain, Instance
from damp.schemas.model import Hyperparams
from damp.schemas.train import TrainConfig
from damp.services.corpus import load_corpus, make_adaptation_split

# Three toy domains sharing the query skeleton; entity types and values are domain specific.
DOMAIN_WORDS = {
    "calendar": (("meeting", "event"), ("alice", "bob", "carol")),
    "housing": (("unit", "flat"), ("downtown", "midtown", "uptown")),
    "recipes": (("recipe", "dish"), ("rice", "beans", "soup")),
}


def toy_rows() -> list[tuple[str, str, str]]:
    rows = []
    for domain, (types, values) in DOMAIN_WORDS.items():
        for etype in types:
            rows.append((domain, f"how many {etype}", f"count ( getProperty {etype} )"))
            for value in values:
                rows.append((
                    domain,
                    f"find {etype} with {value}",
                    f"listValue ( filter ( getProperty {etype} ) ( string = {value} ) )",
                ))
    return rows


def write_corpus(path: Path, rows) -> Path:
    path.write_text("".join(f"{d}\t{u}\t{y}\n" for d, u, y in rows), encoding="utf-8")
    return path


@pytest.fixture
def corpus_file(tmp_path):
    return write_corpus(tmp_path / "corpus.tsv", toy_rows())


@pytest.fixture
def corpora(corpus_file):
    return load_corpus(corpus_file)


@pytest.fixture
def dataset(corpora):
    return make_adaptation_split(corpora, "recipes", target_fraction=1.0, dev_fraction=0.25, seed=0)


@pytest.fixture
def full_dataset(corpora):
    """Every instance for training, no dev split: the monitor falls back to the training pool."""
    domains = tuple(sorted(corpora, key=lambda d: d.id))
    target = next(d for d in domains if d.name == "recipes")
    source = tuple(i for d in domains if d != target for i in corpora[d])
    return AdaptationDataset(
        domains=domains,
        target_domain=target.id,
        source_train=source,
        target_train=tuple(corpora[target]),
        target_fraction=1.0,
    )


@pytest.fixture
def vectors_file(tmp_path):
    """Random 4-d vectors for every toy word plus the domain names."""
    rng = np.random.default_rng(3)
    words = sorted({w for _, u, _ in toy_rows() for w in u.split()} | set(DOMAIN_WORDS))
    path = tmp_path / "vectors.txt"
    path.write_text(
        "".join(f"{w} {' '.join(f'{x:.6f}' for x in rng.uniform(-1, 1, 4))}\n" for w in words),
        encoding="utf-8",
    )
    return path


@pytest.fixture
def toy_hp():
    return Hyperparams(
        embedding_dim=4, encoder_hidden=8, dropout=0.0, batch_size=4, lr=0.01, beam_size=2,
    )


@pytest.fixture
def toy_config(tmp_path, toy_hp):
    return TrainConfig(
        strategy="damp", hyperparams=toy_hp, epochs=2, patience=5, seed=0, out_dir=tmp_path / "run",
    )


def make_instance(domain: int, utterance: str, logical_form: str) -> Instance:
    return Instance(domain=domain, utterance=tuple(utterance.split()), logical_form=tuple(logical_form.split()))


def make_domains(*names: str) -> tuple[Domain, ...]:
    return tuple(Domain(name=n, id=i) for i, n in enumerate(names))
