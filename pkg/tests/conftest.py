import numpy as np
import pytest
import torch
from torch import nn

from adaptfc import synthetic as syn
from adaptfc.config import AdaptationConfig
from adaptfc.encoders import DTYPE, TextEncoder

torch.set_num_threads(1)

# Small corpora and a small model keep unit-level training tests to seconds.
TINY_SPEC = syn.SyntheticSpec(num_claims=60, num_entities=40, dialect_per_doc=6)
TINY_CONFIG = AdaptationConfig(
    output_dim=8, embed_dim=16, hidden_dim=8, num_buckets=512, disc_hidden_dim=16, reader_dim=4,
    retriever_batch_size=16, reader_batch_size=16, adapt_batch_size=16, retriever_epochs=2,
    adapt_steps=10, disc_warmup_steps=2, reader_epochs=2, pretrain_epochs=1, k=5,
)


class FixedEncoder(TextEncoder):
    """Looks each text up in a table of trainable vectors."""

    kind = "fixed-test"

    def __init__(self, table):
        super().__init__()
        self.keys = list(table)
        self.output_dim = len(next(iter(table.values())))
        self.max_seq_len = 10_000
        self.weight = nn.Parameter(torch.tensor([table[k] for k in self.keys], dtype=DTYPE))

    def hyperparams(self):
        return {}

    def forward(self, texts):
        idx = torch.tensor([self.keys.index(t) for t in texts], dtype=torch.long)
        return self.weight[idx] if len(texts) else torch.zeros((0, self.output_dim), dtype=DTYPE)


class ConstantDiscriminator(nn.Module):
    """g(v) = value for every input."""

    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, vecs):
        return torch.full((len(vecs),), float(self.value), dtype=DTYPE)


class TableDiscriminator(nn.Module):
    """g(v) read from the first coordinate of v."""

    def forward(self, vecs):
        return vecs[:, 0]


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_CONFIG


@pytest.fixture(scope="session")
def tiny_pair():
    return syn.domain_pair(TINY_SPEC, seed=0)


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_pair, tiny_config):
    from adaptfc.pipeline import train_pipeline

    source, target = tiny_pair
    return train_pipeline(source, target, tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria record one verdict each; the terminal summary lists them.
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Recorder for the criterion named by the test, e.g. ``test_a3_...`` -> ``A3``."""
    criterion = request.node.originalname.split("_")[1].upper()
    results = request.config.stash[ACCEPTANCE]
    results[criterion] = (False, "did not complete")

    def record(ok, detail):
        results[criterion] = (bool(ok), detail)
        print(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(results, key=lambda c: int(c[1:])):
        ok, detail = results[criterion]
        terminalreporter.write_line(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
