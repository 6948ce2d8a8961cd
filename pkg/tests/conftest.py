from datetime import datetime, timedelta, timezone

import pytest

from webcat.categories import Category
from webcat.corpus import LabelSource, make_record
from webcat.models import EXPOSE, ExposeConfig, train
from webcat.signatures import SignatureDb
from webcat.tokenize import CharVocab

T0 = datetime(2023, 1, 1, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def small_records():
    words = {Category.NEWS: "politics", Category.GAMBLING: "poker", Category.SHOPPING: "cart"}
    out = []
    for i in range(90):
        cat = list(words)[i % 3]
        out.append(make_record(f"site{i}.com/{words[cat]}/{i}", T0 + timedelta(hours=i), label=cat, label_source=LabelSource.MANUAL))
    return out


@pytest.fixture(scope="session")
def small_model(small_records):
    cfg = ExposeConfig(embed_dim=8, filters=8, kernel_widths=(2, 3))
    model, _ = train(EXPOSE, small_records, tokenizer=CharVocab(), config=cfg, epochs=2, batch_size=32, learning_rate=1e-2)
    return model


@pytest.fixture(scope="session")
def signature_db():
    return SignatureDb(
        domain_rules={"news-site.com": Category.NEWS, "casino.net": Category.GAMBLING},
        prefix_rules={"portal.com/shop": Category.SHOPPING},
    )


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
