from collections import Counter
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webcat.categories import Category
from webcat.corpus import LabelSource, SyntheticSpec, generate_synthetic, make_record, with_domain_first_seen
from webcat.errors import EmptyWindow
from webcat.experiment import window_config
from webcat.splits import (
    SplitConfig,
    SplitMode,
    build_split,
    read_split,
    sample_schedule,
    scaling_steps,
    split_frequency_report,
    write_split,
)

T0 = datetime(2022, 7, 1, tzinfo=timezone.utc)
DAY = timedelta(days=1)


def config(mode=SplitMode.DOMAIN_AND_TIME, cap=5):
    return SplitConfig(T0 + 10 * DAY, T0 + 20 * DAY, T0 + 30 * DAY, mode, cap)


def records(rows):
    """rows: (url, day offset)"""
    return with_domain_first_seen(make_record(u, T0 + d * DAY) for u, d in rows)


def test_config_validation():
    with pytest.raises(ValueError):
        SplitConfig(T0 + DAY, T0, T0 + 2 * DAY)
    with pytest.raises(ValueError):
        SplitConfig(T0, T0 + DAY, T0 + 2 * DAY, max_urls_per_domain=0)


def test_boundaries_are_half_open():
    c = config()
    assert c.window(T0 + 10 * DAY - timedelta(microseconds=1)) == 0
    assert c.window(T0 + 10 * DAY) == 1
    assert c.window(T0 + 30 * DAY) is None


def test_two_domains_no_overlap():
    recs = records([("a.com/1", 1), ("a.com/2", 25), ("v.com/1", 15), ("b.com/1", 25)])
    split = build_split(recs, config())
    assert [r.normalized_url for r in split.train] == ["a.com/1"]
    assert [r.normalized_url for r in split.test] == ["b.com/1"]


def test_time_mode_lets_domains_repeat():
    recs = records([("a.com/1", 1), ("a.com/2", 15), ("a.com/3", 25)])
    split = build_split(recs, config(SplitMode.TIME))
    assert [len(p) for p in (split.train, split.validation, split.test)] == [1, 1, 1]


def test_empty_window():
    with pytest.raises(EmptyWindow, match="test"):
        build_split(records([("a.com/1", 1), ("b.com/1", 12)]), config())


def test_cap_keeps_earliest_five():
    rows = [("a.com/0", 1), ("v.com/0", 12)] + [(f"t.com/{i}", 29 - i) for i in range(8)]
    split = build_split(records(rows), config())
    assert sorted(r.normalized_url for r in split.test) == [f"t.com/{i}" for i in (3, 4, 5, 6, 7)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_domain_and_time_invariants(seed):
    recs = generate_synthetic(SyntheticSpec(seed=seed, n_records=1500, tail_domain_count=600))
    split = build_split(recs, window_config(recs, SplitMode.DOMAIN_AND_TIME))
    doms = [{r.domain for r in p} for p in (split.train, split.validation, split.test)]
    assert not (doms[0] & doms[1] or doms[0] & doms[2] or doms[1] & doms[2])
    for part in (split.validation, split.test):
        assert max(Counter(r.domain for r in part).values()) <= 5


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcde"), st.floats(0, 35)), min_size=1, max_size=60))
def test_time_mode_is_a_partition(rows):
    recs = records([(f"{d}.com/{i}", off) for i, (d, off) in enumerate(rows)])
    c = config(SplitMode.TIME)
    try:
        split = build_split(recs, c)
    except EmptyWindow:
        return
    got = sorted(r.normalized_url for p in split.partitions().values() for r in p)
    assert got == sorted(r.normalized_url for r in recs if c.window(r.url_first_seen) is not None)


def labeled(counts):
    out = []
    for cat, n in counts.items():
        out += [make_record(f"{cat.name.lower()}{i}.com", T0, label=cat, label_source=LabelSource.SIGNATURE) for i in range(n)]
    return out


def test_sample_schedule_ten_per_category():
    train = labeled({c: 20 for c in Category})
    got = sample_schedule(train, 10, seed=0)
    assert len(got) == 300
    assert set(Counter(r.label for r in got).values()) == {10}


def test_sample_schedule_limits():
    train = labeled({Category.NEWS: 3, Category.CHAT: 12})
    got = Counter(r.label for r in sample_schedule(train, 10, seed=1))
    assert got == {Category.NEWS: 3, Category.CHAT: 10}
    assert sample_schedule(train, 100, seed=1) == train
    assert sample_schedule(train, 10, seed=5) == sample_schedule(train, 10, seed=5)


def test_scaling_steps_grow_tenfold():
    assert scaling_steps(5_000_000, 10)[:3] == [10, 100, 1000]


def test_frequency_report_head_dominates_time_test():
    recs = generate_synthetic(SyntheticSpec(seed=9, n_records=8000, tail_domain_count=3000))
    t = split_frequency_report(build_split(recs, window_config(recs, SplitMode.TIME)), 3)
    d = split_frequency_report(build_split(recs, window_config(recs, SplitMode.DOMAIN_AND_TIME)), 3)
    assert t["test"][0][1] > d["test"][0][1]


def test_frequency_report_single_domain():
    recs = records([("a.com/1", 1), ("a.com/2", 15), ("a.com/3", 25)])
    report = split_frequency_report(build_split(recs, config(SplitMode.TIME)))
    assert all(rows == [("a.com", 100.0)] for rows in report.values())


def test_write_and_read_split(tmp_path):
    recs = generate_synthetic(SyntheticSpec(seed=2, n_records=1000, tail_domain_count=300))
    split = build_split(recs, window_config(recs, SplitMode.DOMAIN_AND_TIME))
    write_split(split, tmp_path, seed=2)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["provenance.json", "test.jsonl", "train.jsonl", "validation.jsonl"]
    back = read_split(tmp_path)
    assert back.partitions() == split.partitions()
    assert back.provenance == split.provenance
