import pytest
from hypothesis import given, settings, strategies as st

from progen.data import Example
from progen.errors import ConfigError, InsufficientExamplesError
from progen.prompts import (
    BASE,
    InContextConfig,
    default_template,
    render_condition_prompt,
    render_in_context,
    render_zero_shot,
    sample_label,
    select_in_context,
)


def _helpful(n_per_class: int = 4) -> list[Example]:
    out = []
    for i in range(n_per_class):
        out.append(Example(id=2 * i, text=f"neg text {i}", label=0))
        out.append(Example(id=2 * i + 1, text=f"pos text {i}", label=1))
    return out


class TestSampleLabel:
    def test_round_robin_binary(self):
        assert [sample_label(2, 1, j) for j in range(4)] == [0, 1, 0, 1]

    def test_exact_balance_over_divisible_window(self):
        labels = [sample_label(2, 3, j) for j in range(100)]
        assert labels.count(0) == labels.count(1) == 50

    def test_three_classes(self):
        assert sample_label(3, 0, 7) == 1

    def test_rejects_degenerate_class_count(self):
        with pytest.raises(ConfigError):
            sample_label(1, 0, 0)


class TestZeroShot:
    def test_p2_movie_positive(self):
        t = default_template("P2", "movie")
        assert render_zero_shot(t, 1) == 'The movie review in positive sentiment is: "'

    def test_p1_movie_negative(self):
        t = default_template("P1", "movie")
        assert render_zero_shot(t, 0) == 'Negative Movie Review: "'

    def test_p2_restaurant_negative(self):
        t = default_template("P2", "restaurant")
        assert render_zero_shot(t, 0) == 'The restaurant review in negative sentiment is: "'

    def test_p3_requires_condition(self):
        t = default_template("P3", "movie")
        assert render_condition_prompt(t) == 'Movie: "'
        with pytest.raises(ConfigError):
            render_zero_shot(t, 1)
        out = render_zero_shot(t, 1, condition="The Long Night")
        assert out == 'The movie review in positive sentiment for movie "The Long Night" is: "'

    def test_missing_label_word(self):
        t = default_template("P2")
        with pytest.raises(ConfigError):
            render_zero_shot(t, 5)


class TestInContext:
    def test_base_equals_zero_shot(self):
        t = default_template("P2")
        cfg = InContextConfig(format=BASE, k=0, seed=1)
        assert render_in_context(t, _helpful(), cfg, 1) == render_zero_shot(t, 1)

    def test_f4_only_target_class(self):
        cfg = InContextConfig(format="F4", k=2, seed=3)
        for _ in range(5):
            picked = select_in_context(_helpful(), cfg, 1)
            assert all(ex.label == 1 for ex in picked)

    def test_f5_prompt_shape(self):
        t = default_template("P2", "movie")
        helpful = [Example(id=0, text="great film", label=1), Example(id=1, text="bad film", label=0)]
        cfg = InContextConfig(format="F5", k=1, seed=0)
        prompt = render_in_context(t, helpful, cfg, 1)
        assert 'The movie review is: "great film"' in prompt
        assert prompt.endswith('The movie review is: "')

    def test_f5_never_contains_label_words(self):
        t = default_template("P2")
        cfg = InContextConfig(format="F5", k=3, seed=11)
        prompt = render_in_context(t, _helpful(), cfg, 1).lower()
        assert "positive" not in prompt and "negative" not in prompt

    def test_f2_orders_positive_first(self):
        cfg = InContextConfig(format="F2", k=4, seed=5)
        picked = select_in_context(_helpful(), cfg, 1)
        labels = [ex.label for ex in picked]
        assert labels == sorted(labels, reverse=True)

    def test_f3_orders_positive_last(self):
        cfg = InContextConfig(format="F3", k=4, seed=5)
        picked = select_in_context(_helpful(), cfg, 1)
        labels = [ex.label for ex in picked]
        assert labels == sorted(labels)

    def test_f1_mixes_orders_across_seeds(self):
        helpful = [Example(id=0, text="a", label=0), Example(id=1, text="b", label=1)]
        cfg = lambda s: InContextConfig(format="F1", k=2, seed=s)  # noqa: E731
        orders = {tuple(ex.id for ex in select_in_context(helpful, cfg(s), 1)) for s in range(40)}
        assert (0, 1) in orders and (1, 0) in orders

    def test_draws_without_replacement(self):
        cfg = InContextConfig(format="F1", k=6, seed=2)
        picked = select_in_context(_helpful(), cfg, 0)
        assert len({ex.id for ex in picked}) == 6

    def test_insufficient_examples_error(self):
        helpful = [Example(id=0, text="pos", label=1)]
        with pytest.raises(InsufficientExamplesError):
            select_in_context(helpful, InContextConfig(format="F4", k=2, seed=0), 1)
        with pytest.raises(InsufficientExamplesError):
            select_in_context(helpful, InContextConfig(format="F4", k=1, seed=0), 0)

    def test_prompt_length_grows_with_k(self):
        t = default_template("P2")
        lengths = [
            len(render_in_context(t, _helpful(), InContextConfig(format="F1", k=k, seed=7), 1))
            for k in range(1, 6)
        ]
        assert all(b > a for a, b in zip(lengths, lengths[1:]))

    def test_separator_is_blank_line(self):
        t = default_template("P2")
        prompt = render_in_context(t, _helpful(), InContextConfig(format="F1", k=2, seed=0), 1)
        assert prompt.count("\n\n") == 2

    def test_invalid_config_combinations(self):
        with pytest.raises(ConfigError):
            InContextConfig(format=BASE, k=2, seed=0).validate()
        with pytest.raises(ConfigError):
            InContextConfig(format="F1", k=0, seed=0).validate()
        with pytest.raises(ConfigError):
            InContextConfig(format="F9", k=1, seed=0).validate()

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), fmt=st.sampled_from(["F1", "F2", "F3", "F4", "F5"]), target=st.integers(0, 1))
    def test_structural_contracts_hold(self, seed, fmt, target):
        t = default_template("P2")
        cfg = InContextConfig(format=fmt, k=3, seed=seed)
        picked = select_in_context(_helpful(), cfg, target)
        assert len(picked) == 3
        if fmt in ("F4", "F5"):
            assert all(ex.label == target for ex in picked)
        if fmt == "F2":
            assert [e.label for e in picked] == sorted((e.label for e in picked), reverse=True)
        if fmt == "F3":
            assert [e.label for e in picked] == sorted(e.label for e in picked)
        prompt = render_in_context(t, _helpful(), cfg, target)
        if fmt == "F5":
            assert "positive" not in prompt and "negative" not in prompt
        else:
            assert t.label_words[target] in prompt.rsplit("\n\n", 1)[-1]
