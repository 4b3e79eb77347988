import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modprune.errors import EmptyTrace, NonMonotonicTime, ParseError, ZeroDuration
from modprune.power import PowerTrace, avp, eps, format_trace, load_trace, parse_trace


def constant(p=20.0, bg=5.0, secs=10.0, n=100, steps=11):
    t = np.linspace(0.0, secs, steps)
    return PowerTrace(t, np.full(steps, p), bg, n)


class TestClosedForms:
    def test_constant(self):
        tr = constant()
        assert eps(tr) == 1.5
        assert avp(tr) == 15.0

    def test_background_only(self):
        assert eps(constant(p=5.0)) == 0.0

    def test_ramp(self):
        tr = PowerTrace(np.array([0.0, 2.0]), np.array([0.0, 10.0]), 0.0, 1)
        assert eps(tr) == 10.0 and avp(tr) == 5.0

    def test_identity(self):
        rng = np.random.default_rng(0)
        t = np.cumsum(rng.uniform(0.01, 0.2, 50))
        tr = PowerTrace(t, rng.uniform(10, 30, 50), 7.5, 13)
        assert avp(tr) * tr.duration == pytest.approx(tr.n_samples * eps(tr), rel=4 * np.finfo(float).eps)

    def test_table_scale_round_trip(self, tmp_path):
        # 1000 samples at a net 180 W need 741.1 * 1000 / 180 seconds
        n, net, bg = 1000, 180.0, 20.0
        secs = 741.1 * n / net
        t = np.linspace(0.0, secs, 2001)
        path = tmp_path / "trace.csv"
        path.write_text(format_trace(t, np.full_like(t, bg + net), n, background=bg))
        tr = load_trace(path)
        assert abs(eps(tr) - 741.1) <= 1e-3 * 741.1
        assert f"{eps(tr):.1f}" == "741.1"


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=2, max_size=20), st.integers(1, 6))
    def test_refinement_invariant(self, powers, k):
        t = np.arange(len(powers), dtype=float)
        fine_t = np.linspace(0, t[-1], (len(powers) - 1) * k + 1)
        fine_p = np.interp(fine_t, t, powers)
        a = eps(PowerTrace(t, np.array(powers), 1.0, 3))
        b = eps(PowerTrace(fine_t, fine_p, 1.0, 3))
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=2, max_size=20), st.floats(0, 100))
    def test_shift_invariant(self, powers, c):
        t = np.linspace(0, 3, len(powers))
        p = np.array(powers)
        a = PowerTrace(t, p, 2.0, 4)
        b = PowerTrace(t, p + c, 2.0 + c, 4)
        assert eps(a) == pytest.approx(eps(b), abs=1e-9 * (1 + c))
        assert avp(a) == pytest.approx(avp(b), abs=1e-9 * (1 + c))


class TestFile:
    def test_three_rows(self):
        tr = parse_trace("# background_w: 1.5\n# n_samples: 4\nt,power_w\n0,2\n0.5,3\n1.0,2.5\n")
        assert len(tr.t) == 3 and tr.background == 1.5 and tr.n_samples == 4

    def test_missing_n_samples(self):
        with pytest.raises(ParseError, match="n_samples"):
            parse_trace("# background_w: 1\nt,power_w\n0,1\n1,1\n")

    def test_missing_background(self):
        with pytest.raises(ParseError, match="background_w"):
            parse_trace("# n_samples: 1\nt,power_w\n0,1\n1,1\n")

    def test_window_mean(self):
        text = "# n_samples: 2\n# background_window: 0,1\nt,power_w\n0,4\n0.5,6\n1,5\n2,15\n3,15\n"
        tr = parse_trace(text)
        assert tr.background == (4 + 6 + 5) / 3
        assert tr.t.tolist() == [1.0, 2.0, 3.0]
        # two intervals: (5+15-10)/2 * 1 + (15+15-10)/2 * 1 = 15 J over 2 samples
        assert eps(tr) == 7.5

    def test_cli_window_overrides(self):
        text = "# n_samples: 1\n# background_w: 100\nt,power_w\n0,2\n1,2\n2,6\n"
        tr = parse_trace(text, background_window=(0.0, 1.0))
        assert tr.background == 2.0 and eps(tr) == 2.0

    def test_non_monotonic(self):
        with pytest.raises(NonMonotonicTime):
            parse_trace("# background_w: 0\n# n_samples: 1\nt,power_w\n0,1\n1,1\n1,2\n")

    def test_empty(self):
        with pytest.raises(EmptyTrace):
            parse_trace("# background_w: 0\n# n_samples: 1\nt,power_w\n0,1\n")

    def test_bad_header(self):
        with pytest.raises(ParseError, match="header"):
            parse_trace("# background_w: 0\n# n_samples: 1\ntime,watts\n0,1\n1,1\n")

    def test_zero_duration(self):
        tr = constant()
        object.__setattr__(tr, "t", np.zeros(3))
        with pytest.raises(ZeroDuration):
            avp(tr)

    def test_format_round_trip(self):
        t, p = np.array([0.0, 0.1, 0.25]), np.array([1.0, 2.0 / 3.0, 3.0])
        tr = parse_trace(format_trace(t, p, 7, background=0.125))
        assert tr.t.tolist() == t.tolist() and tr.power.tolist() == p.tolist()
