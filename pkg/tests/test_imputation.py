import numpy as np
import pytest

from elasim.core import StatusUpdate
from elasim.imputation import (
    CompletionReport,
    ImputationCase,
    ImputationConfig,
    RiskSet,
    build_risk_set,
    complete_stream,
    impute_future,
    km_survival_at,
    weighted_km,
)


def textbook_km(times, events):
    """Independent unweighted product-limit estimator (counting form)."""
    out = []
    s = 1.0
    for t in sorted(set(t for t, e in zip(times, events) if e)):
        n = sum(1 for ti in times if ti >= t)
        d = sum(1 for ti, ei in zip(times, events) if ei and ti == t)
        s *= 1.0 - d / n
        out.append((t, s))
    return out


class TestWeightedKM:
    def test_two_events_unit_weights(self):
        curve = weighted_km([1.0, 2.0], [1, 1], [1.0, 1.0])
        assert curve == [(1.0, 0.5), (2.0, 0.0)]

    def test_two_events_weights_2_1(self):
        curve = weighted_km([1.0, 2.0], [1, 1], [2.0, 1.0])
        assert curve[0][1] == pytest.approx(1.0 / 3.0)
        assert curve[1][1] == pytest.approx(0.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        times = list(rng.integers(1, 20, size=8).astype(float))
        events = list(rng.integers(0, 2, size=8))
        a = weighted_km(times, events, [1.0] * 8)
        b = weighted_km(times, events, [3.7] * 8)
        for (t1, s1), (t2, s2) in zip(a, b):
            assert t1 == t2 and s1 == pytest.approx(s2, abs=1e-12)

    def test_unit_weights_match_textbook_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            n = int(rng.integers(2, 11))
            times = list(rng.integers(1, 15, size=n).astype(float))
            events = list(rng.integers(0, 2, size=n))
            ours = weighted_km(times, events, [1.0] * n)
            oracle = textbook_km(times, events)
            assert len(ours) == len(oracle)
            for (t1, s1), (t2, s2) in zip(ours, oracle):
                assert t1 == t2
                assert abs(s1 - s2) < 1e-12

    def test_all_censored_curve_stays_at_one(self):
        assert weighted_km([1.0, 2.0], [0, 0], [1.0, 1.0]) == []
        assert km_survival_at([], 5.0) == 1.0

    def test_step_evaluation(self):
        curve = [(1.0, 0.5), (3.0, 0.25)]
        assert km_survival_at(curve, 0.5) == 1.0
        assert km_survival_at(curve, 1.0) == 0.5
        assert km_survival_at(curve, 2.9) == 0.5
        assert km_survival_at(curve, 3.0) == 0.25


def make_case(reg_id, censor_day, event, eta=0.0, weight=1.0, retx=False,
              urgency="T", nse="none", disease="cirrhosis", reason="none",
              dialysis=False, country="NL", pediatric=False, lab=20.0,
              age=50.0, exc=0.0):
    return ImputationCase(
        registration_id=reg_id, censor_day=censor_day, event=event, eta=eta,
        ipcw_weight=weight, is_retransplant=retx, urgency=urgency,
        nse_group=nse, disease_group=disease, urgency_reason=reason,
        dialysis=dialysis, country=country, pediatric=pediatric,
        lab_meld=lab, age=age, exception_meld=exc)


class TestRiskSet:
    def test_filter_oracle_no_relaxation(self):
        case = make_case("case", 10.0, False)
        pool = [case]
        rng = np.random.default_rng(5)
        for i in range(200):
            good = i < 60
            pool.append(make_case(
                f"m{i:03d}", censor_day=float(20 + i), event=bool(i % 2),
                country="NL" if good else "DE",
                lab=20.0 if good else 30.0,
            ))
        cfg = ImputationConfig(target_non_hu=50)
        rs = build_risk_set(case, pool, cfg)
        assert rs.stage == "discrete_7"
        assert {m.registration_id for m in rs.members} == {f"m{i:03d}" for i in range(60)}

    def test_relaxation_stops_at_first_sufficient_stage(self):
        case = make_case("case", 10.0, False)
        pool = [case]
        # 10 match everything; 55 match everything except country (criterion 7).
        for i in range(10):
            pool.append(make_case(f"full{i}", 20.0 + i, True))
        for i in range(55):
            pool.append(make_case(f"part{i}", 30.0 + i, True, country="DE"))
        rs = build_risk_set(case, pool, ImputationConfig(target_non_hu=50))
        assert rs.stage == "discrete_6"
        assert len(rs.members) == 65

    def test_pediatric_always_matched(self):
        case = make_case("case", 10.0, False, pediatric=True)
        pool = [case] + [make_case(f"a{i}", 20.0 + i, True, pediatric=False)
                         for i in range(80)]
        assert build_risk_set(case, pool) is None

    def test_eta_caliper_is_hard(self):
        case = make_case("case", 10.0, False, eta=0.0)
        pool = [case] + [make_case(f"a{i}", 20.0 + i, True, eta=1.0)
                         for i in range(80)]
        assert build_risk_set(case, pool) is None

    def test_members_must_outlive_case(self):
        case = make_case("case", 10.0, False)
        pool = [case,
                make_case("dead_before", 5.0, True),
                make_case("alive_after", 25.0, True)]
        rs = build_risk_set(case, pool)
        assert [m.registration_id for m in rs.members] == ["alive_after"]

    def test_hu_target_size(self):
        case = make_case("case", 10.0, False, urgency="HU")
        pool = [case] + [make_case(f"a{i}", 20.0 + i, True, urgency="HU",
                                   exc=99.0)  # exception caliper skipped for HU
                         for i in range(35)]
        rs = build_risk_set(case, pool)
        assert rs.stage == "discrete_7" and len(rs.members) == 35

    def test_caliper_widening_stage(self):
        case = make_case("case", 10.0, False, lab=20.0)
        # Out of the base lab caliper (|26-20| = 6 > 3) and the first
        # widening (4.5) but inside the second (3 * 1.5^2 = 6.75).
        pool = [case] + [make_case(f"a{i}", 20.0 + i, True, lab=26.0)
                         for i in range(5)]
        rs = build_risk_set(case, pool, ImputationConfig(target_non_hu=4))
        assert rs.stage == "widen_2"
        assert len(rs.members) == 5


class TestImputeFuture:
    def members(self):
        return [
            make_case("m1", 30.0, True, weight=1.0),    # event at t=20
            make_case("m2", 50.0, True, weight=2.0),    # event at t=40
            make_case("m3", 200.0, False, weight=1.5),  # censored past horizon
        ]

    def test_u_one_selects_earliest_event(self):
        case = make_case("case", 10.0, False)
        rs = RiskSet("case", self.members(), "test")
        chosen, branch = impute_future(case, rs, 1.0, np.random.default_rng(1))
        assert chosen.registration_id == "m1" and branch == "event"

    def test_u_below_minimum_goes_to_horizon_branch(self):
        case = make_case("case", 10.0, False)
        rs = RiskSet("case", self.members(), "test")
        chosen, branch = impute_future(case, rs, 1e-9, np.random.default_rng(1))
        assert branch == "horizon" and chosen.registration_id == "m3"

    def test_choice_distribution_matches_jump_masses(self):
        case = make_case("case", 0.0, False)
        members = [make_case("m1", 20.0, True, weight=1.0),
                   make_case("m2", 40.0, True, weight=3.0),
                   make_case("m3", 120.0, False, weight=2.0)]
        # Weighted KM: S(20) = 1 - 1/6 = 5/6; S(40) = 5/6 * (1 - 3/5) = 1/3.
        curve = weighted_km([20.0, 40.0, 120.0], [1, 1, 0], [1.0, 3.0, 2.0])
        assert curve[0][1] == pytest.approx(5.0 / 6.0)
        assert curve[1][1] == pytest.approx(1.0 / 3.0)
        rng = np.random.default_rng(17)
        counts = {"m1": 0, "m2": 0, "m3": 0}
        n = 10_000
        for u in rng.random(n):
            rs = RiskSet("case", members, "test")
            chosen, _ = impute_future(case, rs, float(u), rng)
            counts[chosen.registration_id] += 1
        assert counts["m1"] / n == pytest.approx(1.0 - 5.0 / 6.0, abs=0.02)
        assert counts["m2"] / n == pytest.approx(5.0 / 6.0 - 1.0 / 3.0, abs=0.02)
        assert counts["m3"] / n == pytest.approx(1.0 / 3.0, abs=0.02)


def bio(reg, at, crea=2.0):
    return StatusUpdate(reg, at, "BIOMARKER", creatinine=crea, bilirubin=2.0, inr=1.5)


def exit_(reg, at, reason="D"):
    return StatusUpdate(reg, at, "EXIT", exit_reason=reason)


class TestCompleteStream:
    def setup_streams(self):
        listed = {"A": 1000.0, "B": 900.0, "C": 800.0}
        statuses = {
            "A": [bio("A", 1000.0), bio("A", 1010.0)],          # ends censored, day 10
            "B": [bio("B", 905.0), exit_("B", 930.0)],          # event day 30
            "C": [bio("C", 820.0), exit_("C", 850.0, "R")],     # event day 50
        }
        cases = {
            "A": make_case("A", 10.0, False),
            "B": make_case("B", 30.0, True),
            "C": make_case("C", 50.0, True),
        }
        return listed, statuses, cases

    def test_terminal_stream_unchanged(self):
        listed, statuses, cases = self.setup_streams()
        completed, _ = complete_stream(listed, statuses, cases, seed=1)
        assert completed["B"] == statuses["B"]
        assert completed["C"] == statuses["C"]

    def test_case_gets_terminal_tail_with_preserved_spacing(self):
        listed, statuses, cases = self.setup_streams()
        completed, report = complete_stream(listed, statuses, cases, seed=1)
        out = completed["A"]
        assert out[-1].kind == "EXIT"
        assert report.imputed == 1
        # Tail days copied on the days-since-listing axis: if B was chosen
        # its EXIT lands at day 30 -> absolute 1030; if C, day 50 -> 1050.
        assert out[-1].at in (1030.0, 1050.0)
        assert [s.at for s in out] == sorted(s.at for s in out)
        assert all(s.synthetic for s in out[2:])

    def test_hand_traced_two_member_risk_set(self):
        listed, statuses, cases = self.setup_streams()
        # Unit weights: S(20) = 0.5 at B's event, S(40) = 0 at C's event.
        # The first uniform draw decides: u > 0.5 -> B, else C.
        completed, _ = complete_stream(listed, statuses, cases, seed=1)
        rng = np.random.default_rng(np.random.SeedSequence([1, 0x1394]))
        u = float(rng.random())
        expected_exit = 1030.0 if u >= 0.5 else 1050.0
        assert completed["A"][-1].at == expected_exit

    def test_chained_imputation_through_censored_member(self):
        listed = {"A": 1000.0, "M": 900.0, "N": 800.0}
        statuses = {
            "A": [bio("A", 1000.0)],                       # censored day 0... case
            "M": [bio("M", 905.0), bio("M", 940.0)],       # censored day 40
            "N": [bio("N", 820.0), exit_("N", 860.0)],     # event day 60
        }
        cases = {
            "A": make_case("A", 5.0, False),
            "M": make_case("M", 40.0, False),
            "N": make_case("N", 60.0, True),
        }
        completed, report = complete_stream(listed, statuses, cases, seed=3)
        for reg_id in completed:
            assert completed[reg_id][-1].kind == "EXIT"
        # A's risk set = {M, N}; if M is drawn, its own completion (via N)
        # chains into A's stream.
        assert report.imputed >= 1

    def test_two_seeds_differ(self):
        listed, statuses, cases = self.setup_streams()
        outs = []
        for seed in range(12):
            completed, _ = complete_stream(listed, statuses, cases, seed=seed)
            outs.append(completed["A"][-1].at)
        assert len(set(outs)) > 1

    def test_same_seed_identical(self):
        listed, statuses, cases = self.setup_streams()
        a, _ = complete_stream(listed, statuses, cases, seed=5)
        b, _ = complete_stream(listed, statuses, cases, seed=5)
        assert [(s.at, s.kind) for s in a["A"]] == [(s.at, s.kind) for s in b["A"]]

    def test_unmatchable_case_reported(self):
        listed = {"A": 1000.0, "B": 900.0}
        statuses = {"A": [bio("A", 1000.0)], "B": [bio("B", 905.0), exit_("B", 930.0)]}
        cases = {"A": make_case("A", 10.0, False, pediatric=True),
                 "B": make_case("B", 30.0, True)}
        completed, report = complete_stream(listed, statuses, cases, seed=1)
        assert report.unmatchable == ["A"]
