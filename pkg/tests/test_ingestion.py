import os

import pytest

from elasim.core import InputError, parse_timestamp
from elasim.generator import GeneratorConfig, generate_bundle
from elasim.ingestion import load_bundle, load_cases, load_pool

from conftest import WINDOW

T0 = WINDOW[0]


def write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


DONOR_HEADER = ("donor_id,reported_at,country,center,hospital,blood_group,"
                "age,weight_kg,height_cm,death_cause,dcd\n")
REG_HEADER = ("patient_id,registration_id,listed_at,country,center,blood_group,"
              "age_at_listing,weight_kg,sex,disease_group,is_retransplant\n")
STATUS_HEADER = ("registration_id,at,kind,creatinine,bilirubin,inr,dialysis,"
                 "sodium,exception_id,exception_action,urgency,exit_reason,"
                 "max_donor_age,accept_dcd,accept_split,accept_rescue,"
                 "min_donor_weight,max_donor_weight\n")


@pytest.fixture
def files(tmp_path):
    donors = write(tmp_path / "donors.csv", DONOR_HEADER
                   + "D1,2016-03-01,NL,NLRO,H1,A,45,80,178,CVA,0\n")
    regs = write(tmp_path / "regs.csv", REG_HEADER
                 + "P1,R1,2015-10-01,NL,NLRO,A,52,78,M,cirrhosis,0\n")
    statuses = write(tmp_path / "statuses.csv", STATUS_HEADER
                     + "R1,2015-10-01,URGENCY,,,,,,,,T,,,,,,,\n"
                     + "R1,2015-10-02,BIOMARKER,2.0,3.0,1.5,0,,,,,,,,,,,\n")
    return donors, regs, statuses, tmp_path


class TestLoadBundle:
    def test_valid_bundle_loads(self, files):
        donors, regs, statuses, _ = files
        bundle = load_bundle(donors, regs, statuses, WINDOW)
        assert len(bundle.donors) == 1
        assert set(bundle.registrations) == {"R1"}

    def test_missing_file_is_fatal(self, files):
        donors, regs, statuses, tmp = files
        with pytest.raises(Exception) as exc:
            load_bundle(str(tmp / "nope.csv"), regs, statuses, WINDOW)
        assert "nope.csv" in str(exc.value)

    def test_donor_before_window_excluded(self, files, tmp_path):
        _, regs, statuses, _ = files
        donors = write(tmp_path / "d2.csv", DONOR_HEADER
                       + "D1,2015-12-31 23:59:59,NL,NLRO,H1,A,45,80,178,CVA,0\n")
        bundle = load_bundle(donors, regs, statuses, WINDOW)
        assert bundle.donors == [] and bundle.excluded_donors == 1

    def test_registration_without_statuses_is_fatal(self, files, tmp_path):
        donors, _, statuses, _ = files
        regs = write(tmp_path / "r2.csv", REG_HEADER
                     + "P1,R1,2015-10-01,NL,NLRO,A,52,78,M,cirrhosis,0\n"
                     + "P2,R2,2015-11-01,NL,NLRO,A,40,70,F,hcc,0\n")
        with pytest.raises(InputError, match="registration without statuses"):
            load_bundle(donors, regs, statuses, WINDOW)

    def test_unknown_registration_in_statuses_is_fatal(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s2.csv", STATUS_HEADER
                         + "RX,2015-10-01,URGENCY,,,,,,,,T,,,,,,,\n")
        with pytest.raises(InputError, match="row 2.*unknown registration"):
            load_bundle(donors, regs, statuses, WINDOW)

    def test_unordered_statuses_fatal_with_row_number(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s3.csv", STATUS_HEADER
                         + "R1,2015-10-02,URGENCY,,,,,,,,T,,,,,,,\n"
                         + "R1,2015-10-01,BIOMARKER,2.0,3.0,1.5,0,,,,,,,,,,,\n")
        with pytest.raises(InputError, match="row 3.*out of time order"):
            load_bundle(donors, regs, statuses, WINDOW)

    def test_status_after_exit_fatal(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s4.csv", STATUS_HEADER
                         + "R1,2015-10-01,URGENCY,,,,,,,,T,,,,,,,\n"
                         + "R1,2015-10-02,EXIT,,,,,,,,,D,,,,,,\n".replace(",D,", ",,D,")
                         )
        # EXIT row then a later biomarker.
        statuses = write(tmp_path / "s4.csv", STATUS_HEADER
                         + "R1,2015-10-01,URGENCY,,,,,,,,T,,,,,,,\n"
                         + "R1,2015-10-02,EXIT,,,,,,,,,D,,,,,,\n"
                         + "R1,2015-10-03,BIOMARKER,2.0,3.0,1.5,0,,,,,,,,,,,\n")
        with pytest.raises(InputError, match="after EXIT"):
            load_bundle(donors, regs, statuses, WINDOW)

    def test_bad_blood_group_named_with_row(self, files, tmp_path):
        _, regs, statuses, _ = files
        donors = write(tmp_path / "d3.csv", DONOR_HEADER
                       + "D1,2016-03-01,NL,NLRO,H1,Q,45,80,178,CVA,0\n")
        with pytest.raises(InputError, match="row 2"):
            load_bundle(donors, regs, statuses, WINDOW)

    def test_exited_before_window_excluded(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s5.csv", STATUS_HEADER
                         + "R1,2015-10-01,URGENCY,,,,,,,,T,,,,,,,\n"
                         + "R1,2015-11-01,EXIT,,,,,,,,,D,,,,,,\n")
        bundle = load_bundle(donors, regs, statuses, WINDOW)
        assert bundle.registrations == {}
        assert bundle.excluded_registrations == 1

    def test_never_active_excluded(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s6.csv", STATUS_HEADER
                         + "R1,2015-10-01,URGENCY,,,,,,,,NT,,,,,,,\n")
        bundle = load_bundle(donors, regs, statuses, WINDOW)
        assert bundle.registrations == {}

    def test_active_within_window_included(self, files, tmp_path):
        donors, regs, _, _ = files
        statuses = write(tmp_path / "s7.csv", STATUS_HEADER
                         + "R1,2015-10-01,URGENCY,,,,,,,,NT,,,,,,,\n"
                         + "R1,2016-02-01,URGENCY,,,,,,,,T,,,,,,,\n")
        bundle = load_bundle(donors, regs, statuses, WINDOW)
        assert set(bundle.registrations) == {"R1"}


class TestGeneratorRoundTrip:
    def test_generated_bundle_loads_clean(self, tmp_path):
        cfg = GeneratorConfig(window_start="2016-01-01", window_end="2016-05-31",
                              donor_rate_per_day=0.7, candidate_rate_per_day=1.5,
                              censor_fraction=0.2, pool_size=40)
        out = tmp_path / "gen"
        info = generate_bundle(cfg, seed=9, out_dir=str(out))
        assert info["donors"] > 50 and info["registrations"] > 150
        window = (parse_timestamp("2016-01-01"), parse_timestamp("2016-05-31"))
        bundle = load_bundle(str(out / "donors.csv"), str(out / "registrations.csv"),
                             str(out / "statuses.csv"), window)
        assert bundle.diagnostics == []
        assert len(bundle.donors) == info["donors"]
        pool = load_pool(str(out / "pool_registrations.csv"),
                         str(out / "pool_statuses.csv"))
        assert len(pool) == 40
        cases = load_cases(str(out / "cases.csv"))
        assert set(cases) == {f"R{i+1:05d}" for i in range(info["registrations"])}

    def test_zero_rate_produces_empty_loadable_files(self, tmp_path):
        cfg = GeneratorConfig(donor_rate_per_day=0.0, candidate_rate_per_day=0.0,
                              pool_size=5)
        out = tmp_path / "empty"
        info = generate_bundle(cfg, seed=1, out_dir=str(out))
        assert info == {"donors": 0, "registrations": 0}
        window = (parse_timestamp("2016-01-01"), parse_timestamp("2017-12-31"))
        bundle = load_bundle(str(out / "donors.csv"), str(out / "registrations.csv"),
                             str(out / "statuses.csv"), window)
        assert bundle.donors == [] and bundle.registrations == {}

    def test_same_seed_identical_bytes(self, tmp_path):
        cfg = GeneratorConfig(window_start="2016-01-01", window_end="2016-03-31",
                              donor_rate_per_day=0.5, candidate_rate_per_day=1.0,
                              pool_size=20)
        for name, seed in (("a", 4), ("b", 4), ("c", 5)):
            generate_bundle(cfg, seed=seed, out_dir=str(tmp_path / name))

        def blob(name):
            parts = []
            for f in ("donors.csv", "registrations.csv", "statuses.csv",
                      "pool_registrations.csv", "pool_statuses.csv", "cases.csv"):
                parts.append(open(tmp_path / name / f, "rb").read())
            return b"".join(parts)

        assert blob("a") == blob("b")
        assert blob("a") != blob("c")
