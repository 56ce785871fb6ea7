"""The ten acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line for its criterion.  The full profile runs
for close to an hour on one core; GLFIELD_ACCEPTANCE_PROFILE=smoke selects the
reduced profile (about a minute).
"""
import os

import pytest

from glfield.acceptance import CRITERIA, PROFILES, Context, run_criterion

PROFILE = os.environ.get("GLFIELD_ACCEPTANCE_PROFILE", "full")
if PROFILE not in PROFILES:
    raise ValueError(f"GLFIELD_ACCEPTANCE_PROFILE must be one of {sorted(PROFILES)}")


@pytest.fixture(scope="module")
def ctx():
    # shared so that the stiffness estimate and the dipole ensemble are computed once
    return Context(PROFILE, seed=0, threads=None)


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, ctx, capsys):
    res = run_criterion(number, ctx)
    with capsys.disabled():
        print(f"\n[{PROFILE}] {res.line()}  [{res.elapsed:.0f}s]")
        for note in res.notes:
            print(f"    {note}")
    failed = [c.name for c in res.checks if not c.passed]
    assert res.passed, f"criterion {number} failed: {', '.join(failed)}"
