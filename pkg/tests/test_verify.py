"""Verification suites run clean on a correct build and catch injected bugs."""

import splatnet.splat as splat_mod
from splatnet.verify import (
    EQUIVALENCE_GRID,
    run_attention,
    run_equivalence,
    run_gradcheck,
    run_loss,
    run_schedule,
    run_suites,
)


def test_grid_is_the_documented_27_points():
    assert len(EQUIVALENCE_GRID) == 27
    assert (2, 8, 32) not in EQUIVALENCE_GRID
    assert (4, 4, 8) in EQUIVALENCE_GRID


def test_equivalence_suite_passes():
    results = run_equivalence(seed=0)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    # one diff row and one round-trip row per grid point
    assert len(results) == 2 * 27


def test_attention_suite_passes():
    results = run_attention(seed=0)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


def test_schedule_and_loss_suites_pass():
    assert all(r.passed for r in run_schedule())
    assert all(r.passed for r in run_loss(seed=0))


def test_gradcheck_suite_passes():
    results = run_gradcheck(seed=0)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


def test_run_suites_aggregates():
    rows = run_suites(["schedule", "loss"])
    assert len(rows) == len(run_schedule()) + len(run_loss(0))


class TestMutationFixtures:
    """Deliberately broken math must be caught by the corresponding suite."""

    def test_sign_flip_in_weighted_fuse_fails_equivalence(self, monkeypatch):
        original = splat_mod.weighted_fuse
        monkeypatch.setattr(splat_mod, "weighted_fuse", lambda u, a: -original(u, a))
        results = run_equivalence(seed=0)
        diffs = [r for r in results if r.name.startswith("equivalence")]
        assert any(not r.passed for r in diffs)

    def test_unnormalized_weights_fail_attention(self, monkeypatch):
        original = splat_mod.r_softmax
        monkeypatch.setattr(splat_mod, "r_softmax",
                            lambda logits, radix: 1.1 * original(logits, radix))
        results = run_attention(seed=0)
        assert any(not r.passed for r in results)

    def test_wrong_permutation_fails_equivalence(self, monkeypatch):
        def identity_perm(params, cfg, direction):
            return {k: v.copy() for k, v in params.items()}

        import splatnet.verify as verify_mod

        monkeypatch.setattr(verify_mod, "permute_params", identity_perm)
        results = verify_mod.run_equivalence(seed=0)
        diffs = [r for r in results if r.name.startswith("equivalence")]
        assert any(not r.passed for r in diffs)


def test_check_result_lines_name_max_error():
    results = run_equivalence(seed=0)[:2]
    line = results[0].line()
    assert "equivalence R=1 K=1 C=8" in line
    assert "threshold" in line
