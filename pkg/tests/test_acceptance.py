"""Acceptance criteria 1-9; each test prints one PASS/FAIL line to the terminal."""
import pytest

from graphfuse import acceptance as acc


@pytest.fixture
def report(capsys):
    def emit(result):
        with capsys.disabled():
            print("\n" + result.line())
        assert result.passed, result.detail
    return emit


@pytest.fixture(scope="module")
def ablation():
    return acc.ablation_runs()


def test_criterion_1_ccc_closed_forms(report):
    report(acc.check_ccc_closed_forms())


def test_criterion_2_gradient_soundness(report):
    report(acc.check_gradients())


def test_criterion_3_attention_and_adjacency_invariants(report):
    report(acc.check_invariants())


def test_criterion_4_relabeling_equivariance(report):
    report(acc.check_equivariance())


def test_criterion_5_overfit_sanity(report):
    report(acc.check_overfit())


@pytest.mark.slow
def test_criterion_6_fusion_advantage(report, ablation):
    report(acc.check_fusion_advantage(ablation))


@pytest.mark.slow
def test_criterion_7_ablation_ordering(report, ablation):
    report(acc.check_ablation_ordering(ablation))


def test_criterion_8_determinism(report):
    report(acc.check_determinism())


def test_criterion_9_od_edge_equivalence(report):
    report(acc.check_od_edge_equivalence())
