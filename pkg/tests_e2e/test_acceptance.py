import logging
import math
from typing import Dict, Tuple

import pytest
from dotenv import load_dotenv

from lumino.stream_cert.adversary import emit_trace, load_trace, validate_trace_budget
from lumino.stream_cert.certificate import ThreatModel
from lumino.stream_cert.constants import BUDGET_TOLERANCE, STDERR_MULTIPLIER
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.harness import RunResult, run_simulation
from lumino.stream_cert.special import erf_approx
from utils import acceptance_config, read_outputs

load_dotenv('./.env', override=True)

SEED = 0
W = 2
SIGMA = 1.0

logger = logging.getLogger("StreamCertE2E")


def run_once(output_dir) -> Tuple[RunResult, Dict[ThreatModel, RunResult]]:
    config = acceptance_config(output_dir, seed=SEED)
    return run_simulation(config, logger=logger, event_handler=EventHandler(logger), emit_traces=True)


@pytest.fixture(scope="module")
def simulation(tmp_path_factory):
    """Train, certify and attack once; shared by all checks below"""
    output_dir = tmp_path_factory.mktemp("acceptance")
    certify, attacks = run_once(output_dir)
    return output_dir, certify, attacks


class TestAcceptance:
    def test_attacked_performance_respects_certificate(self, simulation):
        _, certify, attacks = simulation
        assert set(attacks) == {ThreatModel.ONCE, ThreatModel.WINDOW}
        for mode, result in attacks.items():
            assert [row.eps for row in result.rows] == [0.0, 0.25, 0.5, 1.0]
            for row in result.rows:
                line = max(0.0, row.clean_z_tilde - W * erf_approx(row.eps / (2 * math.sqrt(2)) / SIGMA))
                assert row.certified_lower == pytest.approx(line, abs=1e-12)
                margin = STDERR_MULTIPLIER * row.combined_stderr()
                assert row.attacked_z_tilde >= row.certified_lower - margin, \
                    f"{mode.value} eps={row.eps}: attacked {row.attacked_z_tilde} below certified {row.certified_lower}"
        assert all(row.certified_lower <= row.clean_z_tilde for row in certify.rows)

    def test_traces_are_budget_compliant(self, simulation, tmp_path):
        _, _, attacks = simulation
        audited = 0
        for result in attacks.values():
            for key, trace in result.traces.items():
                # Reloaded from disk
                report = validate_trace_budget(load_trace(emit_trace(trace, tmp_path / result.tag / key)))
                assert report['compliant'] and report['prefix_compliant'], f"{result.tag}/{key}"
                assert report['average'] <= trace.epsilon + BUDGET_TOLERANCE
                assert report['worst_prefix_average'] <= trace.epsilon + BUDGET_TOLERANCE
                audited += 1
        assert audited == 2 * 2 * 4, "Expected undefended and smoothed traces for each mode and eps"

    def test_per_window_attack_is_stronger(self, simulation):
        _, _, attacks = simulation
        for once, window in zip(attacks[ThreatModel.ONCE].rows, attacks[ThreatModel.WINDOW].rows):
            margin = STDERR_MULTIPLIER * math.sqrt(once.attacked_z_tilde_stderr ** 2
                                                   + window.attacked_z_tilde_stderr ** 2)
            assert window.attacked_z_tilde <= once.attacked_z_tilde + margin, f"eps={once.eps}"

    def test_undefended_attacks_track_budget(self, simulation):
        _, _, attacks = simulation
        for mode, result in attacks.items():
            zero = result.rows[0]
            assert zero.attacked_z == zero.clean_z, f"{mode.value}: zero budget changed the outcome"
            for smaller, larger in zip(result.rows, result.rows[1:]):
                # Greedy attacks are not optimal; 0.02 slack
                assert larger.attacked_z <= smaller.attacked_z + 0.02, \
                    f"{mode.value}: attacked Z rose from {smaller.attacked_z} to {larger.attacked_z}"

    def test_results_are_reproducible(self, simulation, tmp_path_factory):
        output_dir, _, _ = simulation
        repeat_dir = tmp_path_factory.mktemp("acceptance_repeat")
        run_once(repeat_dir)
        first, second = read_outputs(output_dir), read_outputs(repeat_dir)
        assert set(first) == {'results_acceptance_certify.csv', 'results_acceptance_once.csv',
                              'results_acceptance_window.csv'}
        assert first == second, "Repeated run with the same seed changed the results"
