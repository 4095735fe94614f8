"""Detection pipeline, JSD baseline, ranking metrics, record IO."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinemark.detect import (
    DetectionParams,
    ProbeRecord,
    average_precision,
    build_probe_series,
    detect_watermark,
    jsd_score,
    mean_average_precision,
    read_probe_records,
    write_probe_records,
    write_report,
)
from sinemark.errors import TooFewProbesError
from sinemark.keys import WatermarkConfig, generate_key, hash_values, is_selected
from sinemark.watermark import apply_watermark

# JSD of the pair (0.8,0.2) vs (0.6,0.4), natural log, computed two
# ways (scipy rel_entr and a pure-python KL): 0.5*KL(a||u)+0.5*KL(b||u)
JSD_PAIR_VALUE = 0.024157256781171366


@pytest.fixture(scope="module")
def key():
    return generate_key(2, 1000, 64, 16.0, 0, seed=11)


@pytest.fixture(scope="module")
def cfg():
    return WatermarkConfig(epsilon=0.2, tau=0.5)


def _watermarked_records(key, cfg, xs, p0=0.7):
    """Probe records equal to the victim's own watermarked outputs."""
    records = []
    for x in xs:
        y, _ = apply_watermark(key, cfg, x, np.array([p0, 1.0 - p0]))
        records.append(ProbeRecord(x=x, probs=y))
    return records


class TestProbeRecord:
    def test_exactly_one_payload(self):
        with pytest.raises(ValueError):
            ProbeRecord(x=0)
        with pytest.raises(ValueError):
            ProbeRecord(x=0, probs=np.array([0.5, 0.5]), label=1)

    def test_is_hard(self):
        assert ProbeRecord(x=0, label=1).is_hard
        assert not ProbeRecord(x=0, probs=np.array([0.5, 0.5])).is_hard


class TestBuildSeries:
    def test_keeps_only_selected(self, key, cfg):
        xs = np.arange(200)
        records = _watermarked_records(key, cfg, xs)
        series = build_probe_series(key, cfg, records)
        expected = [x for x in xs if is_selected(key, cfg, x)]
        assert len(series) == len(expected)
        np.testing.assert_array_equal(
            series.t, hash_values(key, key.v_k, np.array(expected))
        )

    def test_tau_one_keeps_everything(self, key):
        cfg1 = WatermarkConfig(epsilon=0.2, tau=1.0)
        records = _watermarked_records(key, cfg1, np.arange(50))
        assert len(build_probe_series(key, cfg1, records)) == 50

    def test_survival_fraction_near_tau(self, key, cfg):
        g = hash_values(key, key.v_s, np.arange(1000))
        assert abs(np.mean(g <= 0.5) - 0.5) <= 0.05

    def test_soft_floor(self, key, cfg):
        selected = [x for x in range(1000) if is_selected(key, cfg, x)][:7]
        records = _watermarked_records(key, cfg, selected)
        with pytest.raises(TooFewProbesError) as exc:
            build_probe_series(key, cfg, records)
        assert exc.value.n_survivors == 7 and exc.value.floor == 8

    def test_hard_floor_is_higher(self, key, cfg):
        selected = [x for x in range(1000) if is_selected(key, cfg, x)][:63]
        records = [ProbeRecord(x=x, label=0) for x in selected]
        with pytest.raises(TooFewProbesError) as exc:
            build_probe_series(key, cfg, records)
        assert exc.value.floor == 64

    def test_hard_labels_become_indicator(self, key):
        cfg1 = WatermarkConfig(epsilon=0.2, tau=1.0)
        records = [ProbeRecord(x=x, label=x % 2) for x in range(100)]
        series = build_probe_series(key, cfg1, records)
        np.testing.assert_array_equal(series.y, (np.arange(100) % 2 == 0) * 1.0)

    def test_duplicates_kept(self, key):
        cfg1 = WatermarkConfig(epsilon=0.2, tau=1.0)
        records = _watermarked_records(key, cfg1, [3] * 20)
        assert len(build_probe_series(key, cfg1, records)) == 20

    def test_label_out_of_range(self, key):
        cfg1 = WatermarkConfig(epsilon=0.2, tau=1.0)
        records = [ProbeRecord(x=x, label=5) for x in range(100)]
        with pytest.raises(ValueError, match="label"):
            build_probe_series(key, cfg1, records)

    def test_vector_length_mismatch(self, key):
        cfg1 = WatermarkConfig(epsilon=0.2, tau=1.0)
        records = [ProbeRecord(x=x, probs=np.array([0.2, 0.3, 0.5])) for x in range(30)]
        with pytest.raises(ValueError, match="length"):
            build_probe_series(key, cfg1, records)


class TestDetect:
    def test_watermarked_outputs_positive(self, key, cfg):
        records = _watermarked_records(key, cfg, np.arange(1000))
        report = detect_watermark(key, cfg, records)
        assert report.positive and report.decision == "positive"
        assert report.p_snr >= 10.0
        assert report.warning is None

    def test_unwatermarked_constant_is_degenerate_negative(self, key, cfg):
        records = [
            ProbeRecord(x=x, probs=np.array([0.7, 0.3])) for x in range(1000)
        ]
        report = detect_watermark(key, cfg, records)
        assert not report.positive
        assert report.p_snr == 0.0
        assert report.warning == "degenerate_series"

    def test_too_few_probes_negative_with_warning(self, key, cfg):
        records = _watermarked_records(key, cfg, np.arange(10))
        report = detect_watermark(key, cfg, records)
        assert report.decision == "negative"
        assert report.warning == "too_few_probes"
        assert report.p_snr == 0.0

    def test_hard_records_detectable(self, key, cfg):
        """Hard 0/1 probes carry the signal in expectation; many repeats
        stand in for the soft value."""
        rng = np.random.default_rng(6)
        records = []
        for x in range(1000):
            y, _ = apply_watermark(key, cfg, x, np.array([0.7, 0.3]))
            for _ in range(20):
                records.append(ProbeRecord(x=x, label=int(rng.random() >= y[0])))
        report = detect_watermark(key, cfg, records)
        assert report.positive

    def test_report_document_fields(self, key, cfg, tmp_path):
        records = _watermarked_records(key, cfg, np.arange(1000))
        report = detect_watermark(key, cfg, records)
        path = tmp_path / "report.json"
        write_report(report, path)
        doc = json.loads(path.read_text())
        for field in ("decision", "p_signal", "p_noise", "p_snr", "n_probes_used",
                      "threshold", "f_w", "delta", "f_max", "grid_min", "grid_max",
                      "grid_step", "warning"):
            assert field in doc
        assert doc["p_snr"] == report.p_snr
        assert doc["decision"] == "positive"

    def test_threshold_decides(self, key, cfg):
        records = _watermarked_records(key, cfg, np.arange(1000))
        report = detect_watermark(key, cfg, records)
        high = DetectionParams(threshold=report.p_snr + 1.0)
        assert not detect_watermark(key, cfg, records, high).positive


class TestEndToEndScale:
    """One soft positive and one true-label negative at full simulator scale."""

    def test_single_trial_separation(self):
        from sinemark.sim import ExperimentConfig
        from sinemark.sim.experiment import (
            _build_environment,
            _probe_records,
            _soft_positive_student,
        )
        from sinemark.sim.students import train_negative

        config = ExperimentConfig(seed=0)
        task, key, cfg, y_table, _ = _build_environment(config)
        probe_xs = np.arange(task.vocab_size)

        student = _soft_positive_student(config, task, y_table, 0)
        pos = detect_watermark(key, cfg, _probe_records(student, probe_xs),
                               config.detection)
        assert pos.positive and pos.p_snr > 15.0

        negative = train_negative(task, "true_label", seed=(0, 4, 0))
        neg = detect_watermark(key, cfg, _probe_records(negative, probe_xs),
                               config.detection)
        assert not neg.positive and neg.p_snr < 5.0


class TestJsd:
    def test_identical_lists_zero(self):
        a = [[0.8, 0.2], [0.3, 0.7]]
        assert jsd_score(a, a) == 0.0

    def test_disjoint_pair_ln2(self):
        assert jsd_score([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_frozen_pair_value(self):
        assert jsd_score([[0.8, 0.2]], [[0.6, 0.4]]) == pytest.approx(
            JSD_PAIR_VALUE, abs=1e-12
        )

    def test_mean_over_pairs(self):
        single = jsd_score([[0.8, 0.2]], [[0.6, 0.4]])
        doubled = jsd_score([[0.8, 0.2], [0.8, 0.2]], [[0.6, 0.4], [0.6, 0.4]])
        assert doubled == pytest.approx(single, abs=1e-15)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            jsd_score([[0.5, 0.5]], [[0.5, 0.5], [0.4, 0.6]])
        with pytest.raises(ValueError):
            jsd_score([], [])

    @given(
        a=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
        b=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        pa = (np.array(a) / np.sum(a)).tolist()
        pb = (np.array(b) / np.sum(b)).tolist()
        fwd = jsd_score([pa], [pb])
        assert fwd == jsd_score([pb], [pa])
        assert -1e-15 <= fwd <= math.log(2) + 1e-12


class TestAveragePrecision:
    def test_hand_example(self):
        # ranking [3, 2, 1]: precisions at the positives are 1/1 and 2/3
        assert average_precision([3, 1], [2]) == pytest.approx(5 / 6)

    def test_perfect_ranking(self):
        assert average_precision([5, 4, 3], [2, 1]) == 1.0

    def test_ties_rank_negatives_first(self):
        assert average_precision([2], [2]) == pytest.approx(0.5)

    def test_lower_is_positive(self):
        # JSD-style ranking: positives have the smallest scores
        assert average_precision([0.1, 0.2], [0.5], higher_is_positive=False) == 1.0

    def test_mean_over_trials(self):
        trials = [
            {"positive_scores": [3, 1], "negative_scores": [2]},
            {"positive_scores": [9], "negative_scores": [1]},
        ]
        assert mean_average_precision(trials) == pytest.approx((5 / 6 + 1.0) / 2)

    def test_empty_trial_rejected(self):
        with pytest.raises(ValueError):
            average_precision([], [1])
        with pytest.raises(ValueError):
            mean_average_precision([])

    @given(
        pos=st.lists(st.floats(-5, 5), min_size=1, max_size=6),
        neg=st.lists(st.floats(-5, 5), min_size=1, max_size=6),
        bump=st.floats(0.0, 3.0),
        idx=st.integers(min_value=0, max_value=5),
    )
    @settings(max_examples=150, deadline=None)
    def test_raising_a_positive_never_hurts(self, pos, neg, bump, idx):
        base = average_precision(pos, neg)
        raised = list(pos)
        raised[idx % len(pos)] += bump
        assert average_precision(raised, neg) >= base - 1e-12


class TestRecordIO:
    def test_round_trip(self, tmp_path):
        records = [
            ProbeRecord(x=4, probs=np.array([0.25, 0.75])),
            ProbeRecord(x=9, label=1),
        ]
        path = tmp_path / "probe.jsonl"
        write_probe_records(records, path)
        back = read_probe_records(path)
        assert back[0].x == 4 and not back[0].is_hard
        np.testing.assert_array_equal(back[0].probs, records[0].probs)
        assert back[1].x == 9 and back[1].label == 1

    def test_full_precision_round_trip(self, tmp_path):
        probs = np.array([1 / 3, 2 / 3])
        probs = probs / probs.sum()
        path = tmp_path / "probe.jsonl"
        write_probe_records([ProbeRecord(x=0, probs=probs)], path)
        back = read_probe_records(path)
        np.testing.assert_array_equal(back[0].probs, probs)

    @pytest.mark.parametrize(
        "line,fragment",
        [
            ("not json", "line 1"),
            ('{"probs": [0.5, 0.5]}', "'x'"),
            ('{"x": 1}', "exactly one"),
            ('{"x": 1, "probs": [0.5, 0.5], "label": 0}', "exactly one"),
            ('{"x": true, "probs": [0.5, 0.5]}', "integer"),
            ('{"x": 1, "label": true}', "line 1"),
        ],
    )
    def test_malformed_lines_name_position(self, tmp_path, line, fragment):
        path = tmp_path / "probe.jsonl"
        path.write_text(line + "\n")
        with pytest.raises(ValueError, match=fragment):
            read_probe_records(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "probe.jsonl"
        path.write_text('{"x": 1, "label": 0}\n\n{"x": 2, "label": 1}\n')
        assert len(read_probe_records(path)) == 2
