"""Facial affect analytics over per-frame action-unit streams."""

from .composites import CombinationRule, RuleSet, composite_score, mine_significant_combinations
from .config import EngineConfig, config_from_dict, load_config
from .emotions import emotion_scores, neutral_score
from .evaluation import LabeledCorpus, roc_ad, roc_auc, roc_sent, slice_report
from .expressive import attention, blink_rate, detect_blinks
from .pipeline import analyze_observations, analyze_track
from .postprocess import PostprocessConfig, baseline_normalize, postprocess_stream, soft_threshold
from .quality import high_freq_power, quality_report
from .stream import AuScores, FrameObservation, MetricFrame, parse_frame_stream, write_frame_stream
from .synth import ScenarioSpec, generate_ad_corpus, generate_stream
from .tracking import TrackOrchestrator, estimate_head_pose, schedule_detection

__version__ = "0.1.0"
