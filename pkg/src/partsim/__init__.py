"""Deterministic round-based simulator for a partition-tolerant ledger:
chain accounting, partition detectors, a peer network engine, and an
experiment harness."""

from .chain import (Block, BlockTree, ChainError, DuplicateBlock,
                    SplitContext, Transaction, balance, genesis_block,
                    is_valid, main_chain, mergeable, parse_tree,
                    serialize_tree)
from .detectors import DetectorSchedule, GroundTruth, LieWindow, WagePeerPlan
from .engine import RunResult, Simulation, run_experiment
from .scenarios import (PRESETS, ConfigInvalid, MergeSpec, ScenarioConfig,
                        SplitSpec, load_scenario, preset)

__all__ = [
    "Block", "BlockTree", "ChainError", "DuplicateBlock", "SplitContext",
    "Transaction", "balance", "genesis_block", "is_valid", "main_chain",
    "mergeable", "parse_tree", "serialize_tree",
    "DetectorSchedule", "GroundTruth", "LieWindow", "WagePeerPlan",
    "RunResult", "Simulation", "run_experiment",
    "PRESETS", "ConfigInvalid", "MergeSpec", "ScenarioConfig", "SplitSpec",
    "load_scenario", "preset",
]

__version__ = "0.1.0"
