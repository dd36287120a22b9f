"""Quantum-trajectory simulation of atom-cavity teleportation with photon-loss compensation."""

from .calibrate import CalibrationReport, calibrate_schedule
from .experiment import CampaignConfig, CampaignSummary, Sweep, SweepVar, run_campaign, sample_input_state
from .hilbert import JointBasis, QubitState, SiteBasis
from .model import LaserSetting, Model, PhysicalParams
from .protocol import ProtocolKind, StageSchedule, run_protocol
from .trajectory import DetectorModel, RngStream

__all__ = [
    "CalibrationReport", "CampaignConfig", "CampaignSummary", "DetectorModel", "JointBasis",
    "LaserSetting", "Model", "PhysicalParams", "ProtocolKind", "QubitState", "RngStream",
    "SiteBasis", "StageSchedule", "Sweep", "SweepVar", "calibrate_schedule", "run_campaign",
    "run_protocol", "sample_input_state",
]
