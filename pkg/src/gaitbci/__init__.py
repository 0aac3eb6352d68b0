"""EEG-driven control of a simulated robotic gait orthosis: training, online decoding, plant and evaluation."""
from .core import CueSchedule, LabeledEpoch, Recording, State, SynthConfig, generate_synthetic, label_epochs
from .decoder import DecoderConfig, OnlineDecoder, StateTrace, run_stream
from .evaluation import (ARNullModel, SessionReport, calibrate, count_events, cross_correlate,
                         evaluate_session, fit_null, monte_carlo_p)
from .plant import PlantConfig, RoGOPlant, walking_timeline
from .training import PredictionModel, TrainConfig, train

__version__ = "0.1.0"
