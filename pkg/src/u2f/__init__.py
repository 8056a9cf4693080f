"""Formant regression from grayscale tongue video, LPC formant analysis and
cascade vowel synthesis, in plain numpy."""
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import FormantTrajectory, Waveform, extract_formant_trajectory
from .klatt import SynthConfig, synthesize_vowel_trajectory
from .model import U2FConfig, U2FNet, ablated, build_model
from .saliency import compute_saliency
from .train import evaluate, train_loop

__all__ = [
    "FormantTrajectory", "SynthConfig", "U2FConfig", "U2FNet", "Waveform", "ablated",
    "build_model", "compute_saliency", "evaluate", "extract_formant_trajectory",
    "load_checkpoint", "save_checkpoint", "synthesize_vowel_trajectory", "train_loop",
]
