"""
Models package - the slot recognizer and its file format
"""
from src.models.base_recognizer import BaseRecognizer, BackwardRule, GlobalScore, LocalScore
from src.models.model_io import load_model, save_model
from src.models.slot_net import SlotNet, decode, forward, score, score_gradient

__all__ = [
    'BaseRecognizer',
    'BackwardRule',
    'GlobalScore',
    'LocalScore',
    'SlotNet',
    'decode',
    'forward',
    'load_model',
    'save_model',
    'score',
    'score_gradient'
]
