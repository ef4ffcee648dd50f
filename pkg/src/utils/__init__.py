"""Utils package"""
from .logger import logger
from .errors import SeqAttrError
from .metrics import mean_area, selectivity_area

__all__ = ['logger', 'SeqAttrError', 'mean_area', 'selectivity_area']
