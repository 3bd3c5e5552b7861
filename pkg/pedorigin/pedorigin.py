"""
Module for inferring pedestrian origin distributions from density heatmaps
"""

from .analysis import *
from .exceptions import *
from .floorfield import *
from .forest import *
from .heatmap import *
from .ingest import *
from .pipeline import *
from .scenario import *
from .simulator import *
