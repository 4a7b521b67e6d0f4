"""Weakly supervised active speaker localization toolkit.

Learns visual representations for detecting the presence of speech from
video frames alone, then exploits them to localize active speakers via
class activation maps and a multiple-instance-learning head, without any
bounding-box supervision.
"""

__version__ = "0.1.0"
