"""Timestamped sensor events exchanged between producers and the fusion loop."""

from __future__ import annotations

from typing import NamedTuple, Union

import numpy as np

from .geodesy import GeodeticPosition
from .imu import AttitudeMeasurement, ImuSample
from .vision import VisionDelta

# merge priority for events sharing a timestamp
GPS, IMU, VISION, ATTITUDE = 0, 1, 2, 3
SOURCE_NAMES = {GPS: "gps", IMU: "imu", VISION: "vision", ATTITUDE: "attitude"}


class GpsFix(NamedTuple):
    position: GeodeticPosition
    satellites: int


Payload = Union[GpsFix, ImuSample, VisionDelta, AttitudeMeasurement]


class SensorEvent(NamedTuple):
    t: float
    source: int
    payload: Payload

    def sort_key(self):
        return (self.t, self.source)


class ImuBatch(NamedTuple):
    """A batch-averaged, bias-corrected IMU sample with the attitude after it."""

    sample: ImuSample
    attitude: np.ndarray  # roll, pitch, yaw
    raw_count: int
