# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Scripted synthetic tracking sequences with known ground truth.

People walk in straight lines across a 1920 x 1080 image. The first two cross each other in the same
lane; the others keep lanes of their own. One person can be hidden for a few frames, during which it has
no detection and its ground truth is marked invisible.
"""

import os
from typing import List, NamedTuple, Tuple

import numpy as np

from msdoas.core import BBox
from msdoas.exceptions import ConfigValidationError
from msdoas.mot_metrics import GtEntry, write_gt
from msdoas.tracker import DetectionRecord, write_detections

IMAGE_WIDTH = 1920
BOX_WIDTH = 60.0
BOX_HEIGHT = 150.0


class ScenarioConfig(NamedTuple):
    """Args:
        identities (int): Number of people; ground truth ids are 1 to ``identities``.
        frames (int): Sequence length.
        occluded_identity (int): The ground truth id hidden during the occlusion, 0 for none.
        occlusion_start (int): First hidden frame.
        occlusion_length (int): Number of hidden frames.
        crossing (bool): Whether people 1 and 2 walk towards each other in a shared lane.
        box_noise (float): Standard deviation, in pixels, of detection box jitter.
        confidence (float): Detector confidence of every detection.
        seed (int): Seed of speeds, start positions and jitter.
    """
    identities: int = 3
    frames: int = 100
    occluded_identity: int = 3
    occlusion_start: int = 40
    occlusion_length: int = 5
    crossing: bool = True
    box_noise: float = 1.0
    confidence: float = 0.9
    seed: int = 0

    def validate(self):
        checks = (
            (self.identities >= 1, 'identities >= 1'),
            (self.frames >= 1, 'frames >= 1'),
            (0 <= self.occluded_identity <= self.identities, '0 <= occluded_identity <= identities'),
            (self.occlusion_length >= 0, 'occlusion_length >= 0'),
            (self.occlusion_start >= 1, 'occlusion_start >= 1'),
            (not self.crossing or self.identities >= 2, 'identities >= 2 when crossing'),
            (self.box_noise >= 0, 'box_noise >= 0'),
        )
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'scenario parameter must satisfy {constraint}')
        return self


class Scenario(NamedTuple):
    gt: List[GtEntry]
    detections: List[DetectionRecord]


def _paths(cfg: ScenarioConfig, rng: np.random.Generator):
    """Start corner and per-frame velocity of every person."""
    span = IMAGE_WIDTH - 2 * 100.0 - BOX_WIDTH
    paths = []
    for k in range(cfg.identities):
        speed = rng.uniform(0.6, 0.9) * span / max(cfg.frames - 1, 1)
        if cfg.crossing and k < 2:
            # Shared lane, offset so the boxes overlap heavily while passing.
            top = 300.0 + 20.0 * k
            left, vx = (100.0, speed) if k == 0 else (100.0 + span, -speed)
        else:
            top = 300.0 + 220.0 * (k - (1 if cfg.crossing else 0))
            left, vx = 100.0 + rng.uniform(0.0, 0.1) * span, speed
        paths.append((left, top, vx))
    return paths


def crossing_sequence(cfg: ScenarioConfig = ScenarioConfig()) -> Scenario:
    """Builds ground truth and detections of a scripted sequence; detections carry their ground truth id."""
    cfg = cfg.validate()
    rng = np.random.default_rng([cfg.seed, 4])
    paths = _paths(cfg, rng)
    hidden = range(cfg.occlusion_start, cfg.occlusion_start + cfg.occlusion_length)
    gt, detections = [], []
    for frame in range(1, cfg.frames + 1):
        order = 0
        for k, (left, top, vx) in enumerate(paths):
            identity = k + 1
            bbox = BBox(left + vx * (frame - 1), top, BOX_WIDTH, BOX_HEIGHT)
            occluded = identity == cfg.occluded_identity and frame in hidden
            gt.append(GtEntry(frame, identity, bbox, 1, 1, 0.0 if occluded else 1.0))
            jitter = rng.normal(0.0, cfg.box_noise, 2) if cfg.box_noise else np.zeros(2)
            if not occluded:
                detections.append(DetectionRecord(frame, identity, bbox.translated(*jitter), cfg.confidence, order))
                order += 1
    return Scenario(gt, detections)


def write_scenario(scenario: Scenario, directory) -> Tuple[str, str]:
    """Writes ``gt/gt.txt`` and ``det/det.txt`` under ``directory`` and returns their paths."""
    gt_path = os.path.join(directory, 'gt', 'gt.txt')
    det_path = os.path.join(directory, 'det', 'det.txt')
    os.makedirs(os.path.dirname(gt_path), exist_ok=True)
    os.makedirs(os.path.dirname(det_path), exist_ok=True)
    write_gt(scenario.gt, gt_path)
    write_detections(scenario.detections, det_path)
    return gt_path, det_path
