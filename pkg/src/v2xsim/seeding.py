"""Stable sub-seeding: one independent stream per (agent, purpose, frame)."""

from __future__ import annotations

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(master, agent_id=0, purpose="", frame=0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(agent_id), tag_id(purpose), int(frame)])


def rng_for(master, agent_id=0, purpose="", frame=0) -> np.random.Generator:
    """Generator keyed by the master seed and the stream coordinates.

    Streams never share state, so adding an agent or a purpose leaves every
    other stream untouched.
    """
    return np.random.default_rng(seed_sequence(master, agent_id, purpose, frame))
