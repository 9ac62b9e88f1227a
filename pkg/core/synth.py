"""
Deterministic synthetic captioning corpus.

Each video is a short program of latent events. An event emits a few frames
of (event template + gaussian noise); its caption phrase has two synonymous
wordings, and the program is verbalized through one of several connector
templates, so every video carries several valid paraphrases.
"""

import itertools
import json
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .models import ManifestEntry, SynthSpec
from .textdata import write_features, write_manifest

logger = logging.getLogger(__name__)

# (subject wordings, verb) per latent event
EVENT_PHRASES: Tuple[Tuple[Tuple[str, str], str], ...] = (
    (("a man", "a person"), "runs"),
    (("a dog", "a puppy"), "jumps"),
    (("a woman", "a lady"), "sings"),
    (("a cat", "a kitten"), "sleeps"),
    (("a boy", "a kid"), "swims"),
    (("a car", "a vehicle"), "drives"),
    (("a girl", "a child"), "dances"),
    (("a chef", "a cook"), "stirs"),
    (("a bird", "a sparrow"), "flies"),
    (("a horse", "a pony"), "gallops"),
    (("a player", "an athlete"), "kicks"),
    (("a baby", "an infant"), "cries"),
)

CONNECTOR_TEMPLATES = ("{} then {}", "{} and then {}", "first {} then {}")

MANIFEST_NAME = "manifest.jsonl"
SPEC_NAME = "synth_spec.json"
FEATURE_DIR = "features"

Program = Tuple[int, ...]


def _join(template: str, phrases: Sequence[str]) -> str:
    text = phrases[0]
    for phrase in phrases[1:]:
        text = template.format(text, phrase)
    # "first" prefixes only once even for programs longer than two events
    if template.startswith("first") and len(phrases) > 2:
        text = "first " + text.replace("first ", "")
    return text


def caption_templates(program: Program) -> List[str]:
    """Every caption the generator may emit for ``program``, sorted."""
    realizations = set()
    wordings = [EVENT_PHRASES[event][0] for event in program]
    for template in CONNECTOR_TEMPLATES:
        for choice in itertools.product(*wordings):
            phrases = [f"{subject} {EVENT_PHRASES[event][1]}" for subject, event in zip(choice, program)]
            realizations.add(_join(template, phrases) if len(phrases) > 1 else phrases[0])
    return sorted(realizations)


class SyntheticCorpus:
    """Generates programs, frame features and paraphrased captions from a ``SynthSpec``."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        template_rng = np.random.default_rng([spec.seed, 0])
        shape = (spec.alphabet, spec.feature_dim)
        self.appearance_templates = template_rng.normal(0.0, 1.0, size=shape)
        self.motion_templates = template_rng.normal(0.0, 1.0, size=shape)

    def programs(self) -> List[Program]:
        rng = np.random.default_rng([self.spec.seed, 1])
        if self.spec.distinct_programs:
            radix = (self.spec.alphabet,) * self.spec.events
            codes = rng.choice(self.spec.alphabet ** self.spec.events, size=self.spec.n_videos, replace=False)
            return [tuple(int(e) for e in np.unravel_index(int(code), radix)) for code in codes]
        return [
            tuple(int(e) for e in rng.integers(0, self.spec.alphabet, size=self.spec.events))
            for _ in range(self.spec.n_videos)
        ]

    def frames(self, program: Program, rng: np.random.Generator) -> np.ndarray:
        """[n x 2d] matrix laid out as appearance ∘ motion."""
        rows = []
        for event in program:
            for _ in range(self.spec.frames_per_event):
                appearance = self.appearance_templates[event] + rng.normal(0.0, 1.0, self.spec.feature_dim) * self.spec.sigma
                motion = self.motion_templates[event] + rng.normal(0.0, 1.0, self.spec.feature_dim) * self.spec.sigma
                rows.append(np.concatenate([appearance, motion]))
        return np.stack(rows)

    def captions(self, program: Program, rng: np.random.Generator) -> List[str]:
        pool = caption_templates(program)
        count = min(self.spec.paraphrases, len(pool))
        picks = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in sorted(picks)]

    def splits(self) -> List[str]:
        n = self.spec.n_videos
        n_test = int(round(self.spec.test_fraction * n))
        n_val = int(round(self.spec.val_fraction * n))
        order = np.random.default_rng([self.spec.seed, 2]).permutation(n)
        labels = ["train"] * n
        for position, video in enumerate(order):
            if position < n_test:
                labels[video] = "test"
            elif position < n_test + n_val:
                labels[video] = "val"
        return labels

    def write(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        (out_dir / FEATURE_DIR).mkdir(parents=True, exist_ok=True)

        noise_rng = np.random.default_rng([self.spec.seed, 3])
        caption_rng = np.random.default_rng([self.spec.seed, 4])
        entries = []
        for index, (program, split) in enumerate(zip(self.programs(), self.splits())):
            video_id = f"vid{index:04d}"
            relative = f"{FEATURE_DIR}/{video_id}.vfea"
            write_features(out_dir / relative, self.frames(program, noise_rng))
            entries.append(
                ManifestEntry(
                    video_id=video_id,
                    feature_path=relative,
                    captions=self.captions(program, caption_rng),
                    split=split,
                )
            )

        manifest = out_dir / MANIFEST_NAME
        write_manifest(manifest, entries)
        meta = {"spec": self.spec.model_dump(), "appearance_dim": self.spec.feature_dim}
        (out_dir / SPEC_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("wrote %d synthetic videos to %s", len(entries), out_dir)
        return manifest


def gen_synth(spec: SynthSpec, out_dir: Union[str, Path]) -> Path:
    """Write manifest, feature files and the generating spec; returns the manifest path."""
    return SyntheticCorpus(spec).write(out_dir)
