"""
Caption generation with the gamma-mixed distribution p' = gamma p_tf + (1 - gamma) p_sf.

Feedback at test time: the TF stream receives argmax(p') as its previous
token, the SF stream receives p' itself as its previous distribution, so each
stream keeps consuming the input type it was trained on.

Searches run against a ``Stepper`` (start state + one-step transition), which
lets greedy and beam search be exercised on hand-built transition tables.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .config import END_ID, START_ID
from .decoder import AttentionTrace, CaptionModel, DualStreamState
from .encoder import EncodedVideo, FeatureSequence
from .errors import DistributionError
from .models import InferenceConfig
from .nn import check_simplex

logger = logging.getLogger(__name__)


def mix(p_tf: np.ndarray, p_sf: np.ndarray, gamma: float) -> np.ndarray:
    """Convex combination of the two stream distributions."""
    if not 0.0 <= gamma <= 1.0:
        raise DistributionError(f"gamma must lie in [0, 1], got {gamma}")
    p_tf = np.asarray(p_tf, dtype=np.float64)
    p_sf = np.asarray(p_sf, dtype=np.float64)
    check_simplex(p_tf, "mix(p_tf)")
    check_simplex(p_sf, "mix(p_sf)")
    return gamma * p_tf + (1.0 - gamma) * p_sf


# -----------------------------------------------------------------------------
# Steppers
# -----------------------------------------------------------------------------
class Stepper(Protocol):
    def start(self) -> Any:
        ...

    def advance(self, state: Any, prev_token: int, prev_p: Optional[np.ndarray]) -> Tuple[Any, np.ndarray]:
        """Return the next state and the distribution p' over the next token."""
        ...


class ModelStepper:
    """Drives a ``CaptionModel`` on one encoded video according to ``InferenceConfig``."""

    def __init__(
        self,
        model: CaptionModel,
        video: EncodedVideo,
        config: InferenceConfig,
        trace: Optional[AttentionTrace] = None,
    ):
        self.model = model
        self.video = video
        self.config = config
        self.trace = trace
        # Single-stream variants ignore gamma and the stream selector
        self.mode = config.stream if model.spec.dual_stream else "tf"

    def start(self) -> DualStreamState:
        return self.model.initial_state(self.video)

    def advance(self, state: DualStreamState, prev_token: int, prev_p: Optional[np.ndarray]):
        step = state.t
        tf_state, sf_state = state.tf, state.sf
        p_tf = p_sf = None

        if self.mode in ("mixed", "tf"):
            tf_state, p_tf_t = self.model.tf_step(state.tf, prev_token, self.video, self.trace, step)
            p_tf = p_tf_t.data
        if self.mode in ("mixed", "sf"):
            sf_input = state.sf.last_p if prev_p is None else Tensor(prev_p)
            sf_state, p_sf_t = self.model.sf_step(state.sf, sf_input, self.video, self.trace, step)
            p_sf = p_sf_t.data

        if self.mode == "tf":
            p_next = p_tf
        elif self.mode == "sf":
            p_next = p_sf
        else:
            p_next = mix(p_tf, p_sf, self.config.gamma)
        return DualStreamState(tf=tf_state, sf=sf_state, t=step + 1), p_next


# -----------------------------------------------------------------------------
# Searches
# -----------------------------------------------------------------------------
@dataclass
class BeamHypothesis:
    tokens: Tuple[int, ...]
    score: float  # sum of log p'(token) over emitted tokens, <end> included
    state: Any
    last_p: Optional[np.ndarray] = None
    finished: bool = False

    @property
    def steps(self) -> int:
        return len(self.tokens) + (1 if self.finished else 0)

    def ranking(self, length_norm: bool) -> float:
        if not length_norm:
            return self.score
        return self.score / max(self.steps, 1)


def greedy_search(stepper: Stepper, max_len: int) -> List[int]:
    """Argmax decoding; ties go to the smaller token id; stops at <end> or ``max_len``."""
    state = stepper.start()
    tokens: List[int] = []
    prev_token, prev_p = START_ID, None
    for _ in range(max_len):
        state, p = stepper.advance(state, prev_token, prev_p)
        token = int(np.argmax(p))
        if token == END_ID:
            break
        tokens.append(token)
        prev_token, prev_p = token, p
    return tokens


def sequence_score(stepper: Stepper, tokens: Sequence[int], max_len: int) -> BeamHypothesis:
    """Score a fixed token sequence (plus <end> if it fits) under the stepper."""
    state = stepper.start()
    prev_token, prev_p = START_ID, None
    score = 0.0
    for token in list(tokens):
        state, p = stepper.advance(state, prev_token, prev_p)
        score += _log(p)[token]
        prev_token, prev_p = token, p
    finished = False
    if len(tokens) < max_len:
        state, p = stepper.advance(state, prev_token, prev_p)
        score += _log(p)[END_ID]
        finished = True
    return BeamHypothesis(tokens=tuple(tokens), score=float(score), state=state, finished=finished)


def beam_search(stepper: Stepper, beam_width: int, max_len: int, length_norm: bool = True) -> List[int]:
    """
    Keep the ``beam_width`` best expansions per step, ranked by raw cumulative
    log p' and then by token ids. Hypotheses emitting <end> are set aside; live
    ones still running at ``max_len`` are used only if nothing finished. The
    greedy sequence is always part of the final pool.

    Pruning always uses the raw score. Only the final choice among finished
    hypotheses uses ``BeamHypothesis.ranking``, which is length-normalized
    unless ``length_norm`` is off.
    """
    live = [BeamHypothesis(tokens=(), score=0.0, state=stepper.start())]
    finished: List[BeamHypothesis] = []

    for _ in range(max_len):
        expansions = []
        for hyp in live:
            prev_token = hyp.tokens[-1] if hyp.tokens else START_ID
            state, p = stepper.advance(hyp.state, prev_token, hyp.last_p)
            logp = _log(p)
            for token in np.nonzero(np.isfinite(logp))[0]:
                expansions.append((hyp.score + float(logp[token]), hyp.tokens + (int(token),), state, p))
        expansions.sort(key=lambda e: (-e[0], e[1]))

        live = []
        for score, tokens, state, p in expansions[:beam_width]:
            if tokens[-1] == END_ID:
                finished.append(BeamHypothesis(tokens=tokens[:-1], score=score, state=state, finished=True))
            else:
                live.append(BeamHypothesis(tokens=tokens, score=score, state=state, last_p=p))
        if not live:
            break

    pool = finished or live
    pool.append(sequence_score(stepper, greedy_search(stepper, max_len), max_len))
    pool = [h for h in pool if h.finished] or pool
    best = min(pool, key=lambda h: (-h.ranking(length_norm), h.tokens))
    return list(best.tokens)


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


# -----------------------------------------------------------------------------
# Model-level entry points
# -----------------------------------------------------------------------------
def decode_greedy(
    video: EncodedVideo,
    model: CaptionModel,
    config: InferenceConfig,
    trace: Optional[AttentionTrace] = None,
) -> List[int]:
    return greedy_search(ModelStepper(model, video, config, trace), config.max_len)


def decode_beam(video: EncodedVideo, model: CaptionModel, config: InferenceConfig) -> List[int]:
    stepper = ModelStepper(model, video, config)
    return beam_search(stepper, config.beam_width, config.max_len, config.length_norm)


def caption_videos(
    model: CaptionModel,
    features: Sequence[FeatureSequence],
    config: InferenceConfig,
    greedy: bool = False,
    workers: int = 1,
) -> List[List[int]]:
    """Decode many videos, optionally on a thread pool sharing one frozen model."""
    frozen = model.frozen()

    def run(feature: FeatureSequence) -> List[int]:
        video = frozen.encode(feature)
        if greedy:
            return decode_greedy(video, frozen, config)
        return decode_beam(video, frozen, config)

    logger.debug("decoding %d videos (%s, workers=%d)", len(features), "greedy" if greedy else f"beam {config.beam_width}", workers)
    if workers <= 1:
        return [run(f) for f in features]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, features))
