"""
Captioning model: LSTM1 encoder plus the dual-stream decoder.

The teacher-forcing (TF) stream (LSTM3) reads the previous ground-truth token
through W_e; the self-forcing (SF) stream (LSTM4) reads its own previous
probability distribution through the same W_e, and both streams project with
the same W_p. Single-stream variants (baseline, va) only build the TF stream.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionOutput,
    AttentionParams,
    VisualTrackState,
    attend,
    attention_shapes,
    track_update,
    visual_aware_attend,
)
from .autodiff import Tensor
from .config import START_ID
from .encoder import EncodedVideo, FeatureSequence, encode
from .errors import ShapeError, TokenError
from .models import ModelSpec
from .nn import (
    EmbeddingParams,
    LinearParams,
    LSTMCellParams,
    ParamShapes,
    embed_hard,
    embed_soft,
    init_params,
    linear,
    linear_shapes,
    lstm_cell,
    lstm_shapes,
)
from .params import ParamStore

logger = logging.getLogger(__name__)

TF = "tf"
SF = "sf"
SF_PREFIX = "decoder.sf."


class StreamParams(NamedTuple):
    lstm: LSTMCellParams
    attention: AttentionParams
    track: Optional[LSTMCellParams]  # LSTM2, present for visual-aware variants


@dataclass
class StreamState:
    h: Tensor
    c: Tensor
    va_state: Optional[VisualTrackState] = None
    last_p: Optional[Tensor] = None  # SF stream only


@dataclass
class DualStreamState:
    tf: StreamState
    sf: Optional[StreamState]
    t: int = 0


@dataclass
class AttentionTrace:
    """Every attention weight vector produced during a decode or unroll."""

    records: List[Tuple[str, int, np.ndarray]] = field(default_factory=list)

    def add(self, stream: str, step: int, weights: Tensor) -> None:
        self.records.append((stream, step, weights.data.copy()))

    def simplex_violations(self, tol: float = 1e-9) -> int:
        return sum(1 for _, _, a in self.records if np.any(a < 0.0) or abs(float(a.sum()) - 1.0) > tol)


class CaptionModel:
    """Parameters plus the forward computations of one model variant."""

    def __init__(self, spec: ModelSpec, params: ParamStore):
        self.spec = spec
        self.params = params
        missing = [name for name in self.param_shapes(spec) if name not in params]
        if missing:
            raise ShapeError("CaptionModel", (len(params),), detail=f"missing parameters {missing[:3]}")

        self.encoder_fwd = LSTMCellParams.from_store(params, "encoder.fwd")
        self.encoder_bwd = LSTMCellParams.from_store(params, "encoder.bwd")
        self.embedding = EmbeddingParams.from_store(params, "decoder.w_e")
        self.output = LinearParams.from_store(params, "decoder.w_p")
        self.streams = {TF: self._stream_params(TF)}
        if spec.dual_stream:
            self.streams[SF] = self._stream_params(SF)

    # -------------------------------------------------------------------------
    # Construction
    # -------------------------------------------------------------------------
    @classmethod
    def build(cls, spec: ModelSpec) -> "CaptionModel":
        params = ParamStore()
        init_params(params, cls.param_shapes(spec), spec.seed)
        logger.debug("built %s model: %d tensors, %d values", spec.variant, len(params), params.size())
        return cls(spec, params)

    @staticmethod
    def param_shapes(spec: ModelSpec) -> ParamShapes:
        hidden = spec.hidden
        value_dim = 2 * hidden
        query_dim = hidden + spec.track_dim if spec.visual_aware else hidden

        shapes: ParamShapes = {}
        shapes.update(lstm_shapes("encoder.fwd", spec.feature_dim, hidden))
        shapes.update(lstm_shapes("encoder.bwd", spec.feature_dim, hidden))
        shapes["decoder.w_e"] = ((spec.vocab_size, spec.embed_dim), spec.vocab_size)
        shapes.update(linear_shapes("decoder.w_p", hidden, spec.vocab_size))

        streams = [(TF, "lstm3")]
        if spec.dual_stream:
            streams.append((SF, "lstm4"))
        for stream, lstm_name in streams:
            prefix = f"decoder.{stream}"
            shapes.update(lstm_shapes(f"{prefix}.{lstm_name}", spec.embed_dim + value_dim, hidden))
            if stream == SF and spec.share_va and spec.visual_aware:
                continue
            shapes.update(attention_shapes(f"{prefix}.att", value_dim, query_dim, spec.attention_dim))
            if spec.visual_aware:
                shapes.update(lstm_shapes(f"{prefix}.lstm2", value_dim, spec.track_dim))
        return shapes

    def _stream_params(self, stream: str) -> StreamParams:
        lstm_name = "lstm3" if stream == TF else "lstm4"
        owner = TF if (stream == SF and self.spec.share_va and self.spec.visual_aware) else stream
        track = None
        if self.spec.visual_aware:
            track = LSTMCellParams.from_store(self.params, f"decoder.{owner}.lstm2")
        return StreamParams(
            lstm=LSTMCellParams.from_store(self.params, f"decoder.{stream}.{lstm_name}"),
            attention=AttentionParams.from_store(self.params, f"decoder.{owner}.att"),
            track=track,
        )

    def sf_exclusive_names(self) -> List[str]:
        """Parameters only the SF stream uses (empty for single-stream variants)."""
        return self.params.with_prefix(SF_PREFIX)

    def frozen(self) -> "CaptionModel":
        """Gradient-free copy sharing no buffers with this model."""
        return CaptionModel(self.spec, self.params.snapshot())

    @property
    def vocab_size(self) -> int:
        return self.spec.vocab_size

    # -------------------------------------------------------------------------
    # Forward pieces
    # -------------------------------------------------------------------------
    def encode(self, features: FeatureSequence) -> EncodedVideo:
        return encode(features, self.encoder_fwd, self.encoder_bwd)

    def initial_stream_state(self, video: EncodedVideo, stream: str) -> StreamState:
        hidden = self.spec.hidden
        va_state = VisualTrackState.zeros(video.n, self.spec.track_dim) if self.spec.visual_aware else None
        last_p = None
        if stream == SF:
            # SF bootstrap: one-hot <start>, so embed_soft reproduces the <start> embedding
            start = np.zeros(self.vocab_size)
            start[START_ID] = 1.0
            last_p = Tensor(start)
        return StreamState(
            h=Tensor(np.zeros(hidden)),
            c=Tensor(np.zeros(hidden)),
            va_state=va_state,
            last_p=last_p,
        )

    def initial_state(self, video: EncodedVideo) -> DualStreamState:
        sf = self.initial_stream_state(video, SF) if self.spec.dual_stream else None
        return DualStreamState(tf=self.initial_stream_state(video, TF), sf=sf, t=0)

    def _advance(
        self,
        state: StreamState,
        word_input: Tensor,
        video: EncodedVideo,
        params: StreamParams,
    ) -> Tuple[StreamState, Tensor, AttentionOutput]:
        if params.track is not None:
            attention = visual_aware_attend(video, state.h, state.va_state, params.attention)
            va_state = track_update(state.va_state, attention.weights, video, params.track)
        else:
            attention = attend(video, state.h, params.attention)
            va_state = None
        h, c = lstm_cell(ad.concat([word_input, attention.context]), state.h, state.c, params.lstm)
        p = ad.softmax_lastdim(linear(h, self.output))
        return StreamState(h=h, c=c, va_state=va_state, last_p=p), p, attention

    def tf_step(
        self,
        state: StreamState,
        prev_token: int,
        video: EncodedVideo,
        trace: Optional[AttentionTrace] = None,
        step: int = 0,
    ) -> Tuple[StreamState, Tensor]:
        if not 0 <= int(prev_token) < self.vocab_size:
            raise TokenError(f"token id {prev_token} outside vocabulary of size {self.vocab_size}")
        word = embed_hard(int(prev_token), self.embedding)
        new_state, p, attention = self._advance(state, word, video, self.streams[TF])
        if trace is not None:
            trace.add(TF, step, attention.weights)
        return new_state, p

    def sf_step(
        self,
        state: StreamState,
        prev_p: Tensor,
        video: EncodedVideo,
        trace: Optional[AttentionTrace] = None,
        step: int = 0,
    ) -> Tuple[StreamState, Tensor]:
        if SF not in self.streams:
            raise ShapeError("sf_step", (), detail=f"variant '{self.spec.variant}' has no SF stream")
        word = embed_soft(prev_p, self.embedding)
        new_state, p, attention = self._advance(state, word, video, self.streams[SF])
        if trace is not None:
            trace.add(SF, step, attention.weights)
        return new_state, p

    def unroll_training(
        self,
        video: EncodedVideo,
        targets: Sequence[int],
        trace: Optional[AttentionTrace] = None,
    ) -> Tuple[Tensor, Optional[Tensor]]:
        """
        Run both streams for m = len(targets) steps. The TF stream reads
        <start>, y*_1..y*_{m-1}; the SF stream reads its own previous
        distribution. Row t of each result predicts y*_t.
        """
        if len(targets) == 0:
            raise TokenError("empty target sequence")
        inputs = [START_ID] + [int(t) for t in targets[:-1]]

        state = self.initial_state(video)
        tf_rows, sf_rows = [], []
        for t, prev_token in enumerate(inputs):
            tf_state, p_tf = self.tf_step(state.tf, prev_token, video, trace, t)
            tf_rows.append(p_tf)
            sf_state = None
            if state.sf is not None:
                sf_state, p_sf = self.sf_step(state.sf, state.sf.last_p, video, trace, t)
                sf_rows.append(p_sf)
            state = DualStreamState(tf=tf_state, sf=sf_state, t=t + 1)

        p_tf_all = ad.stack(tf_rows)
        p_sf_all = ad.stack(sf_rows) if sf_rows else None
        return p_tf_all, p_sf_all
