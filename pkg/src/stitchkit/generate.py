"""Recursive, threshold-pruned composition search over a fragment pool.

Depth-first: every starting fragment seeds a chain with score 1; at each
node the span-K best candidate fragments are examined, each joint scored by
CKA between the chain's output and the candidate's native input on the M
target samples. A joint is accepted iff the running score product stays
above the threshold; terminating fragments emit completed networks. The
search is deterministic given pool, dataset, and config, and its observable
output is independent of how branches are scheduled.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cka import cka_linear
from .errors import ConfigError, DegenerateActivationsError, UnsupportedJointError
from .network import forward, forward_upto
from .stitching import joint_kind, prepare_joint, start_stitchnet, stitch

STRATEGIES = ("top_cka", "fewest_params")


@dataclass
class GenerationConfig:
    span_k: int = 2
    threshold: float = 0.5
    max_fragments: int = 16
    samples_m: int = 32
    starting_ids: list[str] | None = None  # None selects every starting fragment
    candidate_strategy: str = "top_cka"
    seed: int = 0
    ridge: float | None = None  # None applies the solver's automatic default

    def __post_init__(self):
        if self.span_k < 1:
            raise ConfigError(f"span K must be >= 1, got {self.span_k}")
        if self.max_fragments < 1:
            raise ConfigError(f"max fragments L must be >= 1, got {self.max_fragments}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigError(f"threshold T must be in [0, 1], got {self.threshold}")
        if self.samples_m < 2:
            raise ConfigError(f"samples M must be >= 2, got {self.samples_m}")
        if self.candidate_strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.candidate_strategy!r}")


@dataclass
class GenerationStats:
    candidates_evaluated: int = 0
    joints_rejected: int = 0
    cka_computations: int = 0
    stitchnets_emitted: int = 0
    samples_processed: int = 0
    wall_time: float = 0.0

    def merge(self, other):
        self.candidates_evaluated += other.candidates_evaluated
        self.joints_rejected += other.joints_rejected
        self.cka_computations += other.cka_computations
        self.stitchnets_emitted += other.stitchnets_emitted
        self.samples_processed += other.samples_processed


@dataclass
class GenerationResult:
    entries: list = field(default_factory=list)  # (StitchNet, score), score descending
    stats: GenerationStats = field(default_factory=GenerationStats)
    task_outputs: dict | None = None
    # id -> joint evaluations completed when the net was emitted, in the
    # canonical sequential search order (cost-to-reach accounting)
    emission_joints: dict = field(default_factory=dict)

    @property
    def stitchnets(self):
        return [sn for sn, _ in self.entries]


def _spans_overlap(frag, q):
    for prov in q.provenance:
        if prov.source_network_id != frag.source_network_id:
            continue
        if frag.start_layer < prov.end_layer and prov.start_layer < frag.end_layer:
            return True
    return False


class _Search:
    def __init__(self, pool, batch, cfg, with_inference):
        self.pool = pool
        self.batch = batch
        self.cfg = cfg
        self.with_inference = with_inference
        self.native_inputs = {}  # fragment id -> forward_upto activations, pure per run
        self.candidates = sorted(
            (f for f in pool.fragments if not f.is_starting and f.kind != "degenerate"),
            key=lambda f: f.id,
        )

    def native_input(self, frag):
        y = self.native_inputs.get(frag.id)
        if y is None:
            y = forward_upto(self.pool.network(frag.source_network_id), frag.start_layer, self.batch)
            self.native_inputs[frag.id] = y
        return y

    def _score_joint(self, frag, x_q, kind, stats):
        y_raw = self.native_input(frag)
        x_mat, y_mat = prepare_joint(x_q, y_raw, kind)
        stats.cka_computations += 1
        try:
            score = cka_linear(x_mat, y_mat)
        except DegenerateActivationsError as e:
            warnings.warn(f"degenerate joint activations, scoring 0: {e}")
            score = 0.0
        return score, y_raw

    def rank_candidates(self, q, x_q, stats):
        """Pick the span-K candidates for node q under the strategy.

        Returns (fragment, cka, kind, y_raw) tuples; ties break on fragment
        id. top_cka scores every shape-compatible non-overlapping fragment
        once; fewest_params selects by size and scores only the selection.
        """
        usable = []
        for frag in self.candidates:
            if _spans_overlap(frag, q):
                continue
            try:
                kind = joint_kind(x_q, frag)
            except UnsupportedJointError:
                continue
            usable.append((frag, kind))
        if self.cfg.candidate_strategy == "fewest_params":
            usable.sort(key=lambda t: (t[0].n_params, t[0].id))
            out = []
            for frag, kind in usable[: self.cfg.span_k]:
                score, y_raw = self._score_joint(frag, x_q, kind, stats)
                out.append((frag, score, kind, y_raw))
            return out
        scored = []
        for frag, kind in usable:
            score, y_raw = self._score_joint(frag, x_q, kind, stats)
            scored.append((frag, score, kind, y_raw))
        scored.sort(key=lambda t: (-t[1], t[0].id))
        return scored[: self.cfg.span_k]

    def expand(self, q, x_q, score, out, stats):
        if q.n_fragments >= self.cfg.max_fragments:
            return
        for frag, joint_cka, kind, y_raw in self.rank_candidates(q, x_q, stats):
            stats.candidates_evaluated += 1
            stats.samples_processed += self.cfg.samples_m
            new_score = score * joint_cka
            if not (new_score > self.cfg.threshold):
                stats.joints_rejected += 1
                continue
            labels = self.pool.network(frag.source_network_id).class_labels
            q2 = stitch(
                q,
                frag,
                x_q,
                y_raw,
                ridge=self.cfg.ridge,
                joint_cka=joint_cka,
                terminal_labels=labels,
            )
            # incremental forward: only the newly appended segment runs
            segment = list(q2.adapters[-1]) + list(q2.fragments[-1].layers)
            x_q2 = x_q
            for layer in segment:
                x_q2 = layer.forward(x_q2)
            if frag.is_terminating:
                stats.stitchnets_emitted += 1
                outputs = x_q2 if self.with_inference else None
                out.append((q2, new_score, outputs, stats.candidates_evaluated))
            else:
                self.expand(q2, x_q2, new_score, out, stats)

    def run_root(self, root):
        out = []
        stats = GenerationStats()
        net = self.pool.network(root.source_network_id)
        q = start_stitchnet(root, net)
        x_q = forward(q, self.batch)
        self.expand(q, x_q, 1.0, out, stats)
        return out, stats


def _select_roots(pool, cfg):
    roots = sorted(pool.starting_fragments, key=lambda f: f.id)
    roots = [f for f in roots if f.kind != "degenerate"]
    if cfg.starting_ids is not None:
        wanted = set(cfg.starting_ids)
        roots = [f for f in roots if f.id in wanted or f.source_network_id in wanted]
    if not roots:
        raise ConfigError("no starting fragments selected")
    return roots


def select_candidates(pool, q, k, strategy, batch, x_q=None):
    """Rank the shape-compatible middle/terminating fragments for chain q.

    top_cka orders by compatibility with q's current output on the batch,
    fewest_params by ascending parameter count; ties break on fragment id.
    Returns at most k fragments.
    """
    cfg = GenerationConfig(span_k=k, candidate_strategy=strategy, samples_m=max(2, batch.shape[0]))
    search = _Search(pool, batch, cfg, False)
    if x_q is None:
        x_q = forward(q, batch)
    return [t[0] for t in search.rank_candidates(q, x_q, GenerationStats())]


def generate(pool, dataset, cfg, with_inference=False, threads=1):
    """Run the composition search; see the module docstring.

    Returns completed stitched networks sorted by score (descending) with
    evaluation counters. with_inference=True additionally captures each
    emitted network's class probabilities on the target samples at emission
    time.
    """
    t0 = time.perf_counter()
    if not any(f.is_starting and f.kind != "degenerate" for f in pool.fragments):
        raise ConfigError("pool has no starting fragments")
    if not any(f.is_terminating and f.kind != "degenerate" for f in pool.fragments):
        raise ConfigError("pool has no terminating fragments")
    if len(dataset) < cfg.samples_m:
        raise ConfigError(
            f"dataset has {len(dataset)} samples, config wants M={cfg.samples_m}"
        )
    rng = np.random.default_rng(cfg.seed)
    idx = np.sort(rng.choice(len(dataset), size=cfg.samples_m, replace=False))
    batch = dataset.images[idx]

    search = _Search(pool, batch, cfg, with_inference)
    roots = _select_roots(pool, cfg)

    stats = GenerationStats()
    raw = []
    if threads > 1 and len(roots) > 1:
        # branches are independent; canonical sort below erases scheduling order
        with ThreadPoolExecutor(max_workers=threads) as ex:
            branch_results = list(ex.map(search.run_root, roots))
    else:
        branch_results = [search.run_root(root) for root in roots]
    # emission costs count joints in the canonical (sequential root order)
    # schedule: earlier roots' totals precede a later root's local count
    joint_offset = 0
    for out, st in branch_results:
        for sn, score, probs, local_joints in out:
            raw.append((sn, score, probs, joint_offset + local_joints))
        joint_offset += st.candidates_evaluated
        stats.merge(st)

    raw.sort(key=lambda t: (-t[1], t[0].provenance_key))
    entries = []
    outputs = {} if with_inference else None
    emission_joints = {}
    for rank, (sn, score, probs, joints_at_emit) in enumerate(raw):
        sn.id = f"sn{rank:03d}"
        entries.append((sn, score))
        emission_joints[sn.id] = joints_at_emit
        if with_inference:
            outputs[sn.id] = probs
    stats.wall_time = time.perf_counter() - t0
    return GenerationResult(
        entries=entries, stats=stats, task_outputs=outputs, emission_joints=emission_joints
    )


def generate_with_inference(pool, dataset, cfg, threads=1):
    """generate() variant that returns task outputs alongside the networks."""
    return generate(pool, dataset, cfg, with_inference=True, threads=threads)
