"""Progress-guided prompt construction: retention masks and clutter-free views.

The planner names the objects the current subtask is about; everything else
is blacked out of the label maps before the executor ever sees them, so the
executor's grounding problem shrinks to exactly the named objects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .graph import SemanticGraph

BACKGROUND = 0
_HOLE_RE = re.compile(r"\{([A-Za-z0-9_\-]+)\}")


class UnknownNode(Exception):
    """A relevant-object id is not a node in the graph."""


class UnresolvedHole(Exception):
    """A template hole has no binding."""


@dataclass(frozen=True)
class MaskedObservation:
    views: dict          # view_id -> (masked label map, retention mask)
    subtask_cue: str
    relevant_ids: frozenset

    def visible_source_ids(self, view_id: str) -> list:
        labels, _ = self.views[view_id]
        present = np.unique(labels)
        return [int(v) for v in present if v != BACKGROUND]


def retention_mask(graph: SemanticGraph, relevant_ids, view_id: str,
                   shape: tuple) -> np.ndarray:
    """Union of the relevant nodes' masks in one view (all-zero if none)."""
    out = np.zeros(shape, dtype=bool)
    for node_id in sorted(relevant_ids):
        node = graph.nodes.get(node_id)
        if node is None:
            raise UnknownNode(f"node {node_id} is not in the graph")
        grounding = node.groundings.get(view_id)
        if grounding is not None:
            out |= grounding.mask
    return out


def clutter_free_obs(raw_obs, graph: SemanticGraph, relevant_ids,
                     subtask_cue: str) -> MaskedObservation:
    """Label maps with every non-retained pixel set to the background."""
    views = {}
    for view_id in sorted(raw_obs.views):
        labels = raw_obs.views[view_id].label_map
        mask = retention_mask(graph, relevant_ids, view_id, labels.shape)
        views[view_id] = (np.where(mask, labels, BACKGROUND), mask)
    return MaskedObservation(views=views, subtask_cue=subtask_cue,
                             relevant_ids=frozenset(relevant_ids))


def raw_obs_passthrough(raw_obs, relevant_ids, subtask_cue: str) -> MaskedObservation:
    """The no-masking ablation: full label maps, all-ones retention."""
    views = {}
    for view_id in sorted(raw_obs.views):
        labels = raw_obs.views[view_id].label_map
        views[view_id] = (labels.copy(), np.ones(labels.shape, dtype=bool))
    return MaskedObservation(views=views, subtask_cue=subtask_cue,
                             relevant_ids=frozenset(relevant_ids))


def format_subtask_cue(template: str, env: dict) -> str:
    """Fill {var} holes with node names; leftover holes are an error."""
    def fill(match):
        var = match.group(1)
        if var not in env:
            raise UnresolvedHole(f"template hole {{{var}}} has no binding")
        return str(env[var])
    return _HOLE_RE.sub(fill, template)
