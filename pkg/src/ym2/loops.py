"""Tame graphs, holonomy configurations, and Wilson trace functionals.

A Wilson functional is a complex combination of trace words in edge
holonomies and their inverses.  Directional derivatives are computed by
exact insertion into the words (product rule), never by finite differences:
for a factor ``w(e)`` the left derivative inserts ``w(e) X``; for ``w(e)^-1``
it inserts ``-X w(e)^-1``.  The crossing-contraction second derivative sums
the double insertion over an orthonormal algebra basis and is basis
independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .groups import GroupContext, group_inverse, random_group_element
from .noise import GeometryError, GridWindow, NoiseField
from .transport import TamePath, transport_tame

__all__ = [
    "Crossing",
    "TameGraph",
    "WilsonFunctional",
    "build_figure_eight",
    "holonomies",
    "apply_gauge",
    "grad_edge",
    "grad_right",
    "grad_dot",
    "check_extended_gauge_invariance",
    "graph_to_json",
    "graph_from_json",
]


@dataclass(frozen=True)
class Crossing:
    """A simple crossing: four edges leaving the vertex, four adjoining faces.

    Edges are listed counterclockwise starting along the positive x-axis,
    each oriented away from the vertex; ``faces`` are the areas of the four
    adjoining faces in the same cyclic order (``None`` marks an unbounded
    face, whose area derivative is dropped from the crossing identity).
    """

    vertex: tuple[float, float]
    edges: tuple[str, str, str, str]
    faces: tuple[float | None, float | None, float | None, float | None]


class TameGraph:
    """Named tame paths meeting only at endpoints."""

    def __init__(self, edges: dict[str, TamePath], crossing: Crossing | None = None,
                 window: GridWindow | None = None, validate: bool = True):
        self.edges = dict(edges)
        self.crossing = crossing
        if crossing is not None:
            missing = [e for e in crossing.edges if e not in self.edges]
            if missing:
                raise GeometryError(f"crossing references unknown edges {missing}")
        if validate and window is not None:
            self._check_images(window)

    def _check_images(self, window: GridWindow) -> None:
        segs: dict[str, set] = {name: path.grid_segments(window)
                                for name, path in self.edges.items()}
        names = sorted(segs)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = segs[a] & segs[b]
                if shared:
                    raise GeometryError(
                        f"edges {a!r} and {b!r} share interior grid segments")

    @property
    def vertices(self) -> set[tuple[float, float]]:
        out = set()
        for path in self.edges.values():
            out.add(path.start)
            out.add(path.end)
        return out


class WilsonFunctional:
    """Sum of complex-weighted trace words over graph edges."""

    def __init__(self, terms):
        # terms: iterable of (coeff, word) with word = tuple[(edge, +-1), ...]
        self.terms = [(complex(c), tuple((str(e), int(s)) for e, s in w))
                      for c, w in terms]
        for _, word in self.terms:
            for _, s in word:
                if s not in (-1, 1):
                    raise ValueError("word exponents must be +1 or -1")

    def edge_names(self) -> set[str]:
        return {e for _, w in self.terms for e, _ in w}

    @staticmethod
    def _factor(omega, edge, sign):
        m = omega[edge]
        return m if sign == 1 else group_inverse(m)

    def evaluate(self, omega) -> np.ndarray:
        """U(omega); broadcasts over leading axes of the holonomy values."""
        total = None
        for coeff, word in self.terms:
            prod = None
            for edge, sign in word:
                f = self._factor(omega, edge, sign)
                prod = f if prod is None else prod @ f
            val = coeff * np.einsum("...ii->...", prod)
            total = val if total is None else total + val
        return total

    def _word_value_with_insertions(self, omega, word, insertions):
        """Trace of one word with matrix insertions at given positions.

        ``insertions`` maps position -> list of matrices X to insert at that
        factor (left-insertion semantics: each X multiplies on the factor's
        inner side, with the sign rule for inverse factors already applied by
        the caller).  Here we simply replace factor_p by the supplied matrix.
        """
        prod = None
        for p, (edge, sign) in enumerate(word):
            f = insertions.get(p)
            if f is None:
                f = self._factor(omega, edge, sign)
            prod = f if prod is None else prod @ f
        return np.einsum("...ii->...", prod)

    def grad(self, omega, edge: str, x, side: str = "left") -> np.ndarray:
        """Directional derivative inserting ``x`` at every occurrence of ``edge``.

        ``side='left'`` differentiates ``w(e) -> w(e) e^{tX}`` (the crossing
        convention); ``side='right'`` differentiates ``w(e) -> e^{tX} w(e)``.
        ``x`` may carry leading batch axes.
        """
        total = None
        for coeff, word in self.terms:
            for p, (e, sign) in enumerate(word):
                if e != edge:
                    continue
                m = omega[edge]
                mi = group_inverse(m)
                if side == "left":
                    ins = m @ x if sign == 1 else -(x @ mi)
                else:
                    ins = x @ m if sign == 1 else -(mi @ x)
                val = coeff * self._word_value_with_insertions(
                    omega, word, {p: ins})
                total = val if total is None else total + val
        if total is None:
            shape = np.broadcast_shapes(
                np.shape(x)[:-2], next(iter(omega.values())).shape[:-2])
            return np.zeros(shape, dtype=complex)
        return total

    def grad_dot(self, ctx: GroupContext, omega, edge1: str,
                 edge2: str) -> np.ndarray:
        """Crossing contraction: sum over the basis of nested left derivatives.

        Equals ``sum_xi d/ds d/dt U(... w(e1) e^{s xi} ..., ... w(e2) e^{t xi} ...)``
        including the same-occurrence second-derivative terms when
        ``edge1 == edge2``.
        """
        basis = ctx.basis[:, None, :, :]  # stack basis as a leading batch axis
        batch = np.broadcast_shapes(*(np.shape(v)[:-2] for v in omega.values()))
        total = None
        for coeff, word in self.terms:
            occ1 = [p for p, (e, _) in enumerate(word) if e == edge1]
            occ2 = [p for p, (e, _) in enumerate(word) if e == edge2]
            for p1 in occ1:
                for p2 in occ2:
                    val = coeff * self._double_insertion(
                        omega, word, p1, p2, basis)
                    total = val if total is None else total + val
        if total is None:
            return np.zeros(batch, dtype=complex)
        return total.sum(axis=0).reshape(batch)

    def grad2(self, omega, edge1: str, x1, edge2: str, x2) -> np.ndarray:
        """Nested left derivative with fixed directions:
        d/ds d/dt U(... w(e1) e^{s x1} ..., ... w(e2) e^{t x2} ...).

        Matches ``grad_dot`` when summed over an orthonormal basis with
        x1 = x2.  Either direction may carry leading batch axes.
        """
        total = None
        for coeff, word in self.terms:
            occ1 = [p for p, (e, _) in enumerate(word) if e == edge1]
            occ2 = [p for p, (e, _) in enumerate(word) if e == edge2]
            for p1 in occ1:
                for p2 in occ2:
                    if p1 == p2:
                        edge, sign = word[p1]
                        m = omega[edge]
                        ins = m @ x1 @ x2 if sign == 1 else \
                            (x2 @ x1) @ group_inverse(m)
                        val = coeff * self._word_value_with_insertions(
                            omega, word, {p1: ins})
                    else:
                        ins = {}
                        for p, x in ((p1, x1), (p2, x2)):
                            edge, sign = word[p]
                            m = omega[edge]
                            ins[p] = m @ x if sign == 1 else \
                                -(x @ group_inverse(m))
                        val = coeff * self._word_value_with_insertions(
                            omega, word, ins)
                    total = val if total is None else total + val
        if total is None:
            shape = np.broadcast_shapes(
                np.shape(x1)[:-2], np.shape(x2)[:-2],
                *(np.shape(v)[:-2] for v in omega.values()))
            return np.zeros(shape, dtype=complex)
        return total

    def _double_insertion(self, omega, word, p1, p2, xi):
        if p1 == p2:
            edge, sign = word[p1]
            m = omega[edge]
            # d^2/ds dt of w e^{s xi} e^{t xi}  (or its inverse for sign -1)
            ins = m @ xi @ xi if sign == 1 else (xi @ xi) @ group_inverse(m)
            return self._word_value_with_insertions(omega, word, {p1: ins})
        out = {}
        for p in (p1, p2):
            edge, sign = word[p]
            m = omega[edge]
            out[p] = m @ xi if sign == 1 else -(xi @ group_inverse(m))
        return self._word_value_with_insertions(omega, word, out)


# -- module-level wrappers matching the operation surface ---------------------

def holonomies(field: NoiseField, graph: TameGraph, substeps: int = 1) -> dict:
    """Stochastic holonomy of every edge; vertical edges map to the identity."""
    return {name: transport_tame(field, path, substeps)
            for name, path in graph.edges.items()}


def apply_gauge(graph: TameGraph, omega: dict, gauge: dict) -> dict:
    """omega^u(e) = u(end)^{-1} omega(e) u(start); u defined on all vertices."""
    out = {}
    for name, path in graph.edges.items():
        try:
            u_f = gauge[path.end]
            u_i = gauge[path.start]
        except KeyError as exc:
            raise KeyError(f"gauge missing vertex {exc.args[0]}") from exc
        out[name] = group_inverse(u_f) @ omega[name] @ u_i
    return out


def grad_edge(u: WilsonFunctional, omega: dict, edge: str, x) -> np.ndarray:
    return u.grad(omega, edge, x, side="left")


def grad_right(u: WilsonFunctional, omega: dict, edge: str, x) -> np.ndarray:
    return u.grad(omega, edge, x, side="right")


def grad_dot(ctx: GroupContext, u: WilsonFunctional, omega: dict,
             edge1: str, edge2: str) -> np.ndarray:
    return u.grad_dot(ctx, omega, edge1, edge2)


def check_extended_gauge_invariance(ctx: GroupContext, u: WilsonFunctional,
                                    graph: TameGraph,
                                    rng: np.random.Generator,
                                    probes: int = 100,
                                    tol: float = 1e-10) -> bool:
    """True iff U only sees w(e1)w(e3)^-1 and w(e2)w(e4)^-1 at the crossing.

    Probes multiply the four crossing edges on the inside by common random
    factors and check that U does not move.
    """
    if graph.crossing is None:
        raise ValueError("graph has no crossing descriptor")
    e1, e2, e3, e4 = graph.crossing.edges
    for _ in range(probes):
        omega = {name: random_group_element(ctx, rng)
                 for name in graph.edges}
        x = random_group_element(ctx, rng)
        y = random_group_element(ctx, rng)
        moved = dict(omega)
        moved[e1] = omega[e1] @ x
        moved[e3] = omega[e3] @ x
        moved[e2] = omega[e2] @ y
        moved[e4] = omega[e4] @ y
        if np.max(np.abs(u.evaluate(moved) - u.evaluate(omega))) > tol:
            return False
    return True


# -- the canonical two-lobe benchmark ------------------------------------------

def build_figure_eight(t1: float, t3: float, window: GridWindow,
                       lobe_height: float = 1.0):
    """Two corner-touching rectangular lobes crossing transversally at 0.

    The right lobe [0, t1/h] x [0, h] and the left lobe [-t3/h, 0] x [-h, 0]
    (h = ``lobe_height``) are traced by one loop whose strands cross at the
    origin.  Returns the graph and the Wilson trace functional of the loop;
    the crossing's bounded faces have areas exactly t1 and t3, the other two
    faces are unbounded.
    """
    if t1 <= 0 or t3 <= 0:
        raise GeometryError("lobe areas must be positive")
    h = lobe_height
    w1 = t1 / h
    w3 = t3 / h
    for x in (w1, -w3):
        window.col_of(x)
    for y in (h, -h):
        window.row_of(y)
    edges = {
        "e1": TamePath.from_points([(0.0, 0.0), (w1, 0.0)]),
        "e2": TamePath.from_points([(0.0, 0.0), (0.0, h)]),
        "e3": TamePath.from_points([(0.0, 0.0), (-w3, 0.0)]),
        "e4": TamePath.from_points([(0.0, 0.0), (0.0, -h)]),
        "a": TamePath.from_points([(w1, 0.0), (w1, h), (0.0, h)]),
        "b": TamePath.from_points([(0.0, -h), (-w3, -h), (-w3, 0.0)]),
    }
    crossing = Crossing(vertex=(0.0, 0.0), edges=("e1", "e2", "e3", "e4"),
                        faces=(t1, None, t3, None))
    graph = TameGraph(edges, crossing=crossing, window=window)
    word = (("b", 1), ("e4", 1), ("e2", -1), ("a", 1), ("e1", 1), ("e3", -1))
    return graph, WilsonFunctional([(1.0, word)])


# -- JSON round trip ------------------------------------------------------------

def _path_points(path: TamePath):
    pts = [path.start]
    for seg in path.segments:
        pts.append(seg.end)
    return pts


def graph_to_json(graph: TameGraph, wilson: WilsonFunctional | None = None) -> str:
    doc = {
        "edges": {name: [[p[0], p[1]] for p in _path_points(path)]
                  for name, path in sorted(graph.edges.items())},
    }
    if graph.crossing is not None:
        doc["crossing"] = {
            "vertex": list(graph.crossing.vertex),
            "edges": list(graph.crossing.edges),
            "faces": [a for a in graph.crossing.faces],
        }
    if wilson is not None:
        doc["wilson"] = [
            {"coeff": [c.real, c.imag], "word": [[e, s] for e, s in w]}
            for c, w in wilson.terms]
    return json.dumps(doc, indent=2, sort_keys=True)


def graph_from_json(text: str):
    doc = json.loads(text)
    edges = {name: TamePath.from_points([tuple(p) for p in pts])
             for name, pts in doc["edges"].items()}
    crossing = None
    if "crossing" in doc:
        c = doc["crossing"]
        crossing = Crossing(vertex=tuple(c["vertex"]),
                            edges=tuple(c["edges"]),
                            faces=tuple(c["faces"]))
    graph = TameGraph(edges, crossing=crossing, window=None, validate=False)
    wilson = None
    if "wilson" in doc:
        wilson = WilsonFunctional(
            [(complex(t["coeff"][0], t["coeff"][1]),
              tuple((e, s) for e, s in t["word"])) for t in doc["wilson"]])
    return graph, wilson
