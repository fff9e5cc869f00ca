"""3-SAT to episodic MDP reduction and the constraint program OLIVE faces on it.

Every formula yields a family of MDPs M_y, one per assignment y, that share
transitions and differ only in terminal rewards. Solving OLIVE's
optimisation problem on the constraints below (with phi = 0) decides the
formula, so this module doubles as a (deliberately exponential) SAT solver.

The constraint program is stated on the compact, non-layered MDP in which
``[try x_i]`` leads straight to the literal states. :func:`sat_to_mdp`
builds the layered simulator version, which inserts a zero-reward relay
state on that branch so that all episodes have three steps.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..cdp_core import CdpSpec
from ..envs import CdpBuilder

# clause actions: bit strings b in {0,1}^3 \ {000}, in increasing order
CLAUSE_ACTIONS = tuple(tuple((v >> (2 - k)) & 1 for k in range(3)) for v in range(1, 8))


class SearchBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SatFormula:
    """CNF formula with exactly three signed literals per clause.

    Literals follow DIMACS: ``+i`` is x_i, ``-i`` its negation, 1-based.
    """

    n_vars: int
    clauses: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError("need at least one variable")
        if not self.clauses:
            raise ValueError("need at least one clause")
        for c in self.clauses:
            if len(c) != 3:
                raise ValueError(f"clause {c} does not have exactly 3 literals")
            if any(lit == 0 or abs(lit) > self.n_vars for lit in c):
                raise ValueError(f"clause {c} has a literal outside [1, {self.n_vars}]")

    @property
    def m(self) -> int:
        return len(self.clauses)

    @classmethod
    def from_clauses(cls, clauses, n_vars: int | None = None) -> "SatFormula":
        cl = tuple(tuple(int(v) for v in c) for c in clauses)
        n = max(abs(v) for c in cl for v in c) if n_vars is None else int(n_vars)
        return cls(n, cl)

    def satisfied_by(self, assignment) -> bool:
        z = [int(v) for v in assignment]
        return all(any((z[abs(l) - 1] == 1) == (l > 0) for l in c) for c in self.clauses)

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.n_vars} {self.m}"]
        lines += [" ".join(str(l) for l in c) + " 0" for c in self.clauses]
        return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> SatFormula:
    """Read a DIMACS CNF file.

    Clauses with one or two literals are padded by repeating their last
    literal, which leaves the formula unchanged. Longer clauses are
    rejected.
    """
    n_vars = n_clauses = None
    clauses, current = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line[0] in "c%":
            continue
        if line[0] == "p":
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ValueError(f"bad problem line: {raw!r}")
            n_vars, n_clauses = int(parts[2]), int(parts[3])
            continue
        for tok in line.split():
            v = int(tok)
            if v == 0:
                if not current:
                    raise ValueError("empty clause")
                clauses.append(current)
                current = []
            else:
                current.append(v)
    if current:
        clauses.append(current)
    if n_vars is None:
        raise ValueError("missing 'p cnf' line")
    if n_clauses is not None and n_clauses != len(clauses):
        raise ValueError(f"header announces {n_clauses} clauses, found {len(clauses)}")
    padded = []
    for c in clauses:
        if len(c) > 3:
            raise ValueError(f"clause {c} has more than 3 literals")
        padded.append(tuple(c + [c[-1]] * (3 - len(c))))
    return SatFormula(n_vars, tuple(padded))


def brute_force_sat(formula: SatFormula) -> tuple[bool, tuple[int, ...] | None]:
    """Truth-table search; returns (satisfiable, first satisfying assignment)."""
    for z in itertools.product((0, 1), repeat=formula.n_vars):
        if formula.satisfied_by(z):
            return True, z
    return False, None


def random_formula(rng, n_vars: int, n_clauses: int) -> SatFormula:
    lits = rng.integers(1, n_vars + 1, size=(n_clauses, 3)) * rng.choice([-1, 1], size=(n_clauses, 3))
    return SatFormula(n_vars, tuple(tuple(int(v) for v in row) for row in lits))


# ---------------------------------------------------------------------------
# the compact MDP family


def literal_target(lit: int, bit: int) -> tuple[int, int]:
    """Literal state reached from a clause literal under clause-action bit ``bit``.

    ``bit = 1`` sends to the state where the literal is true.
    Returns (variable index, value) with a 0-based variable index.
    """
    i = abs(lit) - 1
    val = bit if lit > 0 else 1 - bit
    return i, val


@dataclass
class CompactMdp:
    """Non-layered MDP M_y used to state the constraint program.

    States are labels: ``"s0"``, ``("C", j)`` and ``("x", i, v)``. Literal
    states have the single action ``None``.
    """

    formula: SatFormula
    y: tuple[int, ...]
    actions: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    trans: dict = field(default_factory=dict)

    def successors(self, s, a) -> dict:
        return self.trans.get((s, a), {})


def s0_actions(formula: SatFormula) -> list[tuple]:
    return ([("try_x", i) for i in range(formula.n_vars)] + [("try_C", j) for j in range(formula.m)]
            + [("solve",)])


def compact_mdp(formula: SatFormula, y=None) -> CompactMdp:
    n, m = formula.n_vars, formula.m
    y = tuple([1] * n if y is None else (int(v) for v in y))
    if len(y) != n or any(v not in (0, 1) for v in y):
        raise ValueError("y must be a 0/1 vector of length n_vars")
    mdp = CompactMdp(formula, y)
    mdp.actions["s0"] = s0_actions(formula)
    for a in mdp.actions["s0"]:
        if a[0] == "try_x":
            mdp.reward["s0", a] = Fraction(0)
            mdp.trans["s0", a] = {("x", a[1], 0): Fraction(1, 2), ("x", a[1], 1): Fraction(1, 2)}
        elif a[0] == "try_C":
            mdp.reward["s0", a] = Fraction(-1, m)
            mdp.trans["s0", a] = {("C", a[1]): Fraction(1)}
        else:
            mdp.reward["s0", a] = Fraction(0)
            mdp.trans["s0", a] = {("C", j): Fraction(1, m) for j in range(m)}
    for j, clause in enumerate(formula.clauses):
        c = ("C", j)
        mdp.actions[c] = list(CLAUSE_ACTIONS)
        for b in CLAUSE_ACTIONS:
            mdp.reward[c, b] = Fraction(0)
            succ: dict = {}
            for lit, bit in zip(clause, b):
                i, v = literal_target(lit, bit)
                succ[("x", i, v)] = succ.get(("x", i, v), Fraction(0)) + Fraction(1, 3)
            mdp.trans[c, b] = succ
    for i in range(n):
        for v in (0, 1):
            mdp.actions[("x", i, v)] = [None]
            mdp.reward[("x", i, v), None] = Fraction(int(v == y[i]))
    return mdp


# ---------------------------------------------------------------------------
# layered simulator


@dataclass
class SatMdp:
    spec: CdpSpec
    formula: SatFormula
    y: tuple[int, ...]
    rescaled: bool
    s0: int
    clause_states: list[int]
    relay_states: list[int]
    literal_states: list[tuple[int, int]]   # (state for v=0, state for v=1)
    s0_labels: list[str]                    # meaning of every action index at s0
    clause_labels: list[str]                # meaning of every action index at a clause state

    def unscale(self, value: float) -> float:
        """Map a value of the simulator back to the unrescaled reward scale."""
        return 2 * value - 1 if self.rescaled else value


def _label(a) -> str:
    if a[0] == "try_x":
        return f"[try x{a[1] + 1}]"
    if a[0] == "try_C":
        return f"[try C{a[1] + 1}]"
    return "[solve]"


def sat_to_mdp(formula: SatFormula, y, rescale: bool = True) -> SatMdp:
    """Layered three-step MDP M_y for ``formula``.

    Level 0 holds s0; level 1 the clause states C_j and one relay state per
    variable (reached by ``[try x_i]``); level 2 the literal states
    x_i^0 and x_i^1, whose only reward is 1 at x_i^{y_i}. ``[try C_j]``
    pays -1/m. With ``rescale`` the first-step reward r becomes r/2 + 1/2
    and later rewards r/2, so returns land in [0, 1]; values map back via
    ``V = 2 V' - 1``.

    Actions beyond the meaningful ones repeat the last meaningful action
    of the state.
    """
    cm = compact_mdp(formula, y)
    n, m = formula.n_vars, formula.m
    acts0 = cm.actions["s0"]
    K = max(len(acts0), len(CLAUSE_ACTIONS))
    b = CdpBuilder(3, K)
    s0, _ = b.add_state(0, "s0")
    clause_states = [b.add_state(1, f"C{j + 1}")[0] for j in range(m)]
    relay_states = [b.add_state(1, f"T{i + 1}")[0] for i in range(n)]
    literal_states = [(b.add_state(2, f"x{i + 1}^0")[0], b.add_state(2, f"x{i + 1}^1")[0]) for i in range(n)]

    def sid(label):
        if label == "s0":
            return s0
        if label[0] == "C":
            return clause_states[label[1]]
        return literal_states[label[1]][label[2]]

    def first(r: Fraction) -> float:
        return float(r / 2 + Fraction(1, 2)) if rescale else float(r)

    def later(r: Fraction) -> float:
        return float(r / 2) if rescale else float(r)

    # every state emits one observation and they are added in the same order,
    # so observation ids coincide with state ids
    obs = int
    b.set_initial({s0: 1.0})
    for k in range(K):
        a = acts0[min(k, len(acts0) - 1)]
        if a[0] == "try_x":
            b.set_transition(s0, k, relay_states[a[1]])
        else:
            b.set_transition(s0, k, {sid(t): float(p) for t, p in cm.trans["s0", a].items()})
        b.set_reward(obs(s0), k, first(cm.reward["s0", a]), fixed=True)
    for j, c in enumerate(clause_states):
        for k in range(K):
            bits = CLAUSE_ACTIONS[min(k, len(CLAUSE_ACTIONS) - 1)]
            b.set_transition(c, k, {sid(t): float(p) for t, p in cm.trans[("C", j), bits].items()})
            b.set_reward(obs(c), k, later(cm.reward[("C", j), bits]), fixed=True)
    for i, t in enumerate(relay_states):
        for k in range(K):
            b.set_transition(t, k, {literal_states[i][0]: 0.5, literal_states[i][1]: 0.5})
            b.set_reward(obs(t), k, 0.0, fixed=True)
    for i, pair in enumerate(literal_states):
        for v, s in enumerate(pair):
            for k in range(K):
                b.set_reward(obs(s), k, later(cm.reward[("x", i, v), None]), fixed=True)
    spec = b.build(action_names=[f"a{k}" for k in range(K)])
    s0_labels = [_label(acts0[min(k, len(acts0) - 1)]) for k in range(K)]
    clause_labels = ["b=" + "".join(map(str, CLAUSE_ACTIONS[min(k, 6)])) for k in range(K)]
    return SatMdp(spec, formula, cm.y, rescale, s0, clause_states, relay_states, literal_states,
                  s0_labels, clause_labels)


# ---------------------------------------------------------------------------
# constraint program
#
# A constraint is (guard, terms, rhs) meaning
#     sum(coef * term) = rhs   whenever pi_f(s) = a for every (s, a) in guard.
# Terms are ("Q", s, a), f at a state-action pair, or ("V", s) = f(s, pi_f(s)).


def _q_term(mdp: CompactMdp, s, a):
    return ("V", s) if len(mdp.actions[s]) == 1 else ("Q", s, a)


def expand_rollin(mdp: CompactMdp, mu: dict) -> set:
    """Guarded average-Bellman-error constraints for roll-in distribution ``mu``.

    One constraint per joint choice of greedy actions at the multi-action
    states in the support.
    """
    support = sorted(mu, key=repr)
    choices = [mdp.actions[s] for s in support]
    out = set()
    for combo in itertools.product(*choices):
        coef: dict = {}
        rhs = Fraction(0)
        guard = []
        for s, a in zip(support, combo):
            w = Fraction(mu[s])
            if len(mdp.actions[s]) > 1:
                guard.append((s, a))
            t = _q_term(mdp, s, a)
            coef[t] = coef.get(t, Fraction(0)) + w
            rhs += w * mdp.reward[s, a]
            for s2, p in mdp.successors(s, a).items():
                t2 = ("V", s2)
                coef[t2] = coef.get(t2, Fraction(0)) - w * p
        terms = frozenset((t, c) for t, c in coef.items() if c != 0)
        out.add((tuple(guard), terms, rhs))
    return out


def olive_sat_constraints(formula: SatFormula) -> set:
    """Clause, literal and initial-state constraints of the reduction.

    Roll-ins onto literal states through ``[try C_j]`` or ``[solve]`` are
    deliberately not included.
    """
    mdp = compact_mdp(formula)   # the constraints do not depend on y
    out = set()
    for j in range(formula.m):
        out |= expand_rollin(mdp, {("C", j): Fraction(1)})
    for i in range(formula.n_vars):
        out |= expand_rollin(mdp, {("x", i, 0): Fraction(1, 2), ("x", i, 1): Fraction(1, 2)})
    out |= expand_rollin(mdp, {"s0": Fraction(1)})
    return out


def constraint_kind(c) -> str:
    guard, terms, _ = c
    if guard and guard[0][0] == "s0":
        return "initial"
    if guard:
        return "clause"
    return "literal"


# ---------------------------------------------------------------------------
# evaluating Q-functions on the compact MDP


def greedy(mdp: CompactMdp, f: dict, s):
    """pi_f(s), ties to the first listed action."""
    acts = mdp.actions[s]
    return max(acts, key=lambda a: (f[s, a], -acts.index(a)))


def state_value(mdp: CompactMdp, f: dict, s) -> Fraction:
    return f[s, greedy(mdp, f, s)]


def constraint_holds(mdp: CompactMdp, f: dict, c) -> bool:
    guard, terms, rhs = c
    if any(greedy(mdp, f, s) != a for s, a in guard):
        return True
    total = Fraction(0)
    for t, coef in terms:
        total += coef * (f[t[1], t[2]] if t[0] == "Q" else state_value(mdp, f, t[1]))
    return total == rhs


def rollin(mdp: CompactMdp, f: dict, h: int) -> dict:
    """State distribution after h greedy steps from s0."""
    mu = {"s0": Fraction(1)}
    for _ in range(h):
        nxt: dict = {}
        for s, w in mu.items():
            for s2, p in mdp.successors(s, greedy(mdp, f, s)).items():
                nxt[s2] = nxt.get(s2, Fraction(0)) + w * p
        mu = nxt
    return mu


def bellman_error(mdp: CompactMdp, f: dict, h: int) -> Fraction:
    """Average Bellman error of f on its own roll-in at step h (0-based)."""
    err = Fraction(0)
    for s, w in rollin(mdp, f, h).items():
        a = greedy(mdp, f, s)
        nxt = sum((p * state_value(mdp, f, s2) for s2, p in mdp.successors(s, a).items()), Fraction(0))
        err += w * (f[s, a] - mdp.reward[s, a] - nxt)
    return err


@dataclass
class TraceRound:
    t: int
    level: int            # 0-based step at which the constraint is added
    f: dict
    added: set


def _fill(mdp: CompactMdp, literal_half: set) -> dict:
    """Zero Q-function with constrained literals at 1/2 and clause values backed up."""
    f = {(s, a): Fraction(0) for s, acts in mdp.actions.items() for a in acts}
    for i in literal_half:
        f[("x", i, 0), None] = f[("x", i, 1), None] = Fraction(1, 2)
    _backup_clauses(mdp, f)
    return f


def _backup_clauses(mdp: CompactMdp, f: dict) -> None:
    for j in range(mdp.formula.m):
        c = ("C", j)
        for b in mdp.actions[c]:
            f[c, b] = sum((p * state_value(mdp, f, s2) for s2, p in mdp.successors(c, b).items()), Fraction(0))


def adversarial_olive_trace(formula: SatFormula, y=None) -> list[TraceRound]:
    """An OLIVE run on M_y whose constraints are exactly :func:`olive_sat_constraints`.

    Rounds 1..m put the optimistic value on ``[try C_t]`` and add the
    clause constraints at step 1, rounds m+1..m+n do the same for
    ``[try x_i]`` and the literal constraints, and the final round adds the
    initial-state constraints at step 0. Every chosen f is checked to be
    feasible for the constraints so far, to reach the maximal objective 1
    and to have nonzero Bellman error at the chosen step.
    """
    mdp = compact_mdp(formula, y)
    n, m = formula.n_vars, formula.m
    acts0 = mdp.actions["s0"]
    rounds: list[TraceRound] = []
    have: set = set()
    plan = ([(("try_C", j), 1) for j in range(m)] + [(("try_x", i), 1) for i in range(n)]
            + [(("try_x", 0), 0)])
    for t, (a_star, h) in enumerate(plan, start=1):
        if t <= m:
            f = _fill(mdp, set())
            for b in mdp.actions[("C", a_star[1])]:
                f[("C", a_star[1]), b] = Fraction(1)
        elif t <= m + n:
            i = a_star[1]
            f = _fill(mdp, set(range(i)))
            f[("x", i, 0), None] = f[("x", i, 1), None] = Fraction(1)
            _backup_clauses(mdp, f)
        else:
            f = _fill(mdp, set(range(n)))
        for a in acts0:
            f["s0", a] = Fraction(int(a == a_star))
        if not all(constraint_holds(mdp, f, c) for c in have):
            raise AssertionError(f"round {t}: chosen f violates an earlier constraint")
        if state_value(mdp, f, "s0") != 1:
            raise AssertionError(f"round {t}: chosen f does not reach the maximal objective")
        if bellman_error(mdp, f, h) == 0:
            raise AssertionError(f"round {t}: no Bellman error at step {h}")
        added = expand_rollin(mdp, rollin(mdp, f, h))
        have |= added
        rounds.append(TraceRound(t, h, f, added))
    if have != olive_sat_constraints(formula):
        raise AssertionError("trace constraints differ from the emitted constraint family")
    return rounds


# ---------------------------------------------------------------------------
# deciding the program


def program_optimum(formula: SatFormula, literal_values: dict, constraints=None) -> Fraction | None:
    """Largest feasible f(s0, pi_f(s0)) once the literal values are fixed.

    Clause and initial values are propagated through the guarded
    constraints; every successor coefficient is nonpositive, so taking the
    largest clause value is optimal. Returns None if no guard at s0 is
    feasible within [0, 1].
    """
    cons = olive_sat_constraints(formula) if constraints is None else constraints
    known = {("V", s): v for s, v in literal_values.items()}
    for lit_c in (c for c in cons if constraint_kind(c) == "literal"):
        _, terms, rhs = lit_c
        if sum((coef * known[t] for t, coef in terms), Fraction(0)) != rhs:
            return None
    for kind in ("clause", "initial"):
        best: dict = {}
        for guard, terms, rhs in (c for c in cons if constraint_kind(c) == kind):
            head = [(t, coef) for t, coef in terms if t[0] == "Q"]
            rest = [(t, coef) for t, coef in terms if t[0] != "Q"]
            (qt, qc), = head
            if any(coef > 0 for _, coef in rest):
                raise AssertionError("successor coefficients must be nonpositive")
            q = (rhs - sum((coef * known[t] for t, coef in rest), Fraction(0))) / qc
            if 0 <= q <= 1:
                s = guard[0][0]
                best[s] = max(best.get(s, q), q)
        for s, v in best.items():
            known[("V", s)] = v
    return known.get(("V", "s0"))


def sat_decision_via_olive(formula: SatFormula, budget: int = 1 << 16) -> bool:
    """True iff OLIVE's program on the reduction has optimal value 1.

    At value 1 the literal values are forced to be 0/1, so enumerating
    binary literal assignments is an exact decision procedure. ``budget``
    caps the number of assignments examined.
    """
    n = formula.n_vars
    if 2 ** n > budget:
        raise SearchBudgetExceeded(f"2^{n} literal assignments exceed the budget of {budget}")
    cons = olive_sat_constraints(formula)
    for z in itertools.product((0, 1), repeat=n):
        vals = {}
        for i, v in enumerate(z):
            vals[("x", i, 1)] = Fraction(v)
            vals[("x", i, 0)] = Fraction(1 - v)
        if program_optimum(formula, vals, cons) == 1:
            return True
    return False


def literal_state_values(sat: SatMdp, v_state: np.ndarray) -> np.ndarray:
    """(n, 2) array of V(x_i^0), V(x_i^1) on the unrescaled scale."""
    scale = 2.0 if sat.rescaled else 1.0
    return np.array([[scale * v_state[s] for s in pair] for pair in sat.literal_states])
