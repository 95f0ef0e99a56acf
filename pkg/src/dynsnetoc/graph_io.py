"""File formats: edge lists, latent-state CSV, draw CSV, run configs and
corpus ingestion.

Edge-list format (UTF-8, LF, TAB-separated)::

    # dynsnetoc-edges v1 T=<int> N=<int>
    t<TAB>i<TAB>j<TAB>count

with 1-based timesteps, 0-based node indices i <= j, counts >= 1, and
strictly increasing (t, i, j) order.  An optional label file carries one
UTF-8 node label per line (line number = node index).

Every writer is deterministic given its inputs: re-running a command
overwrites files byte-identically.  Floats are written with 17
significant digits so they round-trip exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ParameterError
from .inference import Chain, ParamLayout
from .model import DynamicMultigraph, LatentState

__all__ = [
    "save_graph", "load_graph", "save_labels", "load_labels",
    "save_latent_state", "load_latent_state",
    "save_draws", "load_draws",
    "RunConfig", "load_config", "apply_overrides",
    "ingest_corpus", "read_sentences_jsonl",
]

_HEADER_PREFIX = "# dynsnetoc-edges v1"


def _fmt(x):
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# Edge lists

def save_graph(graph: DynamicMultigraph, path):
    """Write the edge-list file; byte-identical on repeat saves."""
    lines = [f"{_HEADER_PREFIX} T={graph.num_timesteps} N={graph.num_nodes}\n"]
    for t in range(1, graph.num_timesteps + 1):
        ii, jj, cc = graph.edges(t)
        for i, j, c in zip(ii, jj, cc):
            lines.append(f"{t}\t{i}\t{j}\t{c}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_graph(path, labels_path=None) -> DynamicMultigraph:
    """Parse an edge-list file; malformed lines report their line number."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith(_HEADER_PREFIX):
            raise DataFormatError(
                f"{path}:1: bad or missing header (expected '{_HEADER_PREFIX} ...')")
        try:
            fields = dict(tok.split("=") for tok in header.split()[3:])
            big_t = int(fields["T"])
            n = int(fields["N"])
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"{path}:1: malformed header: {exc}") from None
        per_t = [[] for _ in range(big_t)]
        prev_key = None
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 TAB-separated fields")
            try:
                t, i, j, c = (int(v) for v in parts)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-integer field") from None
            if not 1 <= t <= big_t:
                raise DataFormatError(f"{path}:{lineno}: timestep {t} out of range")
            if i > j:
                raise DataFormatError(
                    f"{path}:{lineno}: edges must satisfy i <= j (got {i} > {j})")
            if i < 0 or j >= n:
                raise DataFormatError(f"{path}:{lineno}: node index out of range")
            if c < 1:
                raise DataFormatError(f"{path}:{lineno}: count must be >= 1")
            key = (t, i, j)
            if prev_key is not None and key <= prev_key:
                raise DataFormatError(
                    f"{path}:{lineno}: lines must be strictly increasing in "
                    f"(t, i, j); duplicate or out-of-order entry {key}")
            prev_key = key
            per_t[t - 1].append((i, j, c))
    slices = []
    for rows in per_t:
        if rows:
            arr = np.array(rows, dtype=np.int64)
            slices.append((arr[:, 0], arr[:, 1], arr[:, 2]))
        else:
            e = np.empty(0, dtype=np.int64)
            slices.append((e, e.copy(), e.copy()))
    labels = load_labels(labels_path) if labels_path else None
    return DynamicMultigraph(big_t, n, slices, labels)


def save_labels(labels, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lab in labels:
            fh.write(f"{lab}\n")


def load_labels(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


# ---------------------------------------------------------------------------
# Latent state CSV (long format)

def save_latent_state(state: LatentState, path):
    """Tidy CSV with columns block,t,k,i,value; t and k are 1-based."""
    lines = ["block,t,k,i,value\n"]
    for i, v in enumerate(state.w0):
        lines.append(f"w0,,,{i},{_fmt(v)}\n")
    if state.theta is not None:
        for i, v in enumerate(state.theta):
            lines.append(f"theta,,,{i},{_fmt(v)}\n")
    for t in range(state.num_timesteps):
        for k in range(state.num_communities):
            for i, v in enumerate(state.beta[t, k]):
                lines.append(f"beta,{t + 1},{k + 1},{i},{_fmt(v)}\n")
    for t in range(state.num_timesteps - 1):
        for k in range(state.num_communities):
            for i, v in enumerate(state.gamma[t, k]):
                lines.append(f"gamma,{t + 1},{k + 1},{i},{_fmt(v)}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_latent_state(path) -> LatentState:
    blocks = {"w0": {}, "theta": {}, "beta": {}, "gamma": {}}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "block,t,k,i,value":
            raise DataFormatError(f"{path}:1: unexpected latent-state header")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataFormatError(f"{path}:{lineno}: expected 5 fields")
            block, t, k, i, value = parts
            if block not in blocks:
                raise DataFormatError(f"{path}:{lineno}: unknown block {block!r}")
            key = (int(t) if t else 0, int(k) if k else 0, int(i))
            blocks[block][key] = float(value)
    if not blocks["w0"]:
        raise DataFormatError(f"{path}: no w0 entries")
    ell = max(i for (_, _, i) in blocks["w0"]) + 1
    w0 = np.array([blocks["w0"][(0, 0, i)] for i in range(ell)])
    theta = None
    if blocks["theta"]:
        theta = np.array([blocks["theta"][(0, 0, i)] for i in range(ell)])
    if blocks["beta"]:
        big_t = max(t for (t, _, _) in blocks["beta"])
        p = max(k for (_, k, _) in blocks["beta"])
        beta = np.empty((big_t, p, ell))
        for (t, k, i), v in blocks["beta"].items():
            beta[t - 1, k - 1, i] = v
    else:
        raise DataFormatError(f"{path}: no beta entries")
    gamma = np.empty((big_t - 1, p, ell))
    for (t, k, i), v in blocks["gamma"].items():
        gamma[t - 1, k - 1, i] = v
    return LatentState(w0=w0, beta=beta, gamma=gamma, theta=theta)


# ---------------------------------------------------------------------------
# Draw CSV

def _draw_columns(layout: ParamLayout):
    cols = ["log_posterior"] + layout.hyper_names()
    cols += [f"w0_{i}" for i in range(layout.L)]
    cols += [f"beta_t{t}_k{k}_n{i}"
             for t in range(1, layout.T + 1)
             for k in range(1, layout.p + 1)
             for i in range(layout.L)]
    cols += [f"gamma_t{t}_k{k}_n{i}"
             for t in range(1, layout.T)
             for k in range(1, layout.p + 1)
             for i in range(layout.L)]
    return cols


def save_draws(chain: Chain, path):
    """One row per stored draw: log_posterior, all hyperparameters (fixed
    tau included), then w0, beta and gamma flattened by (t, k, i)."""
    cols = _draw_columns(chain.layout)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in range(len(chain)):
            row = np.concatenate([
                [chain.log_posterior_trace[r]],
                chain.hyper_draws[r],
                chain.latent_draws[r],
            ])
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def load_draws(path) -> Chain:
    """Load a draw CSV back into a Chain (diagnostics carry defaults).

    The column count is validated against the layout implied by the
    header: 1 + (4 + 2p) + L + 2*T*p*L - p*L columns.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[0] != "log_posterior":
        raise DataFormatError(f"{path}: first column must be log_posterior")
    try:
        p = max(int(c.split("_")[1]) for c in header if c.startswith("a_"))
        ell = 1 + max(int(c.split("_")[1]) for c in header if c.startswith("w0_"))
        big_t = max(int(c.split("_")[1][1:]) for c in header
                    if c.startswith("beta_t"))
    except ValueError:
        raise DataFormatError(f"{path}: draw header is missing required "
                              "columns") from None
    expected = 1 + (4 + 2 * p) + ell + 2 * big_t * p * ell - p * ell
    if len(header) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} columns for (L={ell}, T={big_t}, "
            f"p={p}), found {len(header)}")
    if data.shape[1] != len(header):
        raise DataFormatError(f"{path}: data width differs from header")
    tau_col = data[:, 1 + 2]
    tau_fixed = bool(len(tau_col) > 0 and np.all(tau_col == tau_col[0]))
    layout = ParamLayout(L=ell, T=big_t, p=p, tau_fixed=tau_fixed,
                         tau_value=float(tau_col[0]) if len(tau_col) else None)
    n_hyper = 4 + 2 * p
    return Chain(
        layout=layout,
        latent_draws=data[:, 1 + n_hyper:],
        hyper_draws=data[:, 1:1 + n_hyper],
        log_posterior_trace=data[:, 0],
        accept_stat=math.nan,
        divergences=0,
        step_size=math.nan,
        mass_diag=np.empty(0),
        warmup_logp=np.empty(0),
        seed=-1,
    )


# ---------------------------------------------------------------------------
# Run configuration

_CONFIG_SCHEMA = {
    "model": {"p": None, "alpha": 60.0, "sigma": 0.2, "tau": 1.0, "psi": 5.0,
              "a": None, "b": None, "prior_scales": {}},
    "sim": {"T": 3, "epsilon": 1e-4, "seed": 0},
    "infer": {"L": None, "num_warmup": 1000, "num_samples": 1000, "thin": 1,
              "target_accept": 0.8, "max_tree_depth": 10, "chains": 1,
              "seed": 0, "tau_fixed": True},
    "output": {"directory": "out"},
}


@dataclass
class RunConfig:
    """Validated key-value configuration (sections model/sim/infer/output).

    Unknown keys are rejected.  Every key has a default except model.p;
    a and b default to vectors of ones with length p.
    """

    model: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    infer: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {}
        raw = {"model": self.model, "sim": self.sim, "infer": self.infer,
               "output": self.output}
        for section, defaults in _CONFIG_SCHEMA.items():
            given = raw[section] or {}
            unknown = set(given) - set(defaults)
            if unknown:
                raise DataFormatError(
                    f"unknown config keys in [{section}]: {sorted(unknown)}")
            merged[section] = {**defaults, **given}
        if merged["model"]["p"] is None:
            raise DataFormatError("config is missing required key model.p")
        p = int(merged["model"]["p"])
        if merged["model"]["a"] is None:
            merged["model"]["a"] = [1.0] * p
        if merged["model"]["b"] is None:
            merged["model"]["b"] = [1.0] * p
        for name in ("a", "b"):
            if len(merged["model"][name]) != p:
                raise DataFormatError(f"model.{name} must have length p = {p}")
        self.model, self.sim = merged["model"], merged["sim"]
        self.infer, self.output = merged["infer"], merged["output"]

    def hyperparams(self):
        from .model import Hyperparams
        m = self.model
        return Hyperparams(alpha=m["alpha"], sigma=m["sigma"], tau=m["tau"],
                           psi=m["psi"], a=m["a"], b=m["b"],
                           tau_fixed=bool(self.infer["tau_fixed"]))

    def sim_config(self):
        from .generator import SimConfig
        return SimConfig(hyper=self.hyperparams(), T=int(self.sim["T"]),
                         epsilon=float(self.sim["epsilon"]),
                         seed=int(self.sim["seed"]))

    def inference_config(self):
        from .inference import InferenceConfig
        inf = self.infer
        tau_fixed_value = float(self.model["tau"]) if inf["tau_fixed"] else None
        return InferenceConfig(
            p=int(self.model["p"]),
            L=None if inf["L"] is None else int(inf["L"]),
            num_warmup=int(inf["num_warmup"]),
            num_samples=int(inf["num_samples"]),
            thin=int(inf["thin"]),
            target_accept=float(inf["target_accept"]),
            max_tree_depth=int(inf["max_tree_depth"]),
            seed=int(inf["seed"]),
            tau_fixed_value=tau_fixed_value,
            prior_scales=dict(self.model["prior_scales"]),
        )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    unknown = set(doc) - set(_CONFIG_SCHEMA)
    if unknown:
        raise DataFormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return RunConfig(**{k: doc.get(k, {}) for k in _CONFIG_SCHEMA})


def apply_overrides(config_doc: dict, overrides):
    """Apply ``--set section.key=value`` pairs to a raw config dict.

    Values are parsed as JSON when possible, otherwise taken as strings.
    Unknown paths are rejected by RunConfig validation afterwards.
    """
    for item in overrides:
        if "=" not in item:
            raise DataFormatError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if len(parts) != 2:
            raise DataFormatError(
                f"--set key must look like section.name, got {key!r}")
        section, name = parts
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        config_doc.setdefault(section, {})[name] = parsed
    return config_doc


# ---------------------------------------------------------------------------
# Corpus ingestion

def ingest_corpus(documents, vocab_min_count=1):
    """Build a co-occurrence multigraph from (timestep, tokens) sentences.

    Within each sentence, tokens are deduplicated and every unordered pair
    of distinct surviving tokens increments that timestep's count by one.
    Tokens whose total occurrence count across the corpus falls below
    ``vocab_min_count`` are dropped globally.  The node universe is the
    surviving vocabulary ordered by (descending count, token).

    Returns ``(graph, labels)``.
    """
    documents = list(documents)
    if not documents:
        raise DataFormatError("empty corpus")
    times = sorted({t for t, _ in documents})
    if times[0] != 1 or times != list(range(1, len(times) + 1)):
        raise DataFormatError(
            f"timesteps must be contiguous from 1, got {times}")
    counts = {}
    for _, tokens in documents:
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = sorted((tok for tok, c in counts.items() if c >= vocab_min_count),
                   key=lambda tok: (-counts[tok], tok))
    if not vocab:
        raise DataFormatError("vocab_min_count removed every token")
    index = {tok: i for i, tok in enumerate(vocab)}
    big_t = times[-1]
    edge_dicts = [dict() for _ in range(big_t)]
    for t, tokens in documents:
        ids = sorted({index[tok] for tok in tokens if tok in index})
        d = edge_dicts[t - 1]
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                key = (ids[x], ids[y])
                d[key] = d.get(key, 0) + 1
    graph = DynamicMultigraph.from_edge_dicts(edge_dicts, len(vocab),
                                              node_labels=vocab)
    return graph, vocab


def read_sentences_jsonl(path):
    """Read sentences from JSON-lines: {"t": int, "tokens": [str, ...]}."""
    documents = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                documents.append((int(obj["t"]), list(obj["tokens"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    return documents
