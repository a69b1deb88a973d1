"""Plain-text checkpoints.

Layout (one item per line)::

    closedloop-checkpoint 1
    scalar <name> <value>
    network <name> <layer-count>
    layer <layer-name> <out> <in>
    w <out*in floats, row-major>
    b <out floats>
    end

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .network import Dense, Network

VERSION = 1


class CheckpointError(ValueError):
    pass


def _floats(arr: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(arr))


def dumps(networks: dict[str, Network], scalars: dict[str, float] | None = None) -> str:
    lines = [f"closedloop-checkpoint {VERSION}"]
    for k, v in (scalars or {}).items():
        lines.append(f"scalar {k} {float(v)!r}")
    for name, net in networks.items():
        layers = list(net.layers())
        lines.append(f"network {name} {len(layers)}")
        for lname, layer in layers:
            out, inp = layer.weight.shape
            lines.append(f"layer {lname} {out} {inp}")
            lines.append("w " + _floats(layer.weight))
            lines.append("b " + _floats(layer.bias))
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[dict[str, Network], dict[str, float]]:
    lines = text.splitlines()
    if not lines or lines[0].split() != ["closedloop-checkpoint", str(VERSION)]:
        raise CheckpointError("not a closedloop checkpoint (bad header)")
    networks: dict[str, Network] = {}
    scalars: dict[str, float] = {}
    i = 1
    try:
        while lines[i] != "end":
            parts = lines[i].split()
            if parts[0] == "scalar":
                scalars[parts[1]] = float(parts[2])
                i += 1
                continue
            if parts[0] != "network":
                raise CheckpointError(f"line {i + 1}: unexpected {parts[0]!r}")
            name, count = parts[1], int(parts[2])
            trunk: list[Dense] = []
            heads: dict[str, list[Dense]] = {}
            i += 1
            for _ in range(count):
                _, lname, out, inp = lines[i].split()
                out, inp = int(out), int(inp)
                w = np.array(lines[i + 1].split()[1:], dtype=float).reshape(out, inp)
                b = np.array(lines[i + 2].split()[1:], dtype=float)
                if b.shape != (out,):
                    raise CheckpointError(f"line {i + 3}: bias length mismatch")
                group, _idx = lname.rsplit(".", 1)
                (trunk if group == "trunk" else heads.setdefault(group, [])).append(Dense(w, b))
                i += 3
            networks[name] = Network(trunk, heads)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint near line {i + 1}: {exc}") from exc
    return networks, scalars


def save(path, networks, scalars=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(networks, scalars))


def load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_text())
