"""Execution traces: the record list produced by the engine, plus the text
format used for export and standalone verification.

Each record is ``(time, node, key, value)``:

* ``key`` a machine name: output switch of a correct node to ``value``;
* ``loop``: loopback delivery at ``time`` of the event sent at ``value``;
* ``fault``: ``corrupt`` (node taken over) or ``reset`` (transient state reset);
* ``darts``: DARTS port changed to ``value`` (0/1);
* full level only: ``port<j>`` deliveries, ``flagreset``, ``timeout:<name>``.

File lines are ``time,node,key,value`` after ``#`` header lines.  Product
states on port records are joined with ``|``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterable

MACHINE_KEYS = ("core", "suspect", "ext", "rinit", "rmain", "swr")


@dataclass
class Trace:
    meta: dict
    records: list[tuple] = field(default_factory=list)

    # --- views -------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.meta["n"]

    @property
    def horizon(self) -> int:
        return self.meta["horizon"]

    def switches(self, node: int, machine: str = "core") -> list[tuple[int, str]]:
        """Normalized switch list ``[(t, state)]`` of one machine of one node."""
        out: list[tuple[int, str]] = []
        for t, i, key, val in self.records:
            if i == node and key == machine:
                if out and out[-1][1] == val:
                    continue
                out.append((t, val))
        return out

    def all_switches(self, machine: str = "core") -> dict[int, list[tuple[int, str]]]:
        out: dict[int, list[tuple[int, str]]] = {i: [] for i in range(self.n)}
        for t, i, key, val in self.records:
            if key == machine:
                lst = out[i]
                if lst and lst[-1][1] == val:
                    continue
                lst.append((t, val))
        return out

    def loopbacks(self, node: int) -> dict[int, int]:
        """send time -> loopback delivery time, for the node's own events."""
        return {int(val): t for t, i, key, val in self.records if i == node and key == "loop"}

    def all_loopbacks(self) -> dict[int, dict[int, int]]:
        out: dict[int, dict[int, int]] = {i: {} for i in range(self.n)}
        for t, i, key, val in self.records:
            if key == "loop":
                out[i][int(val)] = t
        return out

    def corruptions(self) -> dict[int, int]:
        out = {int(k): v for k, v in self.meta.get("faulty_at", {}).items()}
        for t, i, key, val in self.records:
            if key == "fault" and val == "corrupt":
                out.setdefault(i, t)
        return out

    def transient_resets(self) -> list[tuple[int, int]]:
        return [(t, i) for t, i, key, val in self.records if key == "fault" and val == "reset"]

    def faulty_channels(self) -> set[tuple[int, int]]:
        return {tuple(c) for c in self.meta.get("faulty_channels", [])}

    # --- text format ------------------------------------------------------
    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    def write(self, fh) -> None:
        fh.write("# fatalsim trace v1\n")
        fh.write("# meta " + json.dumps(self.meta, sort_keys=True, separators=(",", ":")) + "\n")
        for t, i, key, val in self.records:
            if isinstance(val, tuple):
                val = "|".join(val)
            fh.write(f"{t},{i},{key},{val}\n")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            self.write(fh)

    @classmethod
    def loads(cls, text: str) -> "Trace":
        return cls.read(io.StringIO(text))

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.read(fh)

    @classmethod
    def read(cls, lines: Iterable[str]) -> "Trace":
        meta = None
        records = []
        for line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# meta "):
                    meta = json.loads(line[len("# meta "):])
                continue
            t, i, key, val = line.split(",", 3)
            rec_val: object = val
            if key in ("loop", "darts"):
                rec_val = int(val)
            elif key.startswith("port"):
                rec_val = tuple(val.split("|"))
            records.append((int(t), int(i), key, rec_val))
        if meta is None:
            raise ValueError("trace file lacks a meta header")
        return cls(meta, records)
