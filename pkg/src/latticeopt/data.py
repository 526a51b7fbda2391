"""Random topology sampling, stability screening, and dataset persistence.

Sampling is Bernoulli(0.5) per member.  Each sample draws from its own
generator seeded by (master seed, sample index), so generation is bit-stable
regardless of ordering or worker count.  Samples whose structure fails the
factorization or whose compliance exceeds the screening threshold are dropped.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from . import fem, lattice
from .lattice import GridSpec, UnitTopology


@dataclass(frozen=True)
class DatasetMeta:
    seed: int
    requested_count: int
    threshold: float
    retained_count: int


@dataclass(frozen=True)
class Dataset:
    """Retained (topology bits, volume, compliance) rows plus generation metadata."""

    m: int
    bits: np.ndarray  # (R, 4*m*m) uint8
    volumes: np.ndarray  # (R,) m^3
    compliances: np.ndarray  # (R,) N*m
    meta: DatasetMeta

    def __len__(self) -> int:
        return len(self.volumes)

    def rows(self):
        for k in range(len(self)):
            yield self.bits[k], float(self.volumes[k]), float(self.compliances[k])


def sample_topology(m: int, rng: np.random.Generator) -> UnitTopology:
    """One topology with each of the 4*m*m bits independently Bernoulli(0.5)."""
    return UnitTopology(m, rng.integers(0, 2, size=4 * m * m, dtype=np.uint8))


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def _generate_chunk(m: int, seed: int, threshold: float, start: int, stop: int):
    spec = GridSpec(m)
    evaluator = fem.get_evaluator(spec)
    kept_bits, kept_vol, kept_comp = [], [], []
    for idx in range(start, stop):
        x = sample_topology(m, _sample_rng(seed, idx))
        volume, result = evaluator.analyze(x, threshold)
        if result.stable:
            kept_bits.append(x.bits)
            kept_vol.append(volume)
            kept_comp.append(result.compliance)
    return kept_bits, kept_vol, kept_comp


def generate(
    m: int, count: int, seed: int, threshold: float = fem.DEFAULT_THRESHOLD, workers: int = 1
) -> Dataset:
    """Sample `count` topologies, analyze each, and retain the stable ones.

    Ordering is by sample index; results are identical for any worker count.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if workers <= 1:
        chunks = [_generate_chunk(m, seed, threshold, 0, count)]
    else:
        bounds = np.linspace(0, count, workers * 4 + 1, dtype=int)
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_generate_chunk, m, seed, threshold, int(a), int(b))
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            chunks = [f.result() for f in futures]

    bits = [b for c in chunks for b in c[0]]
    vols = [v for c in chunks for v in c[1]]
    comps = [y for c in chunks for y in c[2]]
    bits_arr = (
        np.asarray(bits, dtype=np.uint8) if bits else np.empty((0, 4 * m * m), dtype=np.uint8)
    )
    return Dataset(
        m=m,
        bits=bits_arr,
        volumes=np.asarray(vols, dtype=np.float64),
        compliances=np.asarray(comps, dtype=np.float64),
        meta=DatasetMeta(seed, count, threshold, len(vols)),
    )


def stats(d: Dataset):
    """Population mean/std of volume and compliance plus ground-structure reference."""
    if len(d) == 0:
        raise ValueError("dataset is empty")
    spec = GridSpec(d.m)
    g_vol, g_res = fem.analyze(lattice.ground(d.m), spec, threshold=np.inf)
    return {
        "count": len(d),
        "volume_mean": float(d.volumes.mean()),
        "volume_std": float(d.volumes.std()),
        "compliance_mean": float(d.compliances.mean()),
        "compliance_std": float(d.compliances.std()),
        "ground_volume": g_vol,
        "ground_compliance": g_res.compliance,
    }


def save_csv(d: Dataset, path) -> None:
    """Dataset CSV: metadata comment line, header, then one row per sample."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(
            f"# m={d.m} members={4 * d.m * d.m} seed={d.meta.seed} "
            f"threshold={d.meta.threshold:.17g} requested={d.meta.requested_count}\n"
        )
        fh.write("bits,volume_m3,compliance_Nm\n")
        for bits, vol, comp in d.rows():
            s = "".join("1" if b else "0" for b in bits)
            fh.write(f"{s},{vol:.17g},{comp:.17g}\n")


def load_csv(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ValueError(f"{path}:1: expected metadata comment line")
        meta = dict(tok.split("=", 1) for tok in header[2:].split())
        m = int(meta["m"])
        if int(meta["members"]) != 4 * m * m:
            raise ValueError(f"{path}:1: members field inconsistent with m")
        columns = fh.readline().strip()
        if columns != "bits,volume_m3,compliance_Nm":
            raise ValueError(f"{path}:2: unexpected header {columns!r}")
        bits, vols, comps = [], [], []
        for lineno, line in enumerate(fh, start=3):
            line = line.strip()
            if not line:
                continue
            try:
                bstr, vol, comp = line.split(",")
                row = np.frombuffer(bstr.encode("ascii"), dtype=np.uint8) - ord("0")
                if len(row) != 4 * m * m or not np.all(row <= 1):
                    raise ValueError("bad bits field")
                bits.append(row)
                vols.append(float(vol))
                comps.append(float(comp))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
    return Dataset(
        m=m,
        bits=np.asarray(bits, dtype=np.uint8) if bits else np.empty((0, 4 * m * m), np.uint8),
        volumes=np.asarray(vols),
        compliances=np.asarray(comps),
        meta=DatasetMeta(
            seed=int(meta["seed"]),
            requested_count=int(meta["requested"]),
            threshold=float(meta["threshold"]),
            retained_count=len(vols),
        ),
    )
