"""ASCII PLY and CSV point-cloud files.

PLY layout::

    ply
    format ascii 1.0
    comment config_hash <hash>
    element vertex <N>
    property float x
    property float y
    property float z
    property float velocity
    property float power
    property int bs_id
    end_header
    <x> <y> <z> <velocity> <power> <bs_id>   (N rows)

CSV layout: a ``# config_hash=<hash>`` line, the header
``x,y,z,v,power,bs_id`` and one row per point.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fusion import PointCloud4D

CSV_COLUMNS = ("x", "y", "z", "v", "power", "bs_id")


class CloudFormatError(ValueError):
    pass


def fmt(x: float) -> str:
    """Shortest round-tripping text form of a float."""
    return repr(float(x))


def _rows(cloud: PointCloud4D, sep: str) -> list[str]:
    return [
        sep.join([fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(v), fmt(pw), str(int(b))])
        for p, v, pw, b in zip(cloud.positions, cloud.velocity, cloud.power, cloud.bs_id)
    ]


def write_ply(cloud: PointCloud4D, path: str | Path, config_hash: str = "") -> None:
    header = ["ply", "format ascii 1.0"]
    if config_hash:
        header.append(f"comment config_hash {config_hash}")
    header += [f"element vertex {len(cloud)}"]
    header += [f"property float {name}" for name in ("x", "y", "z", "velocity", "power")]
    header += ["property int bs_id", "end_header"]
    Path(path).write_text("\n".join(header + _rows(cloud, " ")) + "\n")


def write_csv(cloud: PointCloud4D, path: str | Path, config_hash: str = "") -> None:
    lines = [f"# config_hash={config_hash}"] if config_hash else []
    lines.append(",".join(CSV_COLUMNS))
    Path(path).write_text("\n".join(lines + _rows(cloud, ",")) + "\n")


def read_ply(path: str | Path) -> tuple[PointCloud4D, str]:
    """Read an ASCII PLY with at least ``x, y, z`` vertex properties.

    Returns the cloud and the config hash found in its comments (or ``""``).
    Missing velocity / power / bs_id properties default to zero.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: not a PLY file")
    n, props, cfg_hash, body = None, [], "", None
    in_vertex = False
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise CloudFormatError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "comment" and len(tok) >= 3 and tok[1] == "config_hash":
            cfg_hash = tok[2]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i + 1
            break
    if n is None or body is None:
        raise CloudFormatError(f"{path}: missing vertex element or end_header")
    if not {"x", "y", "z"} <= set(props):
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z properties")
    rows = [ln.split() for ln in lines[body : body + n]]
    if len(rows) != n or any(len(r) < len(props) for r in rows):
        raise CloudFormatError(f"{path}: expected {n} vertex rows with {len(props)} values")
    data = np.array([[float(v) for v in r[: len(props)]] for r in rows]).reshape(n, len(props))
    col = {p: data[:, i] for i, p in enumerate(props)}
    zeros = np.zeros(n)
    cloud = PointCloud4D(
        positions=np.column_stack([col["x"], col["y"], col["z"]]) if n else np.zeros((0, 3)),
        velocity=col.get("velocity", zeros),
        power=col.get("power", zeros),
        bs_id=col.get("bs_id", zeros).astype(int),
    )
    return cloud, cfg_hash


def read_csv(path: str | Path) -> tuple[PointCloud4D, str]:
    cfg_hash = ""
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if line.startswith("# config_hash="):
                cfg_hash = line.split("=", 1)[1].strip()
            continue
        if header is None:
            header = line.split(",")
            if tuple(header) != CSV_COLUMNS:
                raise CloudFormatError(f"{path}: unexpected columns {header}")
            continue
        if line.strip():
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows).reshape(-1, len(CSV_COLUMNS))
    return (
        PointCloud4D(data[:, :3].copy(), data[:, 3].copy(), data[:, 4].copy(), data[:, 5].astype(int)),
        cfg_hash,
    )
