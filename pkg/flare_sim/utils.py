import json
import os
import tempfile
from pathlib import Path
from typing import Any

from json_repair import repair_json  # type: ignore[misc]


def safe_json_loads(json_str: str) -> str:
    """Repair trailing commas, single quotes and similar slips in a hand-edited JSON text.

    Args:
        json_str: Raw document text

    Returns:
        Valid JSON text

    Raises:
        ValueError: If nothing parseable is left after repair
    """
    repaired = repair_json(json_str)
    if not repaired:
        msg = "Document holds no parseable JSON"
        raise ValueError(msg)
    return repaired


def load_json_document(path: Path) -> Any:
    """Read a hand-edited JSON file, repairing minor syntax slips before parsing."""
    return json.loads(safe_json_loads(path.read_text(encoding="utf-8")))


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write `payload` to a temporary sibling of `path` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    tmp_path = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        tmp_path.chmod(0o644)
        tmp_path.replace(path)
    except BaseException:
        tmp_path.unlink(missing_ok=True)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def to_json_line(record: dict[str, Any]) -> str:
    """Serialize one manifest record; keys sorted so reruns are byte-identical."""
    return json.dumps(record, sort_keys=True) + "\n"
