#!/usr/bin/env python3
"""Dump the service's OpenAPI description to docs/openapi.json."""

import json
from pathlib import Path

from obsimpact.server import AppState, create_app


def main() -> None:
    app = create_app(AppState())
    out = Path(__file__).resolve().parent.parent / "docs" / "openapi.json"
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(app.openapi(), indent=1))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
