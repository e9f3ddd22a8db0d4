from __future__ import annotations

import base64
import io
from pathlib import Path

from PIL import Image

from memloop.corpus import ImageRef


def downscale(img: Image.Image, max_edge_px: int) -> Image.Image:
    """Shrink so the longest edge is at most ``max_edge_px``; never enlarges."""
    w, h = img.size
    longest = max(w, h)
    if longest <= max_edge_px:
        return img
    scale = max_edge_px / longest
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    return img.resize(size, Image.LANCZOS)


def image_data_url(ref: ImageRef, base_dir=None) -> str:
    """Load a local or data-URL image, compress it, and return a PNG data URL.

    Remote http(s) locators are returned unchanged; the endpoint fetches them.
    """
    uri = ref.uri
    if uri.startswith(("http://", "https://")):
        return uri
    if uri.startswith("data:"):
        raw = base64.b64decode(uri.split(",", 1)[1])
    else:
        path = Path(uri)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        raw = path.read_bytes()
    img = Image.open(io.BytesIO(raw))
    img = downscale(img.convert("RGB"), ref.max_edge_px)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")
