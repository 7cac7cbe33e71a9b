"""Random-access frame sources with a small pyramid cache."""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable

from .geometry import FrameDims
from .medianflow import GrayFrame, Pyramid


class VideoSource:
    """Frames ``1..num_frames`` produced on demand by ``loader(frame)``.

    Only a bounded number of pyramids are kept in memory, so long videos can
    be tracked without holding every frame.
    """

    def __init__(self, loader: Callable[[int], GrayFrame], num_frames: int, dims: FrameDims,
                 levels: int = 3, cache_size: int = 48):
        self.loader = loader
        self.num_frames = num_frames
        self.dims = dims
        self.levels = levels
        self.cache_size = cache_size
        self._cache: OrderedDict[int, Pyramid] = OrderedDict()

    def __len__(self) -> int:
        return self.num_frames

    def frame(self, i: int) -> GrayFrame:
        if not 1 <= i <= self.num_frames:
            raise IndexError(f"frame {i} outside 1..{self.num_frames}")
        return self.loader(i)

    def pyramid(self, i: int) -> Pyramid:
        pyr = self._cache.get(i)
        if pyr is not None:
            self._cache.move_to_end(i)
            return pyr
        pyr = Pyramid(self.frame(i), self.levels)
        self._cache[i] = pyr
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return pyr

    @classmethod
    def from_frames(cls, frames, levels: int = 3) -> "VideoSource":
        frames = list(frames)
        h, w = frames[0].shape
        return cls(lambda i: frames[i - 1], len(frames), FrameDims(w, h), levels, cache_size=len(frames) + 1)
