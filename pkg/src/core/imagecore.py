"""
Image Core Module

Decoding, color conversion and pixel containers shared by every stage.
Images are kept at native resolution as numpy arrays in row-major order.
"""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from skimage.color import rgb2lab

from src.core.errors import UnsupportedFormat, CorruptFile, ImageTooSmall

MIN_IMAGE_SIDE = 16

PNG_SIGNATURE = b'\x89PNG\r\n\x1a\n'
NETPBM_SIGNATURES = (b'P5', b'P6')

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB raster; data has shape (height, width, 3)."""
    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel array shape {self.data.shape} does not match {self.width}x{self.height}x3")
        if self.width < MIN_IMAGE_SIDE or self.height < MIN_IMAGE_SIDE:
            raise ImageTooSmall(
                f"image is {self.width}x{self.height}; both sides must be at least {MIN_IMAGE_SIDE}")

    @classmethod
    def from_array(cls, array: np.ndarray) -> 'Image':
        array = np.ascontiguousarray(array, dtype=np.uint8)
        if array.ndim == 2:
            array = np.repeat(array[:, :, None], 3, axis=2)
        return cls(width=array.shape[1], height=array.shape[0], data=array)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance raster in [0, 255]; data has shape (height, width)."""
    width: int
    height: int
    data: np.ndarray


@dataclass(frozen=True, eq=False)
class LabImage:
    """CIELAB raster (D65); data has shape (height, width, 3)."""
    width: int
    height: int
    data: np.ndarray


def _sniff_format(header: bytes) -> str:
    if header.startswith(PNG_SIGNATURE):
        return 'PNG'
    if header[:2] in NETPBM_SIGNATURES:
        return 'PPM'
    raise UnsupportedFormat("only PNG and binary PPM (P6) / PGM (P5) images are supported")


def decode_image(raw: bytes, source: str = '<bytes>') -> Image:
    """Decode PNG / P6 / P5 bytes into an RGB Image."""
    _sniff_format(raw[:8])
    try:
        with PILImage.open(io.BytesIO(raw)) as pil_image:
            pil_image.load()
            if pil_image.mode not in ('RGB', 'L'):
                pil_image = pil_image.convert('RGB')
            array = np.asarray(pil_image, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptFile(f"cannot decode {source}: {e}") from None

    if array.ndim == 2:
        # PGM: expand to three equal channels
        array = np.repeat(array[:, :, None], 3, axis=2)

    height, width = array.shape[:2]
    if width < MIN_IMAGE_SIDE or height < MIN_IMAGE_SIDE:
        raise ImageTooSmall(
            f"{source} is {width}x{height}; both sides must be at least {MIN_IMAGE_SIDE}")
    return Image(width=width, height=height, data=np.ascontiguousarray(array))


def load_image(path: str) -> Image:
    """
    Load a PNG or binary PPM/PGM file.

    Args:
        path: Image file path

    Returns:
        Image: decoded RGB image at native resolution

    Raises:
        UnsupportedFormat, CorruptFile, ImageTooSmall
    """
    with open(path, 'rb') as file:
        raw = file.read()
    return decode_image(raw, source=str(path))


def save_image(img: Image, path: str):
    """Write an Image as PNG. Output bytes depend only on pixel data."""
    PILImage.fromarray(img.data).save(path, format='PNG', optimize=False)


def to_grayscale(img: Image) -> GrayImage:
    """Rec. 601 luminance per pixel."""
    luma = img.data.astype(np.float64) @ LUMA_WEIGHTS
    np.clip(luma, 0.0, 255.0, out=luma)
    return GrayImage(width=img.width, height=img.height, data=luma)


def rgb_to_lab(img: Image) -> LabImage:
    """sRGB to CIELAB under the D65 illuminant; L is clipped to [0, 100]."""
    lab = rgb2lab(img.data, illuminant='D65')
    np.clip(lab[..., 0], 0.0, 100.0, out=lab[..., 0])
    return LabImage(width=img.width, height=img.height, data=lab)
