import numpy as np
from numpy.testing import assert_allclose

from hsi.data_io import HsiCube, LabelGrid

try:
    import torch
    import torch.nn.functional as F
except ImportError:
    torch = None
    F = None


def conv3d_oracle(x, weights, bias, stride, padding):
    """Direct summation over each output's receptive field, in float64."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n, c, h, w, d = x.shape
    out_channels, _, kh, kw, kd = weights.shape
    sh, sw, sd = stride
    ph, pw, pd = padding
    padded = np.zeros((n, c, h + 2 * ph, w + 2 * pw, d + 2 * pd))
    padded[:, :, ph:ph + h, pw:pw + w, pd:pd + d] = x
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    od = (d + 2 * pd - kd) // sd + 1
    out = np.zeros((n, out_channels, oh, ow, od))
    for i in range(n):
        for o in range(out_channels):
            for a in range(oh):
                for b in range(ow):
                    for e in range(od):
                        field = padded[i, :, a * sh:a * sh + kh, b * sw:b * sw + kw, e * sd:e * sd + kd]
                        out[i, o, a, b, e] = bias[o] + np.sum(field * weights[o])
    return out


def central_difference(fn, array, index, step=None):
    """d fn / d array[index] by central differences; array is perturbed in place and restored."""
    original = array[index]
    if step is None:
        step = 1e-4 * max(1.0, abs(float(original)))
    array[index] = original + step
    plus = float(fn())
    array[index] = original - step
    minus = float(fn())
    array[index] = original
    return (plus - minus) / (2 * step)


def numeric_gradient(fn, array, step=None):
    grad = np.zeros(array.shape, dtype=np.float64)
    for index in np.ndindex(*array.shape):
        grad[index] = central_difference(fn, array, index, step)
    return grad


def assert_gradients_close(analytic, numeric, rtol=1e-3, atol=1e-7):
    assert_allclose(np.asarray(analytic, dtype=np.float64), numeric, rtol=rtol, atol=atol)


def signature_scene(height=4, width=8, bands=20, num_classes=9, noise=0.02, seed=0):
    """
    Every pixel labeled; pixel (r, c) belongs to class (r * width + c) % num_classes + 1
    and carries that class's spectral signature (a block of bright bands) plus noise.
    """
    rng = np.random.default_rng(seed)
    classes = (np.arange(height * width) % num_classes + 1).reshape(height, width)
    signatures = np.zeros((num_classes, bands), dtype=np.float32)
    width_per_class = max(1, bands // num_classes)
    for k in range(num_classes):
        start = (k * width_per_class) % bands
        signatures[k, start:start + width_per_class] = 1.0
    values = signatures[classes - 1] + noise * rng.standard_normal((height, width, bands))
    names = [f"Signature {k}" for k in range(1, num_classes + 1)]
    return HsiCube(values.astype(np.float32)), LabelGrid(classes, names)


def gaussian_scene(per_class, num_classes=9, bands=20, width=20, spread=0.05, seed=0):
    """
    Class k fills a horizontal band of per_class // width rows; spectra are
    drawn around a per-class Gaussian mean signature.
    """
    rng = np.random.default_rng(seed)
    rows = per_class // width
    means = rng.uniform(0.0, 1.0, size=(num_classes, bands))
    labels = np.repeat(np.arange(1, num_classes + 1), rows)[:, None].repeat(width, axis=1)
    values = means[labels - 1] + spread * rng.standard_normal(labels.shape + (bands,))
    return HsiCube(values.astype(np.float32)), LabelGrid(labels)
