import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lavae import augmentations as A

images = hnp.arrays(np.float32, (28, 28), elements=st.floats(0, 1, width=32))


def test_flip_lr_columns():
    img = np.arange(4, dtype=np.float32).reshape(2, 2) / 4
    out = A.permute_flip_rotate(img, "flip_lr")
    np.testing.assert_array_equal(out, img[:, ::-1])


def test_rotate90_cw_example():
    img = np.array([[1, 2], [3, 4]], dtype=np.float32)
    out = A.permute_flip_rotate(img, "rotate90_cw")
    np.testing.assert_array_equal(out, [[3, 1], [4, 2]])


@given(images)
@settings(max_examples=25, deadline=None)
def test_flips_are_involutions(img):
    for mode in ("flip_lr", "flip_ud"):
        twice = A.permute_flip_rotate(A.permute_flip_rotate(img, mode), mode)
        np.testing.assert_array_equal(twice, img)


@given(images)
@settings(max_examples=25, deadline=None)
def test_rotate_four_times_is_identity(img):
    out = img
    for _ in range(4):
        out = A.permute_flip_rotate(out, "rotate90_cw")
    np.testing.assert_array_equal(out, img)


def test_shear_zero_factor_is_identity(digits64):
    np.testing.assert_array_equal(A.shear_x(digits64[0], 0.0), digits64[0])


def test_shear_single_pixel_bilinear_split():
    # pixel at (0, 14), factor 0.3: lands at column 14 + 0.3 * 13.5 = 18.05
    img = np.zeros((28, 28), dtype=np.float32)
    img[0, 14] = 1.0
    out = A.shear_x(img, 0.3)
    np.testing.assert_allclose(out[0, 18], 0.95, atol=1e-6)
    np.testing.assert_allclose(out[0, 19], 0.05, atol=1e-6)
    assert np.count_nonzero(out) == 2


def test_shear_center_rows_nearly_fixed():
    # rows 13/14 move by <= 0.15 columns; constant-valued rows are unchanged
    # away from the border
    rng = np.random.default_rng(0)
    img = np.repeat(rng.random((28, 1)).astype(np.float32), 28, axis=1)
    out = A.shear_x(img, 0.3)
    np.testing.assert_allclose(out[13, 1:27], img[13, 1:27], atol=1e-6)
    np.testing.assert_allclose(out[14, 1:27], img[14, 1:27], atol=1e-6)


@given(images, st.floats(-1, 1))
@settings(max_examples=25, deadline=None)
def test_shear_stays_in_range(img, factor):
    out = A.shear_x(img, factor)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_shear_factor_out_of_range():
    with pytest.raises(A.FactorOutOfRange):
        A.shear_x(np.zeros((28, 28)), 1.5)


def test_canny_zero_image():
    out = A.canny_edge(np.zeros((28, 28)), 1.0, 0.1, 0.3)
    np.testing.assert_array_equal(out, 0.0)


def test_canny_binary_output(digits64):
    out = A.canny_edge(digits64[1], 1.0, 0.1, 0.3)
    assert set(np.unique(out)).issubset({0.0, 1.0})


def test_canny_bad_thresholds():
    with pytest.raises(A.BadThresholds):
        A.canny_edge(np.zeros((28, 28)), 1.0, 0.4, 0.2)


def _oracle_canny(img, sigma, low, high):
    """Straightforward loop-based reimplementation of the documented
    pipeline, kept independent of the vectorized module code."""
    img = img.astype(np.float64)
    h, w = img.shape
    radius = int(np.ceil(3.0 * sigma))
    ts = np.arange(-radius, radius + 1)
    kern = np.exp(-(ts ** 2) / (2 * sigma * sigma))
    kern /= kern.sum()

    def sample(arr, r, c):
        return arr[r, c] if 0 <= r < h and 0 <= c < w else 0.0

    tmp = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            tmp[r, c] = sum(kv * sample(img, r, c + k - radius) for k, kv in enumerate(kern))
    blur = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            blur[r, c] = sum(kv * sample(tmp, r + k - radius, c) for k, kv in enumerate(kern))

    sx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            for i in range(3):
                for j in range(3):
                    v = sample(blur, r + i - 1, c + j - 1)
                    gx[r, c] += sx[i][j] * v
                    gy[r, c] += sx[j][i] * v
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    supp = np.zeros_like(mag)
    for r in range(h):
        for c in range(w):
            a = ang[r, c]
            if a < 22.5 or a >= 157.5:
                n1, n2 = (0, 1), (0, -1)
            elif a < 67.5:
                n1, n2 = (1, 1), (-1, -1)
            elif a < 112.5:
                n1, n2 = (1, 0), (-1, 0)
            else:
                n1, n2 = (1, -1), (-1, 1)
            if mag[r, c] >= sample(mag, r + n1[0], c + n1[1]) and \
               mag[r, c] >= sample(mag, r + n2[0], c + n2[1]):
                supp[r, c] = mag[r, c]
    peak = supp.max()
    if peak == 0:
        return np.zeros_like(img)
    strong = supp >= high * peak
    weak = supp >= low * peak
    edges = strong.copy()
    changed = True
    while changed:
        changed = False
        for r in range(h):
            for c in range(w):
                if weak[r, c] and not edges[r, c]:
                    if any(sample(edges, r + dr, c + dc)
                           for dr in (-1, 0, 1) for dc in (-1, 0, 1)):
                        edges[r, c] = True
                        changed = True
    return edges.astype(np.float32)


def _ring_is_closed(edges, center):
    """True if the edge set separates `center` from the image border."""
    h, w = edges.shape
    free = ~edges.astype(bool)
    reach = np.zeros_like(free)
    stack = [(r, c) for r in range(h) for c in range(w)
             if (r in (0, h - 1) or c in (0, w - 1)) and free[r, c]]
    for rc in stack:
        reach[rc] = True
    while stack:
        r, c = stack.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and free[rr, cc] and not reach[rr, cc]:
                reach[rr, cc] = True
                stack.append((rr, cc))
    return not reach[center]


def test_canny_square_ring_matches_oracle():
    img = np.zeros((28, 28))
    img[9:19, 9:19] = 1.0
    got = A.canny_edge(img, 1.0, 0.1, 0.3)
    expect = _oracle_canny(img, 1.0, 0.1, 0.3)
    agreement = np.mean(got == expect)
    assert agreement >= 0.97
    # structure: a closed ring near the square boundary, roughly 1 px wide
    assert _ring_is_closed(got, (13, 13))
    ys, xs = np.nonzero(got)
    dist_to_boundary = np.minimum.reduce([
        np.abs(ys - 8.5), np.abs(ys - 18.5), np.abs(xs - 8.5), np.abs(xs - 18.5)])
    inside = (ys >= 6) & (ys <= 21) & (xs >= 6) & (xs <= 21)
    assert inside.all()
    assert got.sum() <= 1.5 * 40  # perimeter of the 10x10 square is 40


def test_nested_mini_zero_and_saturation():
    np.testing.assert_array_equal(A.nested_mini(np.zeros((28, 28))), 0.0)
    np.testing.assert_array_equal(A.nested_mini(np.ones((28, 28))), 1.0)


def test_nested_mini_single_block():
    img = np.zeros((28, 28), dtype=np.float32)
    img[0:2, 0:2] = 1.0
    out = A.nested_mini(img)
    assert out[7, 7] == 1.0
    expected = img.copy()
    expected[7, 7] = 1.0
    np.testing.assert_array_equal(out, expected)


def test_apply_spec_dispatch_and_involution(digits64):
    spec = A.AugmentationSpec("flip_lr")
    np.testing.assert_array_equal(
        A.apply_spec(spec, digits64[0]),
        A.permute_flip_rotate(digits64[0], "flip_lr"))
    np.testing.assert_array_equal(
        A.apply_spec(spec, A.apply_spec(spec, digits64[0])), digits64[0])


def test_apply_spec_unknown_kind():
    with pytest.raises(A.UnknownKind):
        A.AugmentationSpec("warp_polar")


def test_batch_matches_single(digits64):
    batch = digits64[:8]
    for name in ("flip_ud", "rotate90_cw", "shear_x", "nested_mini", "canny_edge"):
        spec = A.AugmentationSpec(name)
        got = A.apply_spec_batch(spec, batch)
        for i in range(8):
            np.testing.assert_array_equal(got[i], A.apply_spec(spec, batch[i]))


@given(images)
@settings(max_examples=10, deadline=None)
def test_all_kinds_stay_in_range(img):
    for name in A.KINDS:
        out = A.apply_spec(A.AugmentationSpec(name), img)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_pair_presets():
    pair = A.make_pair("shear_canny")
    assert pair.first.kind == "shear_x" and pair.second.kind == "canny_edge"
    pair2 = A.make_pair("rotate90_cw,flip_lr")
    assert pair2.first.kind == "rotate90_cw"
