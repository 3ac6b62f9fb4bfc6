"""Small fixed-size linear algebra, spherical harmonics and sigmoid helpers.

Symmetric 3x3 matrices are stored as six coefficients in the order
``(xx, xy, xz, yy, yz, zz)``.  Quaternions are ``(w, x, y, z)``.  Every
function accepts a single item or a leading batch dimension.
"""

from __future__ import annotations

import numpy as np

SYM_KEYS = ("xx", "xy", "xz", "yy", "yz", "zz")

# (row, col) of each stored coefficient in the dense matrix
SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

# real SH normalization constants (same basis as the reference 3DGS rasterizer)
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_SH_DEGREE = 3


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sym_to_mat(s):
    """Expand ``(..., 6)`` symmetric coefficients to ``(..., 3, 3)``."""
    s = np.asarray(s)
    m = np.empty(s.shape[:-1] + (3, 3), dtype=s.dtype)
    for k, (i, j) in enumerate(SYM_INDEX):
        m[..., i, j] = s[..., k]
        m[..., j, i] = s[..., k]
    return m


def mat_to_sym(m):
    """Pack the upper triangle of ``(..., 3, 3)`` into ``(..., 6)``."""
    m = np.asarray(m)
    return np.stack([m[..., i, j] for i, j in SYM_INDEX], axis=-1)


def quadratic_form(s, w):
    """Return ``w^T S w`` using the six distinct coefficient terms."""
    s = np.asarray(s)
    w = np.asarray(w)
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    return (
        s[..., 0] * x * x
        + s[..., 3] * y * y
        + s[..., 5] * z * z
        + 2.0 * (s[..., 1] * x * y + s[..., 2] * x * z + s[..., 4] * y * z)
    )


def sggx_projected_area(s, w):
    """Projected area ``sqrt(w^T S w)`` of the ellipsoid described by ``S``.

    Raises ``ValueError`` when the quadratic form is negative, i.e. ``S`` is
    not positive semi-definite along ``w``.
    """
    q = quadratic_form(s, w)
    if np.any(q < 0):
        raise ValueError(f"negative quadratic form {np.min(q)!r}; S is not PSD along w")
    return np.sqrt(q)


def sym3_eigendecompose(s, max_sweeps: int = 30, tol: float = 1e-12):
    """Eigendecomposition of symmetric 3x3 matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    s : array_like, shape (6,) or (n, 6)
        Packed symmetric matrices.
    max_sweeps : int
        Upper bound on full (0,1), (0,2), (1,2) sweeps.
    tol : float
        Off-diagonal magnitude, relative to ``1 + ||S||_F``, at which a
        matrix counts as diagonal.

    Returns
    -------
    eigenvalues : ndarray, shape (3,) or (n, 3)
        Sorted descending.  Exact ties keep their original diagonal order.
    eigenvectors : ndarray, shape (3, 3) or (n, 3, 3)
        Orthonormal columns matching ``eigenvalues``.
    """
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    a = sym_to_mat(s.reshape(-1, 6))
    n = a.shape[0]
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    scale = 1.0 + np.sqrt(np.sum(a * a, axis=(1, 2)))
    thresh = tol * scale
    rows = np.arange(n)

    for _ in range(max_sweeps):
        off = np.maximum.reduce([np.abs(a[:, 0, 1]), np.abs(a[:, 0, 2]), np.abs(a[:, 1, 2])])
        if np.all(off <= thresh):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            active = np.abs(apq) > 0.0
            safe = np.where(active, apq, 1.0)
            # a tiny a_pq can overflow theta; t -> 0 is then the right limit
            with np.errstate(over="ignore"):
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            sn = t * c
            c = np.where(active, c, 1.0)
            sn = np.where(active, sn, 0.0)
            rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            rot[rows, p, p] = c
            rot[rows, q, q] = c
            rot[rows, p, q] = sn
            rot[rows, q, p] = -sn
            a = np.swapaxes(rot, 1, 2) @ a @ rot
            # the rotation zeroes a_pq analytically; drop the rounding residue
            a[rows, p, q] = np.where(active, 0.0, a[:, p, q])
            a[rows, q, p] = a[rows, p, q]
            v = v @ rot

    lam = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(-lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    if single:
        return lam[0], v[0]
    return lam, v


def sym_from_eigen(lam, q):
    """Rebuild packed ``Q diag(lam) Q^T`` from eigenpairs."""
    lam = np.asarray(lam)
    q = np.asarray(q)
    m = (q * lam[..., None, :]) @ np.swapaxes(q, -1, -2)
    return mat_to_sym(m)


def normalize_quaternion(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_matrix(q):
    """Rotation matrix of a (normalized internally) ``(w, x, y, z)`` quaternion."""
    q = normalize_quaternion(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def matrix_to_quaternion(r):
    """Inverse of :func:`quaternion_to_matrix` for a single proper rotation."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        k = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * k, (r[2, 1] - r[1, 2]) / k, (r[0, 2] - r[2, 0]) / k, (r[1, 0] - r[0, 1]) / k]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        k = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / k, 0.25 * k, (r[0, 1] + r[1, 0]) / k, (r[0, 2] + r[2, 0]) / k]
    elif r[1, 1] > r[2, 2]:
        k = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / k, (r[0, 1] + r[1, 0]) / k, 0.25 * k, (r[1, 2] + r[2, 1]) / k]
    else:
        k = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / k, (r[0, 2] + r[2, 0]) / k, (r[1, 2] + r[2, 1]) / k, 0.25 * k]
    q = np.asarray(q)
    return q if q[0] >= 0 else -q


def covariance_from_scale_rotation(scale, rot):
    """Packed ``R diag(s) diag(s)^T R^T`` for positive scales and a quaternion."""
    scale = np.asarray(scale, dtype=float)
    m = quaternion_to_matrix(rot) * scale[..., None, :]
    return mat_to_sym(m @ np.swapaxes(m, -1, -2))


def sh_basis(dirs, degree: int = MAX_SH_DEGREE):
    """Real SH basis values, shape ``(..., (degree+1)**2)``, for unit directions."""
    dirs = np.asarray(dirs, dtype=float)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree > 0:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree > 2:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def sh_raw(coeffs, direction, degree: int | None = None):
    """Basis-weighted sum of ``coeffs`` (shape ``(..., K, 3)``), no offset or clamp."""
    coeffs = np.asarray(coeffs, dtype=float)
    if degree is None:
        degree = int(round(np.sqrt(coeffs.shape[-2]))) - 1
    basis = sh_basis(direction, degree)
    k = basis.shape[-1]
    return np.einsum("...k,...kc->...c", basis, coeffs[..., :k, :])


def sh_evaluate(coeffs, direction, degree: int | None = None):
    """RGB from SH coefficients: ``max(basis . coeffs + 0.5, 0)`` per channel."""
    return np.maximum(sh_raw(coeffs, direction, degree) + 0.5, 0.0)


def rgb_to_sh0(rgb):
    """Degree-0 coefficient reproducing ``rgb`` under :func:`sh_evaluate`."""
    return (np.asarray(rgb, dtype=float) - 0.5) / SH_C0


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("logit is defined on the open interval (0, 1)")
    return np.log(p) - np.log1p(-p)
