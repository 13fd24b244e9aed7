"""Pure-Python event loops for the uniform-birth model family.

Line-for-line mirror of ``_ckernel.pyx``: same arithmetic, same order of
operations, same consumption of uniforms.  Both produce bit-identical
output for identical inputs; keep them in sync.

Parameter vector layout (``FamilyParams.as_array``)::

    0 birth_rate  1 count_all  2 death_kind  3 d0  4 log_a
    5 phi_near    6 phi_far    7 phi_radius  8 include_self  9 phi_min_region
"""
import math

HORIZON, ABSORBED, STOPPED, BREAKER = 0, 1, 2, 3
BIRTH, DEATH = 0, 1
ENVELOPE_TOL = 1e-9

_log1p = math.log1p
_exp = math.exp


class KernelError(RuntimeError):
    pass


def _bounds(kind, d0, log_a, phi_near, incl, phi_min, n, nlam):
    if kind == 0:
        return d0, d0
    if kind == 1:
        return _exp(-log_a * n), 0.0
    if incl:
        return _exp(-phi_min * nlam), _exp(-phi_near)
    return _exp(-phi_min * (nlam - 1)), 1.0


def _exact(kind, d0, log_a, phi_near, phi_far, r2max, incl, j, pts, inlam, member, nk, dim):
    if kind == 0:
        return d0
    if kind == 1:
        if inlam[j]:
            return _exp(-log_a * nk)
        return 0.0
    xj = pts[j]
    s = 0.0
    for i in range(len(pts)):
        if i == j or (member is not None and not member[i]):
            continue
        xi = pts[i]
        r2 = 0.0
        for k in range(dim):
            z = xj[k] - xi[k]
            r2 += z * z
        if r2 <= r2max:
            s += phi_near
        else:
            s += phi_far
    if incl:
        s += phi_near
    return _exp(-s)


def _in_box(x, lo, hi, dim):
    for k in range(dim):
        if x[k] < lo[k] or x[k] > hi[k]:
            return False
    return True


def run_single(fp, lo, hi, ids0, coords0, next_id, horizon, max_events, stop_count, stream):
    c = float(fp[0])
    count_all = fp[1] != 0.0
    kind = int(fp[2])
    d0, log_a, phi_near, phi_far, phi_radius = (float(v) for v in fp[3:8])
    incl = fp[8] != 0.0
    phi_min = float(fp[9])
    r2max = phi_radius * phi_radius
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    dim = len(lo)
    uniform = stream.uniform

    ids = [int(v) for v in ids0]
    pts = [[float(v) for v in row] for row in coords0]
    inlam = [_in_box(p, lo, hi, dim) for p in pts]
    n = len(ids)
    nlam = sum(inlam)
    next_id = int(next_id)

    ev_t, ev_k, ev_id, ev_x = [], [], [], []
    t = 0.0
    nev = 0
    nulls = 0
    status = HORIZON
    while True:
        if stop_count >= 0 and nlam >= stop_count:
            status = STOPPED
            break
        B = c * (n if count_all else nlam)
        bin_, bout = _bounds(kind, d0, log_a, phi_near, incl, phi_min, n, nlam)
        R = B + (nlam * bin_ + (n - nlam) * bout)
        if not R > 0.0:
            status = ABSORBED
            break
        u = uniform()
        t = t - _log1p(-u) / R
        if t > horizon:
            status = HORIZON
            break
        w = uniform() * R
        if w < B:
            x = [0.0] * dim
            for k in range(dim):
                x[k] = lo[k] + uniform() * (hi[k] - lo[k])
            pid = next_id
            next_id += 1
            ids.append(pid)
            pts.append(x)
            inlam.append(True)
            n += 1
            nlam += 1
            ev_t.append(t)
            ev_k.append(BIRTH)
            ev_id.append(pid)
            ev_x.append(x)
        else:
            target = w - B
            acc = 0.0
            j = -1
            m = 0.0
            for i in range(n):
                wi = bin_ if inlam[i] else bout
                if wi > 0.0:
                    acc += wi
                    j = i
                    m = wi
                    if target < acc:
                        break
            if j < 0:
                raise KernelError("death proposal with no positive weight")
            if kind == 2:
                v = uniform() * m
                dj = _exact(kind, d0, log_a, phi_near, phi_far, r2max, incl, j, pts, inlam, None, n, dim)
                if dj > m * (1.0 + ENVELOPE_TOL):
                    raise KernelError(
                        f"death rate {dj!r} of particle {ids[j]} exceeds its bound {m!r} at t={t!r}")
                if not v < dj:
                    nulls += 1
                    continue
            pid = ids.pop(j)
            x = pts.pop(j)
            if inlam.pop(j):
                nlam -= 1
            n -= 1
            ev_t.append(t)
            ev_k.append(DEATH)
            ev_id.append(pid)
            ev_x.append(x)
        nev += 1
        if nev >= max_events:
            status = BREAKER
            break
    return {
        "times": ev_t, "kinds": ev_k, "ids": ev_id, "coords": ev_x,
        "status": status, "t_end": t, "next_id": next_id, "nulls": nulls,
        "final_ids": ids, "final_coords": pts,
    }


def run_coupled(fp1, fp2, lo, hi, ids0, coords0, in1_0, next_id, horizon, max_events, stream):
    c1 = float(fp1[0])
    all1 = fp1[1] != 0.0
    kind1 = int(fp1[2])
    d01, loga1, pn1, pf1, pr1 = (float(v) for v in fp1[3:8])
    incl1 = fp1[8] != 0.0
    pmin1 = float(fp1[9])
    c2 = float(fp2[0])
    all2 = fp2[1] != 0.0
    kind2 = int(fp2[2])
    d02, loga2, pn2, pf2, pr2 = (float(v) for v in fp2[3:8])
    incl2 = fp2[8] != 0.0
    pmin2 = float(fp2[9])
    r2max1 = pr1 * pr1
    r2max2 = pr2 * pr2
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    dim = len(lo)
    uniform = stream.uniform

    ids = [int(v) for v in ids0]
    pts = [[float(v) for v in row] for row in coords0]
    inlam = [_in_box(p, lo, hi, dim) for p in pts]
    in1 = [bool(v) for v in in1_0]
    n2 = len(ids)
    n2lam = sum(inlam)
    n1 = sum(in1)
    n1lam = sum(1 for i in range(n2) if in1[i] and inlam[i])
    next_id = int(next_id)

    log1 = ([], [], [], [])
    log2 = ([], [], [], [])
    t = 0.0
    nev = 0
    nulls = 0
    status = HORIZON
    while True:
        B1 = c1 * (n1 if all1 else n1lam)
        B2 = c2 * (n2 if all2 else n2lam)
        if B1 > B2:
            raise KernelError(f"birth monotonicity violated at t={t!r}: {B1!r} > {B2!r}")
        b1in, b1out = _bounds(kind1, d01, loga1, pn1, incl1, pmin1, n1, n1lam)
        b2in, b2out = _bounds(kind2, d02, loga2, pn2, incl2, pmin2, n2, n2lam)
        R = B2 + (n1lam * b1in + (n1 - n1lam) * b1out
                  + (n2lam - n1lam) * b2in + ((n2 - n2lam) - (n1 - n1lam)) * b2out)
        if not R > 0.0:
            status = ABSORBED
            break
        u = uniform()
        t = t - _log1p(-u) / R
        if t > horizon:
            status = HORIZON
            break
        w = uniform() * R
        if w < B2:
            x = [0.0] * dim
            for k in range(dim):
                x[k] = lo[k] + uniform() * (hi[k] - lo[k])
            pid = next_id
            next_id += 1
            acc1 = w < B1
            ids.append(pid)
            pts.append(x)
            inlam.append(True)
            in1.append(acc1)
            n2 += 1
            n2lam += 1
            _record(log2, t, BIRTH, pid, x)
            if acc1:
                n1 += 1
                n1lam += 1
                _record(log1, t, BIRTH, pid, x)
        else:
            target = w - B2
            acc = 0.0
            j = -1
            m = 0.0
            for i in range(n2):
                if in1[i]:
                    wi = b1in if inlam[i] else b1out
                else:
                    wi = b2in if inlam[i] else b2out
                if wi > 0.0:
                    acc += wi
                    j = i
                    m = wi
                    if target < acc:
                        break
            if j < 0:
                raise KernelError("death proposal with no positive weight")
            v = uniform() * m
            d2 = _exact(kind2, d02, loga2, pn2, pf2, r2max2, incl2, j, pts, inlam, None, n2, dim)
            if in1[j]:
                d1 = _exact(kind1, d01, loga1, pn1, pf1, r2max1, incl1, j, pts, inlam, in1, n1, dim)
                if d1 > m * (1.0 + ENVELOPE_TOL):
                    raise KernelError(
                        f"death rate {d1!r} of particle {ids[j]} exceeds its bound {m!r} at t={t!r}")
                if d2 > d1 * (1.0 + ENVELOPE_TOL):
                    raise KernelError(
                        f"death monotonicity violated for particle {ids[j]} at t={t!r}: "
                        f"d1={d1!r} < d2={d2!r} (n1={n1}, n2={n2})")
                # rounding slack only; d2 <= d1 holds exactly in real arithmetic
                if d2 > d1:
                    d2 = d1
                k1 = v < d1
                k2 = v < d2
                if k2 and not k1:
                    raise KernelError(f"inclusion violated by particle {ids[j]} at t={t!r}")
            else:
                if d2 > m * (1.0 + ENVELOPE_TOL):
                    raise KernelError(
                        f"death rate {d2!r} of particle {ids[j]} exceeds its bound {m!r} at t={t!r}")
                k1 = False
                k2 = v < d2
            if not (k1 or k2):
                nulls += 1
                continue
            pid = ids[j]
            x = pts[j]
            if k1:
                in1[j] = False
                n1 -= 1
                if inlam[j]:
                    n1lam -= 1
                _record(log1, t, DEATH, pid, x)
            if k2:
                ids.pop(j)
                pts.pop(j)
                in1.pop(j)
                if inlam.pop(j):
                    n2lam -= 1
                n2 -= 1
                _record(log2, t, DEATH, pid, x)
        nev += 1
        if nev >= max_events:
            status = BREAKER
            break
    return {
        "log1": log1, "log2": log2, "status": status, "t_end": t, "next_id": next_id,
        "nulls": nulls, "final_ids": ids, "final_coords": pts, "final_in1": in1,
    }


def _record(log, t, kind, pid, x):
    log[0].append(t)
    log[1].append(kind)
    log[2].append(pid)
    log[3].append(x)
