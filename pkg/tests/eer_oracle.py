"""Exhaustive threshold sweep used as the EER reference in tests."""


def sweep_eer(genuine, impostor):
    gen = [float(x) for x in genuine]
    imp = [float(x) for x in impostor]
    thresholds = sorted(set(gen) | set(imp))
    points = []
    for t in thresholds:
        far = sum(1 for s in imp if s >= t) / len(imp)
        frr = sum(1 for s in gen if s < t) / len(gen)
        points.append((far, frr))
    points.append((0.0, 1.0))  # threshold above every score
    prev = None
    for far, frr in points:
        gap = far - frr
        if gap == 0:
            return (far + frr) / 2
        if gap < 0:
            pfar, pfrr = prev
            pgap = pfar - pfrr
            frac = pgap / (pgap - gap)
            return pfar + frac * (far - pfar)
        prev = (far, frr)
    raise AssertionError("sweep never crossed")
