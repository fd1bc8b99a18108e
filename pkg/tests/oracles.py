"""Independent reference implementations the production code is checked against."""

from scalesentry.cluster import served_status


def naive_increase(events, tier, cls, duration, now):
    """Filter-and-count over ``(t, tier, status_class)`` triples."""
    return sum(1 for t, tr, c in events if tr == tier and c == cls and now - duration < t <= now)


def reference_queue(events, seconds, replicas, cap_rps, queue_cap, timeout, scale_at=None,
                    startup=15.0):
    """Scalar reference: explicit per-request bookkeeping, rescanned every tick.

    Returns ``{index: (status, t_complete)}`` keyed by position in ``events``.
    """
    result = {}
    sent = {}
    waiting = []  # indices, FIFO order
    ready, pending, pending_at = replicas, None, None
    for s in range(seconds):
        now = float(s)
        if pending_at is not None and pending_at <= now:
            ready, pending_at = pending, None
        if scale_at and s in scale_at:
            want = scale_at[s]
            if want <= ready:
                ready, pending_at = want, None
            else:
                if pending_at is None:
                    pending_at = now + startup
                pending = want
        still = []
        for i in waiting:
            if now - sent[i] > timeout:
                result[i] = (499, now)
            else:
                still.append(i)
        waiting = still
        budget = ready * cap_rps
        served_now = waiting[:budget]
        for i in served_now:
            result[i] = (served_status(events[i].path), now)
        waiting = waiting[len(served_now):]
        budget -= len(served_now)
        for i, e in enumerate(events):
            if int(e.t_arrival) != s:
                continue
            sent[i] = max(e.t_arrival, now)
            if budget > 0:
                budget -= 1
                result[i] = (served_status(e.path), sent[i])
            elif len(waiting) < queue_cap:
                waiting.append(i)
            else:
                result[i] = (503, sent[i])
    return result


def brute_force_stump(X, y):
    """Lowest weighted Gini over every feature and every cut between distinct values."""
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(values, values[1:]):
            left = y[X[:, f] <= lo]
            right = y[X[:, f] >= hi]
            score = 0.0
            for part in (left, right):
                p = part.mean()
                score += len(part) / n * (1 - p * p - (1 - p) * (1 - p))
            if best is None or score < best - 1e-12:
                best = score
    return best


def node_impurity(tree, X, y):
    if tree.feature[0] < 0:
        return None
    go_left = X[:, tree.feature[0]] <= tree.threshold[0]
    score = 0.0
    for part in (y[go_left], y[~go_left]):
        p = part.mean()
        score += len(part) / len(y) * (1 - p * p - (1 - p) * (1 - p))
    return score
