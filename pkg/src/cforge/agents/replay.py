"""Prioritised experience replay on a sum tree."""
import numpy as np


class SumTree:
    """Binary sum tree over ``capacity`` leaves; O(log n) update and search."""

    def __init__(self, capacity):
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.size = size
        self.tree = np.zeros(2 * size)

    def update(self, i, value):
        j = i + self.size
        self.tree[j] = value
        j //= 2
        while j:
            self.tree[j] = self.tree[2 * j] + self.tree[2 * j + 1]
            j //= 2

    @property
    def total(self):
        return self.tree[1]

    def find(self, mass):
        """Leaf index whose cumulative interval contains ``mass``."""
        j = 1
        while j < self.size:
            left = self.tree[2 * j]
            if mass < left or self.tree[2 * j + 1] == 0:
                j = 2 * j
            else:
                mass -= left
                j = 2 * j + 1
        return j - self.size

    def __getitem__(self, i):
        return self.tree[i + self.size]


class PrioritizedReplay:
    def __init__(self, capacity=1000, alpha=0.6, beta=0.4, eps=1e-6):
        self.capacity, self.alpha, self.beta, self.eps = capacity, alpha, beta, eps
        self.tree = SumTree(capacity)
        self.items = [None] * capacity
        self.pos = 0
        self.count = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.count

    def push(self, item):
        """New items enter with the current maximum priority; oldest is evicted."""
        self.items[self.pos] = item
        self.tree.update(self.pos, self.max_priority ** self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def sample(self, batch_size, rng, beta=None):
        """(items, indices, importance weights normalised by their max)."""
        if self.count == 0:
            raise IndexError("cannot sample from an empty replay buffer")
        beta = self.beta if beta is None else beta
        total = self.tree.total
        idx = np.array([self.tree.find(m) for m in rng.uniform(0, total, batch_size)])
        idx = np.minimum(idx, self.count - 1)
        probs = np.array([self.tree[i] for i in idx]) / total
        w = (self.count * probs) ** (-beta)
        w /= w.max()
        return [self.items[i] for i in idx], idx, w

    def update_priorities(self, idx, priorities):
        for i, p in zip(idx, priorities):
            p = float(p)
            if not p > 0:
                raise ValueError(f"priority must be positive, got {p}")
            self.tree.update(int(i), p ** self.alpha)
            self.max_priority = max(self.max_priority, p)

    def priority(self, i):
        return self.tree[i] ** (1 / self.alpha) if self.alpha > 0 else self.tree[i]
