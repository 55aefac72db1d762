from collections import deque


class RewardMonitor:
    """Unlocks once the moving-average episode reward rises for ``patience``
    consecutive windows. Unlocking is sticky."""

    def __init__(self, window=20, patience=5):
        self.window, self.patience = window, patience
        self.rewards = deque(maxlen=window)
        self.prev_avg = None
        self.streak = 0
        self.unlocked = False
        self.unlock_episode = None
        self.seen = 0

    def observe(self, episode_reward):
        self.seen += 1
        self.rewards.append(float(episode_reward))
        if self.unlocked or len(self.rewards) < self.window:
            return self.unlocked
        avg = sum(self.rewards) / self.window
        if self.prev_avg is not None:
            self.streak = self.streak + 1 if avg > self.prev_avg else 0
        self.prev_avg = avg
        if self.streak >= self.patience:
            self.unlocked = True
            self.unlock_episode = self.seen
        return self.unlocked


def monitor_observe(monitor, episode_reward):
    return monitor.observe(episode_reward)
