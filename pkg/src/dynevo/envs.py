"""Native classic-control environments and the episode runner.

Dynamics, constants, reward definitions, termination rules and reset
distributions replicate the Gym/Gymnasium classic-control tasks
(CartPole-v1, Acrobot-v1, MountainCar-v0, MountainCarContinuous-v0,
Pendulum-v1) so evolved agents are scored on the standard benchmarks
without an external dependency. All dynamics are deterministic;
randomness enters only through the seeded reset.

Also provides discrete/continuous action decoding, Welford running input
standardization and :func:`run_episode_set`, which turns a network into a
fitness value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .netgraph import DynamicNet
from .rng import RngStream

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Discrete:
    n: int

    @property
    def arity(self) -> int:
        return self.n


@dataclass(frozen=True)
class Continuous:
    low: tuple
    high: tuple

    @property
    def arity(self) -> int:
        return len(self.low)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_space: object
    max_steps: int
    episodes_per_eval: int
    standardize_inputs: bool


@dataclass
class StepResult:
    observation: list
    reward: float
    done: bool


class RunningStandardizer:
    """Welford online mean/variance, applied per observation dimension.

    Returns a zero vector until two samples have been seen; afterwards
    ``(x - mean) / (std + 1e-8)``.
    """

    EPS = 1e-8

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = [0.0] * dim
        self.m2 = [0.0] * dim

    def update(self, x) -> None:
        if len(x) != self.dim:
            raise ValueError(f"expected {self.dim} values, got {len(x)}")
        self.count += 1
        n = self.count
        for i in range(self.dim):
            delta = x[i] - self.mean[i]
            self.mean[i] += delta / n
            self.m2[i] += delta * (x[i] - self.mean[i])

    def apply(self, x) -> list:
        if len(x) != self.dim:
            raise ValueError(f"expected {self.dim} values, got {len(x)}")
        if self.count < 2:
            return [0.0] * self.dim
        n = self.count
        return [
            (x[i] - self.mean[i]) / (math.sqrt(self.m2[i] / n) + self.EPS)
            for i in range(self.dim)
        ]


# ----------------------------------------------------------------------
# environments


class ClassicControlEnv:
    """Shared step-count / termination bookkeeping."""

    spec: EnvSpec

    def __init__(self):
        self.steps = 0
        self.done = True
        self.state: list = []

    def reset(self, seed: int) -> list:
        rng = RngStream(seed)
        self.state = self._sample_initial(rng)
        self.steps = 0
        self.done = False
        return self._observation()

    def set_state(self, state) -> None:
        """Force the physics state directly (test hook)."""
        self.state = list(state)
        self.steps = 0
        self.done = False

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        reward, terminated = self._advance(action)
        self.steps += 1
        self.done = terminated or self.steps >= self.spec.max_steps
        return StepResult(self._observation(), reward, self.done)

    def _sample_initial(self, rng: RngStream) -> list:
        raise NotImplementedError

    def _observation(self) -> list:
        raise NotImplementedError

    def _advance(self, action):
        raise NotImplementedError


class CartPoleEnv(ClassicControlEnv):
    """Pole balancing; Euler integration, reward +1 per step."""

    spec = EnvSpec("CartPole-v1", 4, Discrete(2), 500, 1, False)

    GRAVITY = 9.8
    MASSCART = 1.0
    MASSPOLE = 0.1
    TOTAL_MASS = MASSCART + MASSPOLE
    LENGTH = 0.5  # half the pole's length
    POLEMASS_LENGTH = MASSPOLE * LENGTH
    FORCE_MAG = 10.0
    TAU = 0.02
    THETA_LIMIT = 12 * TWO_PI / 360
    X_LIMIT = 2.4

    def _sample_initial(self, rng):
        return [float(x) for x in rng.uniform(-0.05, 0.05, 4)]

    def _observation(self):
        return list(self.state)

    def _advance(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (
            force + self.POLEMASS_LENGTH * theta_dot**2 * sintheta
        ) / self.TOTAL_MASS
        thetaacc = (self.GRAVITY * sintheta - costheta * temp) / (
            self.LENGTH
            * (4.0 / 3.0 - self.MASSPOLE * costheta**2 / self.TOTAL_MASS)
        )
        xacc = temp - self.POLEMASS_LENGTH * thetaacc * costheta / self.TOTAL_MASS
        x += self.TAU * x_dot
        x_dot += self.TAU * xacc
        theta += self.TAU * theta_dot
        theta_dot += self.TAU * thetaacc
        self.state = [x, x_dot, theta, theta_dot]
        terminated = (
            abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        )
        return 1.0, terminated


class MountainCarEnv(ClassicControlEnv):
    """Discrete mountain car; reward -1 per step until the flag."""

    spec = EnvSpec("MountainCar-v0", 2, Discrete(3), 200, 1, False)

    MIN_POSITION = -1.2
    MAX_POSITION = 0.6
    MAX_SPEED = 0.07
    GOAL_POSITION = 0.5
    GOAL_VELOCITY = 0.0
    FORCE = 0.001
    GRAVITY = 0.0025

    def _sample_initial(self, rng):
        return [float(rng.uniform(-0.6, -0.4)), 0.0]

    def _observation(self):
        return list(self.state)

    def _advance(self, action):
        position, velocity = self.state
        velocity += (action - 1) * self.FORCE + math.cos(3 * position) * (
            -self.GRAVITY
        )
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POSITION), self.MAX_POSITION)
        if position == self.MIN_POSITION and velocity < 0:
            velocity = 0.0
        self.state = [position, velocity]
        terminated = (
            position >= self.GOAL_POSITION and velocity >= self.GOAL_VELOCITY
        )
        return -1.0, terminated


class MountainCarContinuousEnv(ClassicControlEnv):
    """Continuous mountain car; quadratic action cost, +100 at the goal."""

    spec = EnvSpec(
        "MountainCarContinuous-v0", 2, Continuous((-1.0,), (1.0,)), 999, 1, False
    )

    MIN_POSITION = -1.2
    MAX_POSITION = 0.6
    MAX_SPEED = 0.07
    GOAL_POSITION = 0.45
    GOAL_VELOCITY = 0.0
    POWER = 0.0015

    def _sample_initial(self, rng):
        return [float(rng.uniform(-0.6, -0.4)), 0.0]

    def _observation(self):
        return list(self.state)

    def _advance(self, action):
        position, velocity = self.state
        force = min(max(action[0], -1.0), 1.0)
        velocity += force * self.POWER - 0.0025 * math.cos(3 * position)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POSITION), self.MAX_POSITION)
        if position == self.MIN_POSITION and velocity < 0:
            velocity = 0.0
        self.state = [position, velocity]
        terminated = (
            position >= self.GOAL_POSITION and velocity >= self.GOAL_VELOCITY
        )
        reward = (100.0 if terminated else 0.0) - 0.1 * force**2
        return reward, terminated


class PendulumEnv(ClassicControlEnv):
    """Torque-controlled pendulum swing-up; never terminates early."""

    spec = EnvSpec("Pendulum-v1", 3, Continuous((-2.0,), (2.0,)), 200, 5, True)

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0
    M = 1.0
    L = 1.0

    def _sample_initial(self, rng):
        return [float(x) for x in rng.uniform([-math.pi, -1.0], [math.pi, 1.0])]

    def _observation(self):
        th, thdot = self.state
        return [math.cos(th), math.sin(th), thdot]

    def _advance(self, action):
        th, thdot = self.state
        u = min(max(action[0], -self.MAX_TORQUE), self.MAX_TORQUE)
        th_norm = ((th + math.pi) % TWO_PI) - math.pi
        cost = th_norm**2 + 0.1 * thdot**2 + 0.001 * u**2
        newthdot = thdot + (
            3 * self.G / (2 * self.L) * math.sin(th)
            + 3.0 / (self.M * self.L**2) * u
        ) * self.DT
        newthdot = min(max(newthdot, -self.MAX_SPEED), self.MAX_SPEED)
        th = th + newthdot * self.DT
        self.state = [th, newthdot]
        return -cost, False


class AcrobotEnv(ClassicControlEnv):
    """Two-link underactuated swing-up; RK4-integrated book dynamics."""

    spec = EnvSpec("Acrobot-v1", 6, Discrete(3), 500, 1, False)

    DT = 0.2
    L1 = 1.0
    LC1 = 0.5
    LC2 = 0.5
    M1 = 1.0
    M2 = 1.0
    I1 = 1.0
    I2 = 1.0
    G = 9.8
    MAX_VEL_1 = 4 * math.pi
    MAX_VEL_2 = 9 * math.pi
    TORQUES = (-1.0, 0.0, 1.0)

    def _sample_initial(self, rng):
        return [float(x) for x in rng.uniform(-0.1, 0.1, 4)]

    def _observation(self):
        t1, t2, d1, d2 = self.state
        return [
            math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), d1, d2
        ]

    def _dsdt(self, s):
        theta1, theta2, dtheta1, dtheta2, a = s
        m1, m2 = self.M1, self.M2
        l1, lc1, lc2 = self.L1, self.LC1, self.LC2
        i1, i2, g = self.I1, self.I2, self.G
        d1 = (
            m1 * lc1**2
            + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2))
            + i1
            + i2
        )
        d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (
            a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2)
            - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return (dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0)

    def _advance(self, action):
        s = self.state + [self.TORQUES[action]]
        # One RK4 step over dt
        dt = self.DT
        k1 = self._dsdt(s)
        k2 = self._dsdt([s[i] + dt / 2 * k1[i] for i in range(5)])
        k3 = self._dsdt([s[i] + dt / 2 * k2[i] for i in range(5)])
        k4 = self._dsdt([s[i] + dt * k3[i] for i in range(5)])
        ns = [
            s[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            for i in range(4)
        ]
        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = min(max(ns[2], -self.MAX_VEL_1), self.MAX_VEL_1)
        ns[3] = min(max(ns[3], -self.MAX_VEL_2), self.MAX_VEL_2)
        self.state = ns
        terminated = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        return (0.0 if terminated else -1.0), terminated


def _wrap(x: float, low: float, high: float) -> float:
    diff = high - low
    while x > high:
        x -= diff
    while x < low:
        x += diff
    return x


ENV_CLASSES = {
    cls.spec.name: cls
    for cls in (
        CartPoleEnv,
        AcrobotEnv,
        MountainCarEnv,
        MountainCarContinuousEnv,
        PendulumEnv,
    )
}

SUPPORTED_TASKS = sorted(ENV_CLASSES)


def get_spec(name: str) -> EnvSpec:
    try:
        return ENV_CLASSES[name].spec
    except KeyError:
        raise ValueError(
            f"unsupported task {name!r}; supported tasks: "
            + ", ".join(SUPPORTED_TASKS)
        ) from None


def make_env(name: str, seed: int = 0) -> ClassicControlEnv:
    """Construct and reset a seeded environment."""
    env = ENV_CLASSES[get_spec(name).name]()
    env.reset(seed)
    return env


# ----------------------------------------------------------------------
# action decoding and episode running


def decode_action(raw_outputs, space):
    """Map non-negative network outputs onto an action.

    Discrete: index of the largest output, lowest index on ties.
    Continuous: per dimension, clip to [0, 1] then scale to [low, high].
    """
    if len(raw_outputs) != space.arity:
        raise ValueError(
            f"expected {space.arity} outputs, got {len(raw_outputs)}"
        )
    if isinstance(space, Discrete):
        best = 0
        for i in range(1, space.n):
            if raw_outputs[i] > raw_outputs[best]:
                best = i
        return best
    return [
        min(max(raw_outputs[i], 0.0), 1.0) * (space.high[i] - space.low[i])
        + space.low[i]
        for i in range(space.arity)
    ]


def run_episode_set(
    net: DynamicNet,
    spec: EnvSpec,
    standardizer: RunningStandardizer | None,
    episode_seeds,
) -> float:
    """Mean accumulated reward over one episode per seed.

    Per episode: reset the environment and the network's pass state, then
    loop observation -> (standardize) -> forward -> decode -> step until
    done. The standardizer, when present, is updated with each raw
    observation before being applied (and persists across episodes).
    """
    if len(episode_seeds) != spec.episodes_per_eval:
        raise ValueError(
            f"{spec.name} needs {spec.episodes_per_eval} episode seeds, "
            f"got {len(episode_seeds)}"
        )
    if net.d_input != spec.obs_dim or net.d_output != spec.action_space.arity:
        raise ValueError(
            f"net dimensions ({net.d_input}, {net.d_output}) do not match "
            f"{spec.name} ({spec.obs_dim}, {spec.action_space.arity})"
        )
    standardize = spec.standardize_inputs and standardizer is not None
    env = ENV_CLASSES[spec.name]()
    total = 0.0
    for seed in episode_seeds:
        obs = env.reset(seed)
        state = net.reset_state()
        episode_reward = 0.0
        while True:
            if standardize:
                standardizer.update(obs)
                obs = standardizer.apply(obs)
            action = decode_action(net.forward(state, obs), spec.action_space)
            result = env.step(action)
            episode_reward += result.reward
            obs = result.observation
            if result.done:
                break
        total += episode_reward
    return total / len(episode_seeds)
