"""Why the inverse model is a mixture: on the mirror actuator every transition has two explanations.

Run: python3 demos/idm_mirror.py   (about half a minute)
"""
import numpy as np

from maad import envs
from maad.data import ReplayBuffer, Transitions, replay_push
from maad.idm import IdmConfig, MdnIdm, idm_fit


def random_data(spec, n_episodes, seed):
    rng = np.random.default_rng(seed)
    obs = envs.reset_batch(spec, rng.integers(0, 2**31, size=n_episodes))
    S, A, S2 = [], [], []
    for _ in range(spec.horizon):
        nxt, applied = envs.dynamics(spec, obs, rng.uniform(-1, 1, size=(n_episodes, 1)))
        S.append(obs)
        A.append(applied)
        S2.append(nxt)
        obs = nxt
    return Transitions(np.concatenate(S), np.concatenate(S2), np.concatenate(A))


spec = envs.make_env("mirror_actuator")
train, held = random_data(spec, 100, 0), random_data(spec, 10, 1)
buf = ReplayBuffer(spec.state_dim, spec.action_dim)
replay_push(buf, train.states, train.actions, train.next_states)

for K in (1, 2):
    m = MdnIdm(spec.state_dim, spec.action_dim, K, 128, rng=0)
    m, epochs, _ = idm_fit(m, buf, IdmConfig(n_components=K, sample_size=20_000, lr=1e-3), rng=0)
    w, mu, ls = m.posterior(held.states[:3], held.next_states[:3])
    print(f"K={K}: held-out NLL {m.nll(held):.3f} after {epochs} epochs")
    for i in range(3):
        mag = envs.inverse_batch(spec, held.states[i], held.next_states[i])[0]
        comps = ", ".join(f"{wk:.2f}*N({mk[0]:+.3f}, {np.exp(ls[k, 0]):.3f})" for k, (wk, mk) in enumerate(zip(w[i], mu[i])))
        print(f"  roots ±{mag:.3f}: {comps}")
