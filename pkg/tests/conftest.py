import pytest

# one PASS/FAIL line per acceptance criterion, shown in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance report")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

MINI_TOML = """
[scenario]
episode_steps = 6
slot_seconds = 10.0
theta_min_deg = 5.0
eta_w = 5e-9
zeta_w = 1.0
sat_score_scale = 4.0

[[scenario.constellation]]
altitude_m = 5e5
inclination_rad = 0.0
phase_rad = 0.0

[[scenario.constellation]]
altitude_m = 5e5
inclination_rad = 0.0
phase_rad = 0.05

[[scenario.constellation]]
altitude_m = 5e5
inclination_rad = 0.25
phase_rad = 0.0

[[scenario.constellation]]
altitude_m = 5e5
inclination_rad = 0.0
phase_rad = -0.05

[scenario.hap]
anchor = [6.371e6, 0.0, 0.0]
altitude_m = 20000.0
box_half_extents_m = [1000.0, 50000.0, 50000.0]

[[scenario.clusters]]
center = [6.371e6, 3000.0, 0.0]
radius_m = 1000.0
user_count = 3

[[scenario.clusters]]
center = [6.371e6, -3000.0, 0.0]
radius_m = 1000.0
user_count = 3

[scenario.rf]
n_subcarriers = 8
noise_psd = 1e-17

[agent]
hidden = [16, 16]
discount = 0.9
learning_rate = 1e-3
temperature = 0.05
soft_update = 0.01
n_quantiles = 5
n_critics = 2
drop_per_critic = 1
epsilon0 = 0.2
e_decay = 0.5
batch_size = 16
buffer_capacity = 2000
warmup_steps = 32

[run]
episodes = 8
seed = 3
eval_episodes = 3
checkpoint_every = 5
"""


@pytest.fixture(scope="session")
def mini_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "mini.toml"
    path.write_text(MINI_TOML)
    return path
