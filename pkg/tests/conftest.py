from hypothesis import HealthCheck, settings

# One deterministic profile for the whole suite: the repo promises
# byte-reproducible behavior, so the tests should replay identically too.
settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")
