from hypothesis import settings

# the first call into a numba kernel compiles it, which can exceed any per-example deadline
settings.register_profile("default", deadline=None)
settings.load_profile("default")
