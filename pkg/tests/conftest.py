from hypothesis import settings

# fixed example streams keep test_output.txt reproducible
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
