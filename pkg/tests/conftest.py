import hypothesis

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=100, print_blob=True
)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=20)
hypothesis.settings.load_profile("default")
