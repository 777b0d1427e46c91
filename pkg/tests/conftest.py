import hypothesis

# Property tests poke exhaustive oracles that can be slow on first run;
# the default 200ms deadline would flag them as flaky rather than wrong.
hypothesis.settings.register_profile("stabcert", deadline=None, max_examples=60)
hypothesis.settings.load_profile("stabcert")
