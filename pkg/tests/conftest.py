from hypothesis import settings

settings.register_profile("equihar", deadline=None)
settings.load_profile("equihar")
