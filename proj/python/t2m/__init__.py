from t2m._core import *  # noqa: F401,F403
