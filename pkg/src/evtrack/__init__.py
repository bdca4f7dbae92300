"""Event-camera UAV active tracking: simulator, training stack, and service.

The package is organized around the data path of a tracking episode:

- :mod:`evtrack.dynamics` -- quadrotor rigid-body model and RK4 integrator
- :mod:`evtrack.world` -- target trajectories, procedural scenes, rendering
- :mod:`evtrack.sensors` -- event synthesis, frame stacking, observations
- :mod:`evtrack.env` -- the tracking POMDP (reward shaping, termination)
- :mod:`evtrack.nn` -- numpy autodiff, layers, actor/critic networks
- :mod:`evtrack.sac` -- asymmetric soft actor-critic training loop
- :mod:`evtrack.baseline` -- detection-vector baseline policy and noise sweeps
- :mod:`evtrack.experiments` -- train/eval/sweep/smoke experiment runner
- :mod:`evtrack.service` -- FastAPI job server wrapping the runner
- :mod:`evtrack.cli` -- thin command-line client
"""

__version__ = "0.1.0"
