"""Event-camera predator/prey stack.

Modules:
    events    sensor streams, noise filter, histogram frames
    net       tiny CNN on raw numpy with training and saliency
    steering  class scores to analog prey position and drive decisions
    control   finite-state pursuit over a repulsive laser field
    sim       2D arena, robots, laser, camera, DVS synthesis
    loop      data-driven closed-loop episode runner
    dataset   synthetic labeled frame generation
    server    JSON-over-WebSocket teleoperation and telemetry
    cli       command-line entry points
"""

__version__ = "0.1.0"
