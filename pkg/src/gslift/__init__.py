"""gslift: lift 2D video motion into 3D and animate Gaussian-splat scenes.

The pipeline turns 2D point tracks, per-frame depth maps and optical flow
(all supplied as files by external producers) into world-space anchor
trajectories, transfers that motion onto the Gaussians of a static scene,
and scores the result with a set of motion metrics.

Subpackages / modules:
    scene      Gaussian-splat scene I/O, bounding-box selection, deformation
    camera     pinhole projection / unprojection, spherical view sampling
    tracklift  track correction, depth fill/alignment, 2D-to-3D lifting
    deform     anchor-driven motion transfer (linear blend or weighted rigid)
    guidance   latent blending, schedules, flow composition and warping
    metrics    displacement / rigidity / momentum / isometry / CLIP scores
    synth      synthetic ground-truth scene generator used for verification
    cli        command-line pipeline driver
"""

__version__ = "0.1.0"
