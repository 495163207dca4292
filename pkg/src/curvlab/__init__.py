"""curvlab: geodesic flows on nonpositively curved surfaces, unstable
Riccati solutions, symbolic suspensions, entropy/pressure estimators and a
flat-torus quantum testbed for entropic uncertainty bounds."""

__version__ = "0.1.0"
