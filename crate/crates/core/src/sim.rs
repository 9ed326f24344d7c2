//! Simulation (placeholder while the module is built out).
