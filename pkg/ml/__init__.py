"""ARGUS pipeline: traces, preprocessing, autoencoder, thresholds, detection, simulation, experiments."""
