"""Shared fixtures: small synthetic scenario bundles reused across model tests."""

import pytest

from flowuq import (
    make_blob_config,
    partition_scenario,
    standardize_bundle,
    synth_generate,
)


@pytest.fixture(scope="session")
def blob_bundle():
    """Cleanly separated 4-known / 1-unknown blob scenario (raw features)."""
    config = make_blob_config(
        n_known=4,
        n_unknown=1,
        samples_per_class=300,
        dim=6,
        known_radius=6.0,
        unknown_distance=20.0,
        seed=11,
    )
    dataset = synth_generate(config, seed=11)
    return partition_scenario(dataset, config.unknown_names(), seed=11)


@pytest.fixture(scope="session")
def std_bundle(blob_bundle):
    """The same scenario standardized with training-set statistics."""
    bundle, _ = standardize_bundle(blob_bundle)
    return bundle
