import pytest
from pydantic import ValidationError

from mixlink_toolbox import Arch, MixedLinkConfig, Position, arch_preset


def test_resnet_preset_spans_the_trunk():
    config = arch_preset("arch1", width=24)
    assert (config.k1, config.k2, config.position) == (24, 0, Position.FIXED)


def test_densenet_preset_has_no_inner_link():
    config = arch_preset(Arch.DENSENET, k2=12)
    assert (config.k1, config.k2) == (0, 12)
    assert config.stem_width() == 24


@pytest.mark.parametrize(
    "which, position",
    [(Arch.DUAL_PATH, Position.FIXED), (Arch.MIXNET, Position.UNFIXED)],
)
def test_mixed_presets(which, position):
    config = arch_preset(which, k1=12, k2=12)
    assert (config.k1, config.k2, config.position) == (12, 12, position)


@pytest.mark.parametrize(
    "which, kwargs",
    [
        ("arch1", {}),
        ("arch2", {"k1": 4}),
        ("arch3", {"k1": 4}),
        ("arch4", {"k1": 0, "k2": 4}),
        ("arch5", {"k1": 4, "k2": 4}),
    ],
)
def test_missing_or_invalid_sizes_raise(which, kwargs):
    with pytest.raises(ValueError):
        arch_preset(which, **kwargs)


def test_config_validation():
    with pytest.raises(ValidationError):
        MixedLinkConfig(k1=0, k2=0)
    with pytest.raises(ValidationError):
        MixedLinkConfig(k1=-1, k2=4)
    config = MixedLinkConfig(k1=4, k2=4)
    with pytest.raises(ValidationError):
        config.k1 = 8
