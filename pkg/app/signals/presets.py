"""
Per-dataset channel and sleep-stage presets.

Class indices follow the listed order of ``class_names`` and are persisted in
every dataset manifest.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from app.errors import ConfigError

EXCLUDE = "EXCLUDE"

_PREFIXES = ("sleep stage ", "sleep_stage_", "stage ")


def normalize_label(label):
    """Trim, lower-case and strip the common "Sleep stage" prefix."""
    text = label.strip().lower()
    for prefix in _PREFIXES:
        if text.startswith(prefix):
            return text[len(prefix):].strip()
    return text


@dataclass(frozen=True)
class StageMap:
    """Maps annotation labels to class indices or EXCLUDE."""
    class_names: Tuple[str, ...]
    excluded: Tuple[str, ...] = ()
    aliases: Dict[str, str] = field(default_factory=dict)

    def lookup(self, label) -> Optional[object]:
        """
        Returns:
            int | str | None: class index, EXCLUDE, or None for unknown labels.
        """
        key = normalize_label(label)
        key = normalize_label(self.aliases.get(key, key))
        if key in {normalize_label(x) for x in self.excluded}:
            return EXCLUDE
        for index, name in enumerate(self.class_names):
            if normalize_label(name) == key:
                return index
        return None

    @property
    def n_classes(self):
        return len(self.class_names)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    channel: str
    stage_map: StageMap
    sample_rate_hz: float = 100.0


PRESETS = {
    "EDFX": DatasetPreset(
        name="EDFX",
        channel="EEG Fpz-Cz",
        stage_map=StageMap(
            class_names=("W", "R", "1", "2", "3", "4", "?"),
            excluded=("M",),
            aliases={"movement time": "M"},
        ),
    ),
    "HMC": DatasetPreset(
        name="HMC",
        channel="EEG C3-M2",
        stage_map=StageMap(
            class_names=("W", "N1", "N2", "N3", "R"),
            aliases={"rem": "R"},
        ),
        sample_rate_hz=256.0,
    ),
    "NCH": DatasetPreset(
        name="NCH",
        channel="EEG C3-M2",
        stage_map=StageMap(
            class_names=("W", "N1", "N2", "N3", "R", "?"),
            aliases={"rem": "R", "wake": "W"},
        ),
        sample_rate_hz=256.0,
    ),
}


def get_preset(name, class_names=None, excluded=None, channel=None):
    """
    Resolve a preset by name; ``custom`` requires explicit class names and channel.
    """
    key = name.upper()
    if key == "CUSTOM":
        if not class_names or not channel:
            raise ConfigError("The custom preset needs both class_names and channel")
        return DatasetPreset("custom", channel, StageMap(tuple(class_names), tuple(excluded or ())))
    if key not in PRESETS:
        raise ConfigError(f"Unknown dataset preset {name!r}; choose one of {', '.join(PRESETS)} or custom")
    preset = PRESETS[key]
    if class_names:
        preset = DatasetPreset(preset.name, preset.channel,
                               StageMap(tuple(class_names), tuple(excluded or preset.stage_map.excluded),
                                        preset.stage_map.aliases),
                               preset.sample_rate_hz)
    if channel:
        preset = DatasetPreset(preset.name, channel, preset.stage_map, preset.sample_rate_hz)
    return preset
