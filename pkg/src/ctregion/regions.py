"""Canonical anatomical regions of a chest CT study.

Every per-region structure in the pipeline (mask sets, token sets,
structured reports, prompts) is keyed by these six ids, always in this
order. The ids are part of the on-disk formats and must not change.
"""

# region id -> (slug, display name, report section header)
REGION_TABLE = {
    1: ("lung", "lung", "Lungs:"),
    2: ("large_airways", "large airways", "Large airways:"),
    3: ("mediastinum", "mediastinum", "Mediastinum:"),
    4: ("heart_great_vessels", "heart and great vessels", "Heart and great vessels:"),
    5: ("osseous", "osseous structures", "Osseous structures:"),
    6: ("upper_abdomen", "upper abdomen", "Upper abdomen:"),
}

REGION_IDS = tuple(sorted(REGION_TABLE))
NUM_REGIONS = len(REGION_IDS)

# Name prefixes used to resolve a lesion's region from its manifest name,
# e.g. "lung_nodule" -> region 1. Longest matching alias wins.
REGION_ALIASES = {
    "lung": 1,
    "pulmonary": 1,
    "airway": 2,
    "airways": 2,
    "large_airways": 2,
    "trachea": 2,
    "bronchus": 2,
    "mediastinum": 3,
    "mediastinal": 3,
    "heart": 4,
    "cardiac": 4,
    "vessel": 4,
    "aorta": 4,
    "heart_great_vessels": 4,
    "osseous": 5,
    "bone": 5,
    "rib": 5,
    "spine": 5,
    "vertebral": 5,
    "abdomen": 6,
    "upper_abdomen": 6,
    "abdominal": 6,
    "liver": 6,
    "kidney": 6,
    "renal": 6,
    "hepatic": 6,
    "adrenal": 6,
}

UNSPECIFIED_LOCATION = "unspecified"


def region_slug(region_id: int) -> str:
    return REGION_TABLE[region_id][0]


def region_name(region_id: int) -> str:
    return REGION_TABLE[region_id][1]


def region_header(region_id: int) -> str:
    return REGION_TABLE[region_id][2]


def region_from_prefix(name: str) -> int | None:
    """Resolve a region id from a mask name prefix, or None if unmatched."""
    lowered = name.lower()
    best = None
    best_len = -1
    for alias, rid in REGION_ALIASES.items():
        if (lowered == alias or lowered.startswith(alias + "_")) and len(alias) > best_len:
            best = rid
            best_len = len(alias)
    return best
