from typing import TypedDict, List


class ManifestRow(TypedDict):
    id: str
    label: str
    enroll_paths: List[str]
    mix_path: str
    ref_path: str  # 'NULL' for nontarget triplets
    n_spk: int
    sir_db: float
    snr_db: float
    speaker_ids: List[str]


class TrialRow(TypedDict):
    enroll_spk: str
    enroll_utts: List[str]
    test_utt: str
    label: str
    snr_db: float


class ModelManifest(TypedDict, total=False):
    kind: str
    name: str
    in_dim: int
    channels: int
    embedding_dim: int
    encoder_channels: int
    encoder_kernel: int
    encoder_stride: int
    mask_channels: int
    mask_blocks: int
    n_classes: int
    distilled: bool
    stage: str
