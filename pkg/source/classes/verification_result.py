from __future__ import annotations

from classes.enums import FusionMode


class VerificationResult:
    def __init__(self, pass1_score: float, pass2_score: float, fusion: FusionMode = FusionMode.MEAN) -> None:
        self.pass1_score: float = float(pass1_score)
        self.pass2_score: float = float(pass2_score)
        self.fusion: FusionMode = fusion

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return (f"{cls_name}(pass1={self.pass1_score:.4f}, pass2={self.pass2_score:.4f}, "
                f"fused={self.fused_score:.4f}, fusion={self.fusion})")

    @property
    def fused_score(self) -> float:
        if self.fusion is FusionMode.PASS1:
            return self.pass1_score
        if self.fusion is FusionMode.PASS2:
            return self.pass2_score
        return (self.pass1_score + self.pass2_score) / 2

    def to_payload(self) -> dict:
        return {
            'pass1': self.pass1_score,
            'pass2': self.pass2_score,
            'fused': self.fused_score,
            'fusion': str(self.fusion),
        }
