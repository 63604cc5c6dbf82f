from __future__ import annotations

"""errors.py

パッケージ共通の例外階層。終了コードへの対応は cli.exit_code_for にある。
"""

from pathlib import Path


class TCFError(Exception):
    """パッケージ内で送出される例外の基底クラス。"""


class NonFiniteError(TCFError, ValueError):
    """NaN / Inf を含むテンソルが渡された。"""

    def __init__(self, name: str, index: tuple[int, ...], value: float):
        self.name = name
        self.index = index
        self.value = value
        super().__init__(f"{name}: 非有限値 {value} を index={index} で検出しました")


class ShapeMismatchError(TCFError, ValueError):
    """形状・次元・語彙 ID 範囲の不一致。"""


class LabelRangeError(TCFError, ValueError):
    """クラス番号が [0, C) の範囲外。"""


class InvalidDistributionError(TCFError, ValueError):
    """確率分布として不正な入力 (負値、総和が 1 でない、長さ不一致)。"""


class ConfigMismatchError(TCFError, ValueError):
    """チェックポイント間・モデル間で設定や解答語彙が一致しない。"""


class TieBreakError(TCFError, ValueError):
    """多数決の同票処理に確率が必要だが与えられていない。"""


class CheckpointFormatError(TCFError, ValueError):
    """チェックポイントファイルのマジック・バージョン・長さが不正。"""


class NonFiniteLossError(TCFError, RuntimeError):
    """学習中に損失が非有限になった。"""

    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"step {step}: 非有限の損失を検出したため学習を中断します ({detail})")


class ArtifactMissingError(TCFError, RuntimeError):
    """必要な入力成果物 (データセット・チェックポイント等) が存在しない。"""

    def __init__(self, artifact: str | Path, what: str = "artifact"):
        self.artifact = str(artifact)
        super().__init__(f"{what} が見つかりません: {artifact}")


class OutputExistsError(TCFError, RuntimeError):
    """出力先が既に存在し、上書きが許可されていない。"""

    def __init__(self, path: str | Path):
        self.path = str(path)
        super().__init__(f"出力先が既に存在します (--overwrite で上書き): {path}")
