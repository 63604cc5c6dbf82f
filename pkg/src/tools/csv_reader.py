from typing import List

import pandas as pd


def csv_frame_reader(file_paths: List[str]) -> pd.DataFrame:
    """複数のCSVを縦に連結した DataFrame を返す (予測ダンプの結合用)。"""
    frames = [pd.read_csv(p, dtype={"model_id": str}) for p in file_paths]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
