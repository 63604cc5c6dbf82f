import os
from typing import List, Dict

import pandas as pd


def csv_writer(data: List[Dict], output_path: str, columns: List[str] | None = None) -> str:
    """リスト形式のデータをCSVとして書き出す。戻り値は生成されたファイルのパス。"""
    os.makedirs(os.path.dirname(output_path) or ".", exist_ok=True)
    if not data:
        # 空データの場合は列名だけのファイルを生成
        pd.DataFrame(columns=columns or []).to_csv(output_path, index=False, encoding="utf-8")
        return output_path

    df = pd.DataFrame(data, columns=columns)
    df.to_csv(output_path, index=False, encoding="utf-8", float_format="%.9g")
    return output_path
