import math
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

from data.result_store import format_value


class ResultsView:
    """
    Console rendering of run results: a summary line followed by an aligned table.
    """
    def __init__(self, stream: TextIO):
        self.stream = stream

    def _write(self, text: str = "") -> None:
        self.stream.write(text + "\n")

    def show_message(self, text: str) -> None:
        self._write(text)

    def progress(self, current: int, total: int) -> None:
        self.stream.write(f"\r進捗: {current} / {total} セル")
        if current == total:
            self.stream.write("\n")
        self.stream.flush()

    @staticmethod
    def _is_failed(row: Dict[str, Any]) -> bool:
        return str(row.get('termination', '')).startswith('error')

    def summary_text(self, rows: List[Dict[str, Any]]) -> str:
        fail_count = sum(1 for r in rows if self._is_failed(r))
        return f"処理完了: 合計 {len(rows)}件 (成功: {len(rows) - fail_count}件, 失敗: {fail_count}件)"

    def render_grid(self, header: Sequence[str], body: List[Sequence[str]]) -> List[str]:
        widths = [max(len(str(cell)) for cell in column) for column in zip(header, *body)]
        lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for row in body:
            lines.append("  ".join(str(c).rjust(w) for c, w in zip(row, widths)))
        return lines

    def table_lines(self, spec, rows: List[Dict[str, Any]]) -> List[str]:
        """
        One line per (alpha, axis value, seed): the errors, the published value when the
        table has one, and the ratio of the two.
        """
        header = ["alpha", spec.axis, "gamma", "e_q", "published", "ratio", "e_u", "iters", "termination"]
        body = []
        for row in rows:
            published = self._published(spec, row)
            ratio = ""
            if published is not None and not self._is_failed(row) and published > 0:
                ratio = f"{float(row['e_q']) / published:.2f}"
            body.append([
                format_value(row['alpha']), format_value(row[spec.axis]), format_value(row['gamma']),
                format_value(row['e_q']), format_value(published) if published is not None else "",
                ratio, format_value(row['e_u']), format_value(row['iters']), str(row['termination']),
            ])
        return self.render_grid(header, body)

    @staticmethod
    def _published(spec, row: Dict[str, Any]) -> Optional[float]:
        values = spec.published.get(float(row['alpha']))
        if not values:
            return None
        for value, published in zip(spec.values, values):
            if math.isclose(float(value), float(row[spec.axis]), rel_tol=1e-12, abs_tol=1e-15):
                return float(published)
        return None

    def show_table(self, spec, rows: List[Dict[str, Any]]) -> None:
        self._write(f"{spec.name}: {self.summary_text(rows)}")
        for line in self.table_lines(spec, rows):
            self._write(line)

    def show_single(self, row: Dict[str, Any], objective: Optional[float]) -> None:
        self._write(f"設定 {row['config_hash']}: {row['iters']} 回反復 (終了理由: {row['termination']})")
        for key in ("e_q", "e_u", "weighted_err", "delta_realized"):
            self._write(f"  {key:<15}{format_value(row[key])}")
        if objective is not None:
            self._write(f"  {'J':<15}{format_value(objective)}")

    def show_rate(self, report) -> None:
        self._write(self.summary_text(report.rows))
        body = [[format_value(alpha), format_value(s['e_q']), format_value(s['e_u'])]
                for alpha, s in sorted(report.slopes.items())]
        for line in self.render_grid(["alpha", "slope e_q", "slope e_u"], body):
            self._write(line)

    def show_checks(self, checks: List[Tuple[str, bool, str]]) -> None:
        for name, ok, detail in checks:
            self._write(f"[{'成功' if ok else '失敗'}] {name}: {detail}")


if __name__ == '__main__':
    import sys
    from logic.experiment_runner import TableSpec

    spec = TableSpec.from_preset('table1')
    test_rows = [
        {'alpha': 0.5, 'eps': 0.0, 'gamma': 1e-14, 'e_q': 9.1e-3, 'e_u': 2.0e-5, 'iters': 37, 'termination': 'grad_tol'},
        {'alpha': 0.5, 'eps': 1e-2, 'gamma': 5e-13, 'e_q': float('nan'), 'e_u': float('nan'), 'iters': 0,
         'termination': 'error: Sparse factorization failed'},
    ]
    ResultsView(sys.stdout).show_table(spec, test_rows)
