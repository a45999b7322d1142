"""
Experiment Results Database
1テーブル構造で実験結果 (results.csv) をセッション単位で管理
"""

import argparse
import json
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

# results.csv の列のうちテーブル列として持つもの
INDEXED_COLUMNS = ["row_type", "variant", "ratio", "k", "iterations", "trial", "seed", "accuracy", "ood_as_id_prop"]
REQUIRED_COLUMNS = ["kind", "row_type"]


def _value(v):
    """pandas の欠損値を None に、numpy のスカラーを Python の値に変換"""
    if v is None or (isinstance(v, float) and pd.isna(v)) or v is pd.NA:
        return None
    if hasattr(v, "item"):
        return v.item()
    return v


class ExperimentResultsDB:
    """シンプルな1テーブル構造の実験結果データベース"""

    def __init__(self, db_path: str = None):
        if db_path is None:
            # デフォルトのデータベースパス
            project_root = Path(__file__).parent.parent.parent
            db_path = project_root / "database" / "results.db"

        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self._initialize_database()

    def _initialize_database(self):
        """データベースの初期化"""
        with sqlite3.connect(self.db_path) as conn:
            conn.executescript("""
                CREATE TABLE IF NOT EXISTS experiment_results (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    session_name TEXT NOT NULL,
                    experiment_kind TEXT NOT NULL,
                    filename TEXT,
                    row_type TEXT NOT NULL,
                    variant TEXT,
                    ratio REAL,
                    k INTEGER,
                    iterations INTEGER,
                    trial INTEGER,
                    seed INTEGER,
                    accuracy REAL,
                    ood_as_id_prop REAL,
                    metrics TEXT,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                );

                CREATE INDEX IF NOT EXISTS idx_session_name ON experiment_results(session_name);
                CREATE INDEX IF NOT EXISTS idx_variant ON experiment_results(variant);
            """)

    def import_results_csv(self, csv_path: str, session_name: str, experiment_kind: str = None) -> Dict:
        """results.csv を1セッションとしてインポート (例外は投げずに結果を返す)"""
        csv_path = Path(csv_path)

        if not csv_path.exists():
            return {'success': False, 'error': f'CSV file not found: {csv_path}'}

        try:
            df = pd.read_csv(csv_path)

            # 列名の確認
            missing_columns = [col for col in REQUIRED_COLUMNS if col not in df.columns]
            if missing_columns:
                return {'success': False, 'error': f'Missing columns: {missing_columns}'}

            if self.session_exists(session_name):
                return {'success': False, 'error': f'Session already exists: {session_name}'}

            created_at = datetime.now().isoformat()
            records = []
            for row in df.to_dict(orient='records'):
                record = {c: _value(row.get(c)) for c in INDEXED_COLUMNS}
                # その他の指標は JSON で保持
                extra = {c: _value(v) for c, v in row.items() if c not in INDEXED_COLUMNS and c != 'kind'}
                record.update({
                    'session_name': session_name,
                    'experiment_kind': experiment_kind or _value(row.get('kind')),
                    'filename': csv_path.name,
                    'metrics': json.dumps({k: v for k, v in extra.items() if v is not None}, sort_keys=True),
                    'created_at': created_at,
                })
                records.append(record)

            # データベースに一括挿入
            with sqlite3.connect(self.db_path) as conn:
                conn.executemany("""
                    INSERT INTO experiment_results (
                        session_name, experiment_kind, filename, row_type, variant, ratio, k,
                        iterations, trial, seed, accuracy, ood_as_id_prop, metrics, created_at
                    ) VALUES (
                        :session_name, :experiment_kind, :filename, :row_type, :variant, :ratio, :k,
                        :iterations, :trial, :seed, :accuracy, :ood_as_id_prop, :metrics, :created_at
                    )
                """, records)
                conn.commit()

            return {
                'success': True,
                'rows_imported': len(records),
                'session_name': session_name,
                'filename': csv_path.name
            }

        except Exception as e:
            return {'success': False, 'error': str(e)}

    def session_exists(self, session_name: str) -> bool:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("SELECT 1 FROM experiment_results WHERE session_name = ? LIMIT 1", (session_name,))
            return cursor.fetchone() is not None

    def get_sessions(self) -> List[Dict]:
        """セッション一覧を取得"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("""
                SELECT
                    session_name,
                    experiment_kind,
                    COUNT(*) as row_count,
                    SUM(CASE WHEN row_type = 'seed' THEN 1 ELSE 0 END) as seed_rows,
                    COUNT(DISTINCT variant) as variant_count,
                    MIN(created_at) as created_at,
                    AVG(CASE WHEN row_type = 'seed' THEN accuracy END) as avg_accuracy
                FROM experiment_results
                GROUP BY session_name, experiment_kind
                ORDER BY MIN(created_at) DESC, session_name
            """)

            return [
                {
                    'session_name': row[0],
                    'experiment_kind': row[1],
                    'row_count': row[2],
                    'seed_rows': row[3],
                    'variant_count': row[4],
                    'created_at': row[5],
                    'avg_accuracy': row[6],
                }
                for row in cursor.fetchall()
            ]

    def get_results(self, session_name: str = None, limit: int = 100) -> List[Dict]:
        """実験結果を取得 (metrics は辞書に展開)"""
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row

            if session_name:
                cursor = conn.execute("""
                    SELECT * FROM experiment_results
                    WHERE session_name = ?
                    ORDER BY id
                    LIMIT ?
                """, (session_name, limit))
            else:
                cursor = conn.execute("""
                    SELECT * FROM experiment_results
                    ORDER BY id DESC
                    LIMIT ?
                """, (limit,))

            results = []
            for row in cursor.fetchall():
                record = dict(row)
                record['metrics'] = json.loads(record['metrics'] or '{}')
                results.append(record)

            return results

    def get_statistics(self) -> Dict:
        """統計情報を取得"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()

            # 基本統計
            cursor.execute("""
                SELECT
                    COUNT(DISTINCT session_name) as session_count,
                    COUNT(*) as row_count,
                    COUNT(DISTINCT experiment_kind) as kind_count
                FROM experiment_results
            """)
            stats = cursor.fetchone()

            # 手法ごとの平均精度 (seed 行のみ)
            cursor.execute("""
                SELECT
                    variant,
                    COUNT(*) as run_count,
                    AVG(accuracy) as avg_accuracy
                FROM experiment_results
                WHERE row_type = 'seed' AND variant IS NOT NULL AND accuracy IS NOT NULL
                GROUP BY variant
                ORDER BY AVG(accuracy) DESC, variant
            """)
            variants = [
                {'variant': row[0], 'run_count': row[1], 'avg_accuracy': row[2]}
                for row in cursor.fetchall()
            ]

            return {
                'session_count': stats[0] or 0,
                'row_count': stats[1] or 0,
                'kind_count': stats[2] or 0,
                'variants': variants
            }

    def export_to_csv(self, output_path: str, session_name: str = None) -> bool:
        """実験結果をCSVにエクスポート"""
        try:
            with sqlite3.connect(self.db_path) as conn:
                query = """
                    SELECT session_name, experiment_kind, row_type, variant, ratio, k, iterations,
                           trial, seed, accuracy, ood_as_id_prop, metrics
                    FROM experiment_results
                """
                if session_name:
                    df = pd.read_sql_query(query + " WHERE session_name = ? ORDER BY id", conn, params=(session_name,))
                else:
                    df = pd.read_sql_query(query + " ORDER BY id", conn)

            df.to_csv(output_path, index=False, encoding='utf-8-sig')
            return True

        except Exception as e:
            print(f"CSV export error: {e}")
            return False

    def delete_session(self, session_name: str) -> bool:
        """セッションを削除"""
        try:
            with sqlite3.connect(self.db_path) as conn:
                cursor = conn.cursor()
                cursor.execute("DELETE FROM experiment_results WHERE session_name = ?", (session_name,))
                deleted_count = cursor.rowcount
                conn.commit()
                return deleted_count > 0
        except Exception as e:
            print(f"Delete session error: {e}")
            return False


def main(argv: Optional[List[str]] = None):
    """データベースの内容を表示"""
    parser = argparse.ArgumentParser(description="Experiment results database viewer")
    parser.add_argument("--db", default=None, help="Path to the sqlite database.")
    parser.add_argument("--session", default=None, help="Show the rows of this session.")
    parser.add_argument("--limit", type=int, default=20, help="Maximum number of rows to show.")
    parser.add_argument("--export", default=None, help="Export rows (of --session) to this CSV file.")
    parser.add_argument("--delete", default=None, help="Delete this session.")
    args = parser.parse_args(argv)

    db = ExperimentResultsDB(args.db)

    if args.delete:
        print("[INFO] 削除しました" if db.delete_session(args.delete) else "[WARN] セッションがありません")
        return 0

    if args.export:
        return 0 if db.export_to_csv(args.export, args.session) else 1

    if args.session:
        print(pd.DataFrame(db.get_results(args.session, args.limit)).to_string())
        return 0

    stats = db.get_statistics()
    print(f"Sessions: {stats['session_count']}")
    print(f"Rows: {stats['row_count']}")
    for v in stats['variants']:
        print(f"  {v['variant']}: {v['avg_accuracy']:.4f} ({v['run_count']} runs)")

    print("\n[INFO] セッション一覧:")
    for s in db.get_sessions():
        print(f"  {s['session_name']} [{s['experiment_kind']}] rows={s['row_count']}")

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
