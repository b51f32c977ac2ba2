"""
Хранилище артефактов запуска: JSON, CSV и манифест внутри out_dir
"""
import csv
import io
import json
import os
from datetime import datetime
from typing import Any, Dict, List, Sequence

import aiofiles

from errors import ValidationError
from utils import SEED_RULE, format_float


class ArtifactStore:
    """Запись и чтение файлов запуска; любой путь обязан лежать внутри out_dir"""

    def __init__(self, out_dir: str = "data/runs"):
        self.out_dir = os.path.abspath(out_dir)
        self.written: List[str] = []

    def _ensure_dir_exists(self, path: str):
        """Создает каталог файла если его нет"""
        os.makedirs(os.path.dirname(path), exist_ok=True)

    def resolve(self, name: str) -> str:
        """Абсолютный путь артефакта; выход за пределы out_dir запрещён"""
        path = os.path.abspath(os.path.join(self.out_dir, name))
        if os.path.commonpath([self.out_dir, path]) != self.out_dir or path == self.out_dir:
            raise ValidationError(f"Artifact path escapes out_dir: {name}")
        return path

    def _record(self, name: str):
        if name not in self.written:
            self.written.append(name)

    async def save_json(self, name: str, data: Any) -> str:
        """Асинхронное сохранение JSON"""
        path = self.resolve(name)
        self._ensure_dir_exists(path)
        async with aiofiles.open(path, 'w', encoding='utf-8') as f:
            await f.write(json.dumps(data, indent=2, ensure_ascii=False))
        self._record(name)
        return path

    async def load_json(self, name: str) -> Dict:
        """Асинхронная загрузка JSON"""
        path = self.resolve(name)
        async with aiofiles.open(path, 'r', encoding='utf-8') as f:
            content = await f.read()
            return json.loads(content) if content else {}

    async def save_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
        """
        Асинхронное сохранение CSV

        float пишутся через format_float (17 значащих цифр), чтобы повторный
        запуск давал побайтно тот же файл.
        """
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])

        path = self.resolve(name)
        self._ensure_dir_exists(path)
        async with aiofiles.open(path, 'w', encoding='utf-8', newline='') as f:
            await f.write(buffer.getvalue())
        self._record(name)
        return path

    async def save_manifest(self, command: str, config: Dict, master_seed: int, version: str) -> str:
        """Манифест: команда, копия конфига, сид, правило сидов, версия, список файлов"""
        manifest = {
            "command": command,
            "config": config,
            "master_seed": master_seed,
            "seed_rule": SEED_RULE,
            "version": version,
            "outputs": list(self.written),
            "created_at": datetime.now().isoformat(),
        }
        return await self.save_json("manifest.json", manifest)


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format_float(value)
    if hasattr(value, "item"):
        return _cell(value.item())
    return str(value)
