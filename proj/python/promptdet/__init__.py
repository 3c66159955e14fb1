# Copyright 2026 The promptdet Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python access to the promptdet detector core."""

from __future__ import annotations

import json
from typing import Any

from ._promptdet import _Service, assign, generate_corpus, giou, iou

__all__ = ["ApiError", "Detector", "assign", "generate_corpus", "giou", "iou"]


class ApiError(RuntimeError):
    """A request rejected by the service; mirrors the HTTP error body."""

    def __init__(self, status: int, body: dict[str, Any]):
        super().__init__(f"{status} {body.get('code')}: {body.get('message')}")
        self.status = status
        self.code = body.get("code")
        self.field = body.get("field")


def _unwrap(reply: tuple[int, str]) -> Any:
    status, text = reply
    body = json.loads(text) if text else None
    if status >= 400:
        raise ApiError(status, body or {})
    return body


class Detector:
    """In-process equivalent of the HTTP service.

    Pass a checkpoint path, or a model config dict for a randomly
    initialized model.
    """

    def __init__(
        self,
        checkpoint: str | None = None,
        *,
        model_config: dict[str, Any] | None = None,
        seed: int = 0,
        max_sessions: int = 64,
        session_ttl: float = 1800.0,
        library: str | None = None,
    ):
        self._svc = _Service(
            checkpoint or "",
            json.dumps(model_config) if model_config else "",
            seed,
            max_sessions,
            session_ttl,
            library or "",
        )

    @property
    def backbone_forwards(self) -> int:
        return self._svc.backbone_forwards

    def create_session(self, image: bytes) -> dict[str, Any]:
        return _unwrap(self._svc.create_session(image))

    def get_session(self, session_id: str) -> dict[str, Any]:
        return _unwrap(self._svc.get_session(session_id))

    def delete_session(self, session_id: str) -> None:
        _unwrap(self._svc.delete_session(session_id))

    def detect(self, session_id: str, request: dict[str, Any]) -> dict[str, Any]:
        return _unwrap(self._svc.detect(session_id, json.dumps(request)))

    def create_embedding(self, request: dict[str, Any]) -> dict[str, Any]:
        return _unwrap(self._svc.create_embedding(json.dumps(request)))

    def list_embeddings(self) -> list[dict[str, Any]]:
        return _unwrap(self._svc.list_embeddings())["embeddings"]

    def get_embedding(self, label: str) -> dict[str, Any]:
        return _unwrap(self._svc.get_embedding(label))

    def delete_embedding(self, label: str) -> None:
        _unwrap(self._svc.delete_embedding(label))

    def model_info(self) -> dict[str, Any]:
        return _unwrap(self._svc.model_info())
