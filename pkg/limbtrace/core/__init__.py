from limbtrace.core.config import settings

__all__ = ["settings"]
