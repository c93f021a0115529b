import os
from dotenv import load_dotenv

load_dotenv(override=True)

JUDGE_API_KEY: str = os.getenv("JUDGE_API_KEY", "")
JUDGE_BASE_URL: str = os.getenv("JUDGE_BASE_URL", "https://api.openai.com/v1")
JUDGE_MODEL: str = os.getenv("JUDGE_MODEL", "gpt-4o")
COMPRESSOR_API_KEY: str = os.getenv("COMPRESSOR_API_KEY", "")
COMPRESSOR_BASE_URL: str = os.getenv("COMPRESSOR_BASE_URL", "")
COMPRESSOR_MODEL: str = os.getenv("COMPRESSOR_MODEL", "span-compressor-3b")
HTTP_TIMEOUT: int = int(os.getenv("HTTP_TIMEOUT", "60"))
MAX_CONCURRENCY: int = int(os.getenv("MAX_CONCURRENCY", "4"))
JUDGE_CACHE_DIR: str = os.getenv("JUDGE_CACHE_DIR", ".judge_cache")
LANGFUSE_ENABLED: bool = os.getenv("LANGFUSE_ENABLED", "false").lower() == "true"
LANGFUSE_PUBLIC_KEY: str = os.getenv("LANGFUSE_PUBLIC_KEY", "") if LANGFUSE_ENABLED else ""
LANGFUSE_SECRET_KEY: str = os.getenv("LANGFUSE_SECRET_KEY", "") if LANGFUSE_ENABLED else ""
LANGFUSE_HOST: str = os.getenv("LANGFUSE_HOST", "https://cloud.langfuse.com")
