"""Command-line entry points: ``tpuimac-simulate``, ``tpuimac-compare``,
``tpuimac-train`` and ``tpuimac-traces``."""
