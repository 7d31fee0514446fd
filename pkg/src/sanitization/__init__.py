# Entity sanitization: canonical dedup, encyclopedic filtering, semantic dedup and commit.
